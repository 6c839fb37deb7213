"""Exchange refinement stage.

Each iteration solves transport once on the current selection, estimates the
marginal improvement (MI) of every candidate from the duals alone, prunes to
the most promising removal/addition candidates, and verifies exchanges with
exact solves, committing the first strict improvement.

The estimator evaluates F(y | z, S) = y/|S| + mean_j min(K_j - y, 0) with
knots K_j = M(z, j) - f_j, where f_j = min_{i in S, i != z} (M(i, j) - u*_i).
F is concave piecewise-linear in y; its slope 1/|S| - |{j: K_j < y}|/n_cols
turns nonpositive once y passes the R-th smallest knot, R = ceil(n_cols/|S|),
so that knot maximizes F.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost import matrix_entries
from .greedy import CoresetState
from .transport import solve_ot_on_subset

# An exchange is accepted only when it clears this relative margin,
# preventing float-noise cycling.
ACCEPT_RTOL = 1e-12

DEFAULT_PRUNE_K = 10
DEFAULT_MAX_ITERATIONS = 200


@dataclass(frozen=True)
class MiEstimate:
    """Dual-based estimate of one candidate's marginal improvement."""

    candidate: int
    direction: str  # "add" (z not in S) or "remove" (z in S)
    value: float
    y_hat: float


@dataclass(frozen=True)
class ExchangeRecord:
    """One accepted exchange; only score-decreasing exchanges are recorded."""

    removed: int
    added: int
    score_before: float
    score_after: float
    candidates_tested: int


def knot_rank(n_cols: int, n_selected: int) -> int:
    """R = ceil(n_cols / n_selected): order statistic picked as y_hat."""
    if n_cols < 1 or n_selected < 1:
        raise ValueError("sizes must be positive")
    return -(-n_cols // n_selected)


def f_values(M, S, u_star, z: int) -> np.ndarray:
    """Per-column reduced minima f_j = min_{i in S, i != z} (M(i,j) - u*_i).

    ``u_star`` aligns positionally with ``S``.  For z outside S the minimum
    runs over all of S and is independent of z.
    """
    entries = matrix_entries(M)
    S_arr = np.asarray(list(S), dtype=np.int64)
    u = np.asarray(u_star, dtype=np.float64)
    if S_arr.size != u.size:
        raise ValueError(f"{u.size} duals for {S_arr.size} selected rows")
    if S_arr.size == 0:
        raise ValueError("selection must be non-empty")
    A = entries[S_arr] - u[:, None]
    member = np.flatnonzero(S_arr == int(z))
    if member.size:
        if S_arr.size == 1:
            raise ValueError("cannot exclude the only selected row")
        A = np.delete(A, member[0], axis=0)
    return A.min(axis=0)


def _estimate_from_knots(knots: np.ndarray, n_selected: int) -> tuple[float, float]:
    R = knot_rank(knots.shape[-1], n_selected)
    y_hat = float(np.partition(knots, R - 1)[R - 1])
    value = y_hat / n_selected + float(np.minimum(knots - y_hat, 0.0).mean())
    return value, y_hat


def estimate_mi(M, S, u_star, z: int) -> MiEstimate:
    """MI estimate for one candidate from the current duals (no OT solve)."""
    entries = matrix_entries(M)
    z = int(z)
    S_list = [int(i) for i in S]
    knots = entries[z] - f_values(M, S_list, u_star, z)
    value, y_hat = _estimate_from_knots(knots, len(S_list))
    direction = "remove" if z in S_list else "add"
    return MiEstimate(candidate=z, direction=direction, value=value, y_hat=y_hat)


def estimate_all(M, S, u_star) -> list[MiEstimate]:
    """MI estimates for every row of M at once.

    Equivalent to calling ``estimate_mi`` per candidate; the removal minima
    are obtained from the per-column two smallest values of the reduced
    matrix, so the whole sweep costs O((|S| + n_rows) * n_cols).
    """
    entries = matrix_entries(M)
    n_rows, n_cols = entries.shape
    S_arr = np.asarray(list(S), dtype=np.int64)
    u = np.asarray(u_star, dtype=np.float64)
    s = S_arr.size
    if s < 2:
        raise ValueError("estimates over members need at least two selected rows")
    if u.size != s:
        raise ValueError(f"{u.size} duals for {s} selected rows")

    A = entries[S_arr] - u[:, None]
    min1 = A.min(axis=0)
    arg1 = A.argmin(axis=0)
    masked = A.copy()
    masked[arg1, np.arange(n_cols)] = np.inf
    min2 = masked.min(axis=0)

    R = knot_rank(n_cols, s)
    # Additions: f is the plain column minimum, shared by all candidates.
    K_add = entries - min1[None, :]
    y_add = np.partition(K_add, R - 1, axis=1)[:, R - 1]
    val_add = y_add / s + np.minimum(K_add - y_add[:, None], 0.0).mean(axis=1)
    # Removals: excluding member p leaves min2 where p held the minimum.
    leave_out = np.where(arg1[None, :] == np.arange(s)[:, None], min2[None, :], min1[None, :])
    K_rem = entries[S_arr] - leave_out
    y_rem = np.partition(K_rem, R - 1, axis=1)[:, R - 1]
    val_rem = y_rem / s + np.minimum(K_rem - y_rem[:, None], 0.0).mean(axis=1)

    pos = np.full(n_rows, -1, dtype=np.int64)
    pos[S_arr] = np.arange(s)
    out = []
    for z in range(n_rows):
        p = pos[z]
        if p >= 0:
            out.append(MiEstimate(z, "remove", float(val_rem[p]), float(y_rem[p])))
        else:
            out.append(MiEstimate(z, "add", float(val_add[z]), float(y_add[z])))
    return out


def exact_mi(M, S, z: int) -> float:
    """Ground-truth marginal improvement via two exact transport solves.

    Addition (z not in S): score(S + {z}) - score(S).
    Removal  (z in S):     score(S) - score(S - {z}).
    """
    entries = matrix_entries(M)
    z = int(z)
    S_set = {int(i) for i in S}
    base = solve_ot_on_subset(entries, sorted(S_set)).objective
    if z in S_set:
        if len(S_set) < 2:
            raise ValueError("cannot remove from a singleton selection")
        other = solve_ot_on_subset(entries, sorted(S_set - {z})).objective
        return float(base - other)
    other = solve_ot_on_subset(entries, sorted(S_set | {z})).objective
    return float(other - base)


def prune(estimates, k: int) -> tuple[list[int], list[int]]:
    """Keep the k most promising candidates on each side.

    inner: members with the largest MI (cheapest to drop); outer:
    non-members with the smallest MI (best to add).  Ties go to the lowest
    index; k is clamped to each population size.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    members = [e for e in estimates if e.direction == "remove"]
    outsiders = [e for e in estimates if e.direction == "add"]
    members.sort(key=lambda e: (-e.value, e.candidate))
    outsiders.sort(key=lambda e: (e.value, e.candidate))
    return [e.candidate for e in members[:k]], [e.candidate for e in outsiders[:k]]


def refine_loop(M, initial: CoresetState, k: int = DEFAULT_PRUNE_K,
                t_max: int = DEFAULT_MAX_ITERATIONS) -> tuple[CoresetState, list[ExchangeRecord]]:
    """Iterate verified exchanges until no pruned pair improves or t_max.

    Candidate pairs (remove i, add o) are scanned in ascending
    estimate(o) - estimate(i), most promising first; the first pair whose
    exact score beats the current one by the strictness margin is committed.
    The committed verification solve doubles as the next iteration's scoring
    solve.
    """
    entries = matrix_entries(M)
    if t_max < 0:
        raise ValueError(f"t_max must be nonnegative, got {t_max}")
    if len(initial.selected) < 2:
        raise ValueError("refinement needs at least two selected rows")
    state = initial.copy()
    records: list[ExchangeRecord] = []

    score = state.poo_score
    duals = state.duals
    if duals is not None and len(duals) != len(state.selected):
        score, duals = None, None

    for _ in range(t_max):
        S_sorted = sorted(state.selected)
        if score is None or duals is None:
            sol = solve_ot_on_subset(entries, S_sorted)
            score, duals = sol.objective, sol.dual_u
            state.poo_score, state.duals = score, duals

        estimates = estimate_all(M, S_sorted, duals)
        value_of = {e.candidate: e.value for e in estimates}
        inner, outer = prune(estimates, k)
        pairs = sorted(
            ((value_of[o] - value_of[i], i, o) for i in inner for o in outer)
        )
        margin = ACCEPT_RTOL * (1.0 + abs(score))

        accepted = None
        tested = 0
        for _, i, o in pairs:
            tested += 1
            candidate = sorted(set(S_sorted) - {i} | {o})
            sol_new = solve_ot_on_subset(entries, candidate)
            if sol_new.objective < score - margin:
                accepted = (i, o, sol_new)
                break
        if accepted is None:
            break

        i, o, sol_new = accepted
        records.append(ExchangeRecord(
            removed=i, added=o, score_before=float(score),
            score_after=float(sol_new.objective), candidates_tested=tested,
        ))
        state.selected.remove(i)
        state.selected.append(o)
        new_rows = entries[np.asarray(sorted(state.selected), dtype=np.int64)]
        state.col_mins = new_rows.min(axis=0)
        state.relaxed_score = float(state.col_mins.mean())
        score, duals = sol_new.objective, sol_new.dual_u
        state.poo_score, state.duals = score, duals
    return state, records
