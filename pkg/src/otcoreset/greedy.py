"""Greedy initialization stage.

Minimizes the relaxed selection objective: with column minima taken over the
chosen rows, the relaxed score is mean_j min_{i in S} M(i, j).  Adding row z
changes the score by gain(z | S) / n_cols, where
gain(z | S) = sum_j min(M(z, j) - colmin(j), 0) <= 0.
The greedy loop adds the row with the smallest gain each step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cost import matrix_entries


@dataclass
class CoresetState:
    """Selection state shared by the greedy and refinement stages.

    ``selected`` keeps insertion order; ``col_mins`` caches the per-column
    minimum over selected rows (+inf sentinel while empty); ``duals`` (when
    present) align with ``sorted(selected)``.  ``trajectory`` records
    (step, relaxed_score) for each greedy addition and ``picks`` the
    (index, gain) actually chosen.
    """

    selected: list[int]
    col_mins: np.ndarray
    relaxed_score: float | None = None
    poo_score: float | None = None
    duals: np.ndarray | None = None
    trajectory: list[tuple[int, float]] = field(default_factory=list)
    picks: list[tuple[int, float]] = field(default_factory=list)

    def copy(self) -> "CoresetState":
        return CoresetState(
            selected=list(self.selected),
            col_mins=self.col_mins.copy(),
            relaxed_score=self.relaxed_score,
            poo_score=self.poo_score,
            duals=None if self.duals is None else np.array(self.duals),
            trajectory=list(self.trajectory),
            picks=list(self.picks),
        )


def empty_state(M) -> CoresetState:
    entries = matrix_entries(M)
    return CoresetState(selected=[], col_mins=np.full(entries.shape[1], np.inf))


def state_from_subset(M, subset) -> CoresetState:
    """State for an externally chosen subset (no trajectory)."""
    entries = matrix_entries(M)
    selected = [int(i) for i in subset]
    if not selected:
        return empty_state(M)
    if len(set(selected)) != len(selected):
        raise ValueError("subset contains duplicate indices")
    rows = entries[np.asarray(selected, dtype=np.int64)]
    col_mins = rows.min(axis=0)
    return CoresetState(
        selected=selected,
        col_mins=col_mins,
        relaxed_score=float(col_mins.mean()),
    )


def gain(M, state: CoresetState, z: int) -> float:
    """Change of the unnormalized relaxed objective from adding row z.

    Nonpositive for non-empty selections; for an empty selection the
    convention is the plain row sum, making the first greedy pick the row
    with the smallest sum (the single-row relaxed optimum).
    """
    entries = matrix_entries(M)
    z = int(z)
    if not 0 <= z < entries.shape[0]:
        raise ValueError(f"candidate {z} out of range 0..{entries.shape[0] - 1}")
    if z in state.selected:
        raise ValueError(f"candidate {z} is already selected")
    if not state.selected:
        return float(entries[z].sum())
    return float(np.minimum(entries[z] - state.col_mins, 0.0).sum())


def add_point(M, state: CoresetState, z: int, gain_value: float | None = None) -> None:
    """Commit one greedy addition, maintaining caches and the trajectory."""
    entries = matrix_entries(M)
    state.col_mins = np.minimum(state.col_mins, entries[z])
    state.selected.append(int(z))
    state.relaxed_score = float(state.col_mins.mean())
    state.poo_score = None
    state.duals = None
    state.trajectory.append((len(state.selected) - 1, state.relaxed_score))
    if gain_value is not None:
        state.picks.append((int(z), float(gain_value)))


def greedy_select(M, budget: int) -> CoresetState:
    """Grow a selection to ``budget`` rows, each step taking the row with
    the smallest gain (ties to the lowest index).  One full candidate pass
    per step."""
    entries = matrix_entries(M)
    n_rows = entries.shape[0]
    if not 1 <= budget <= n_rows:
        raise ValueError(f"budget must be in 1..{n_rows}, got {budget}")
    state = empty_state(M)
    taken = np.zeros(n_rows, dtype=bool)
    for _ in range(budget):
        if state.selected:
            gains = np.minimum(entries - state.col_mins[None, :], 0.0).sum(axis=1)
        else:
            gains = entries.sum(axis=1)
        z = int(np.argmin(np.where(taken, np.inf, gains)))
        add_point(M, state, z, gain_value=float(gains[z]))
        taken[z] = True
    return state


def relaxed_score(M, subset) -> float:
    """Closed form of the relaxed objective: mean of column minima over S."""
    entries = matrix_entries(M)
    idx = np.asarray(list(subset), dtype=np.int64)
    if idx.size == 0:
        raise ValueError("subset must be non-empty")
    if idx.min() < 0 or idx.max() >= entries.shape[0]:
        raise ValueError(f"subset index out of range 0..{entries.shape[0] - 1}")
    return float(entries[idx].min(axis=0).mean())
