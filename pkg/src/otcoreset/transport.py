"""Exact discrete optimal transport via the transportation simplex.

Solves  min <pi, C>  over couplings pi with row sums p and column sums q,
returning the optimal objective, a sparse optimal plan, and optimal dual
variables (u, v) satisfying u_i + v_j <= C_ij.  Costs may be negative.

Every solve is certified: primal feasibility, dual feasibility, and strong
duality are checked before a solution is returned (see ``verify_solution``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Absolute tolerance on marginal feasibility and dual feasibility.
FEASIBILITY_ATOL = 1e-9
# Relative tolerance on the primal-dual gap.
DUALITY_GAP_RTOL = 1e-9
# Input masses are renormalized exactly when within this distance of 1.
MASS_SUM_ATOL = 1e-12

# Dual gauge convention: duals are shifted so that the sum of u over the
# rows carrying positive mass is zero.
DUAL_GAUGE = "u-mean-zero-on-support"


class MarginalError(ValueError):
    """Invalid mass vectors: negative entries, bad sums, empty support."""


class CertificateError(RuntimeError):
    """A computed solution failed its primal-dual optimality certificate."""


@dataclass(frozen=True)
class Marginals:
    """Row and column mass vectors of a transportation instance."""

    p: np.ndarray
    q: np.ndarray

    @classmethod
    def uniform(cls, m: int, n: int) -> "Marginals":
        return cls(np.full(m, 1.0 / m), np.full(n, 1.0 / n))

    def validated(self) -> "Marginals":
        """Check invariants and renormalize both vectors to sum exactly 1."""
        p = np.asarray(self.p, dtype=np.float64)
        q = np.asarray(self.q, dtype=np.float64)
        if p.ndim != 1 or q.ndim != 1:
            raise MarginalError("mass vectors must be one-dimensional")
        if p.size == 0 or q.size == 0:
            raise MarginalError("empty support: no atoms")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise MarginalError("mass vectors must be finite")
        if np.any(p < 0) or np.any(q < 0):
            raise MarginalError("mass vectors must be nonnegative")
        sp, sq = float(p.sum()), float(q.sum())
        if sp <= 0 or sq <= 0:
            raise MarginalError("empty support: masses sum to zero")
        if abs(sp - 1.0) > MASS_SUM_ATOL or abs(sq - 1.0) > MASS_SUM_ATOL:
            raise MarginalError(
                f"masses must each sum to 1 within {MASS_SUM_ATOL:g} "
                f"(got {sp!r} and {sq!r})"
            )
        return Marginals(p / sp, q / sq)


@dataclass(frozen=True)
class TransportSolution:
    """Certified optimum of one transportation instance.

    ``plan`` lists (row, col, mass) over the support of an optimal coupling;
    its size never exceeds rows + cols - 1.  ``dual_u``/``dual_v`` are
    feasible optimal duals under the gauge named by ``normalization``.
    """

    objective: float
    plan: list[tuple[int, int, float]]
    dual_u: np.ndarray
    dual_v: np.ndarray
    normalization: str = DUAL_GAUGE


class _Basis:
    """Spanning-tree basis of the transportation simplex.

    Nodes 0..m-1 are rows, m..m+n-1 are columns; exactly m+n-1 arcs, each a
    cell (row, col).  Adjacency is maintained incrementally across pivots.
    """

    def __init__(self, rows, cols, flow, m, n):
        self.rows = rows
        self.cols = cols
        self.flow = flow
        self.m = m
        self.n = n
        self.adj: list[list[tuple[int, int]]] = [[] for _ in range(m + n)]
        for a in range(rows.size):
            self._link(a)

    def _link(self, arc: int) -> None:
        i = int(self.rows[arc])
        j = self.m + int(self.cols[arc])
        self.adj[i].append((j, arc))
        self.adj[j].append((i, arc))

    def _unlink(self, arc: int) -> None:
        i = int(self.rows[arc])
        j = self.m + int(self.cols[arc])
        self.adj[i].remove((j, arc))
        self.adj[j].remove((i, arc))

    def replace(self, arc: int, row: int, col: int, flow: float) -> None:
        """Swap the leaving arc's cell for the entering cell, reusing the slot."""
        self._unlink(arc)
        self.rows[arc] = row
        self.cols[arc] = col
        self.flow[arc] = flow
        self._link(arc)

    def scan(self, cost: np.ndarray):
        """One depth-first pass from row node 0.

        Returns duals (u, v) solving u_i + v_j = C_ij on every basic arc
        (gauge u_0 = 0) plus parent pointers for tree-path queries.
        """
        m, n = self.m, self.n
        total = m + n
        u = np.zeros(m)
        v = np.zeros(n)
        parent = np.full(total, -1, dtype=np.int64)
        parent_arc = np.full(total, -1, dtype=np.int64)
        parent[0] = 0
        stack = [0]
        reached = 0
        while stack:
            node = stack.pop()
            reached += 1
            for nbr, arc in self.adj[node]:
                if parent[nbr] != -1:
                    continue
                i = int(self.rows[arc])
                j = int(self.cols[arc])
                if nbr >= m:
                    v[j] = cost[i, j] - u[i]
                else:
                    u[i] = cost[i, j] - v[j]
                parent[nbr] = node
                parent_arc[nbr] = arc
                stack.append(nbr)
        if reached != total:
            raise CertificateError("basis does not span the bipartite node set")
        return u, v, parent, parent_arc

    def path(self, parent, parent_arc, start: int, goal: int) -> list[int]:
        """Arc ids along the unique tree path start -> goal, in walk order."""
        pos = {}
        chain = [start]
        node = start
        while node != parent[node]:
            pos[node] = len(chain) - 1
            node = int(parent[node])
            chain.append(node)
        pos[node] = len(chain) - 1

        tail: list[int] = []
        node = goal
        while node not in pos:
            tail.append(int(parent_arc[node]))
            node = int(parent[node])
        junction = pos[node]
        head = [int(parent_arc[chain[t]]) for t in range(junction)]
        tail.reverse()
        return head + tail


def _northwest_corner(p: np.ndarray, q: np.ndarray) -> _Basis:
    """Deterministic initial basic feasible solution with m+n-1 arcs."""
    m, n = p.size, q.size
    a = p.copy()
    b = q.copy()
    rows = np.empty(m + n - 1, dtype=np.int64)
    cols = np.empty(m + n - 1, dtype=np.int64)
    flow = np.empty(m + n - 1, dtype=np.float64)
    i = j = 0
    for k in range(m + n - 1):
        if k == m + n - 2:
            # Last cell absorbs rounding residue of the running subtraction.
            x = max(float(a[i]), float(b[j]), 0.0)
        else:
            x = max(min(float(a[i]), float(b[j])), 0.0)
        rows[k], cols[k], flow[k] = i, j, x
        a[i] -= x
        b[j] -= x
        if a[i] <= b[j] and i < m - 1:
            i += 1
        elif j < n - 1:
            j += 1
        else:
            i += 1
    return _Basis(rows=rows, cols=cols, flow=flow, m=m, n=n)


def _solve_dense(cost: np.ndarray, p: np.ndarray, q: np.ndarray):
    """Transportation simplex on an instance with strictly positive masses.

    Entering rule: most negative reduced cost, ties broken row-major (lowest
    flattened index).  After a long streak of degenerate pivots the rule
    switches to Bland's (first negative cell in row-major order), which
    excludes cycling; any mass-moving pivot switches back.
    Leaving rule: minimum flow among the cycle's draining arcs, ties broken
    by lexicographically smallest (row, col).
    Returns (basis, u, v) at optimality.
    """
    m, n = cost.shape
    basis = _northwest_corner(p, q)
    enter_tol = 1e-11 * (1.0 + float(np.abs(cost).max(initial=0.0)))
    bland = False
    degenerate_streak = 0
    bland_after = 4 * (m + n)
    max_pivots = 2000 * (m + n) + 200 * m * n + 10_000

    for _ in range(max_pivots):
        u, v, parent, parent_arc = basis.scan(cost)
        reduced = cost - u[:, None] - v[None, :]
        reduced[basis.rows, basis.cols] = np.inf
        flat_view = reduced.ravel()
        if bland:
            negative = flat_view < -enter_tol
            if not negative.any():
                return basis, u, v
            flat = int(np.argmax(negative))
        else:
            flat = int(np.argmin(flat_view))
            if not (flat_view[flat] < -enter_tol):
                return basis, u, v
        ei, ej = divmod(flat, n)

        # The entering cell closes one cycle with the tree path from row
        # node ei to column node m+ej.  Walking that path from ei, arcs
        # alternate -theta, +theta, ... so mass stays balanced everywhere.
        cycle = basis.path(parent, parent_arc, ei, basis.m + ej)
        minus_arcs = cycle[0::2]
        plus_arcs = cycle[1::2]
        theta_min = min(float(basis.flow[a]) for a in minus_arcs)
        leaving = -1
        leave_key = None
        for arc in minus_arcs:
            if basis.flow[arc] <= theta_min + 1e-15:
                key = (int(basis.rows[arc]), int(basis.cols[arc]))
                if leave_key is None or key < leave_key:
                    leaving = arc
                    leave_key = key
        theta = float(basis.flow[leaving])

        for arc in minus_arcs:
            basis.flow[arc] = max(basis.flow[arc] - theta, 0.0)
        for arc in plus_arcs:
            basis.flow[arc] += theta
        basis.replace(leaving, ei, ej, theta)

        if theta <= 1e-15:
            degenerate_streak += 1
            if degenerate_streak >= bland_after:
                bland = True
        else:
            degenerate_streak = 0
            bland = False
    raise CertificateError("transportation simplex exceeded its pivot limit")


def verify_solution(
    cost: np.ndarray,
    marginals: Marginals,
    solution: TransportSolution,
    atol: float = FEASIBILITY_ATOL,
    gap_rtol: float = DUALITY_GAP_RTOL,
) -> dict[str, float]:
    """Primal-dual certificate; raises ``CertificateError`` on any violation.

    Checks plan nonnegativity, marginal feasibility, dual feasibility
    (u + v <= C elementwise), strong duality, and the support-size bound.
    Returns the measured residuals for logging.
    """
    cost = np.asarray(cost, dtype=np.float64)
    m, n = cost.shape
    p, q = marginals.p, marginals.q
    row_sums = np.zeros(m)
    col_sums = np.zeros(n)
    plan_obj = 0.0
    for i, j, mass in solution.plan:
        if mass < -atol:
            raise CertificateError(f"negative plan mass at ({i},{j}): {mass!r}")
        row_sums[i] += mass
        col_sums[j] += mass
        plan_obj += mass * cost[i, j]
    primal_residual = max(
        float(np.abs(row_sums - p).max(initial=0.0)),
        float(np.abs(col_sums - q).max(initial=0.0)),
    )
    dual_violation = float(
        (solution.dual_u[:, None] + solution.dual_v[None, :] - cost).max()
    )
    dual_obj = float(p @ solution.dual_u + q @ solution.dual_v)
    gap = abs(solution.objective - dual_obj)
    gap_limit = gap_rtol * (1.0 + abs(solution.objective))
    residuals = {
        "primal": primal_residual,
        "dual": dual_violation,
        "gap": gap,
        "plan_vs_objective": abs(plan_obj - solution.objective),
        "support": float(len(solution.plan)),
    }
    if primal_residual > atol:
        raise CertificateError(
            f"plan infeasible: marginal residual {primal_residual:g}"
        )
    if dual_violation > atol:
        raise CertificateError(
            f"duals infeasible: u+v exceeds cost by {dual_violation:g}"
        )
    if gap > gap_limit:
        raise CertificateError(f"duality gap {gap:g} exceeds {gap_limit:g}")
    if len(solution.plan) > m + n - 1:
        raise CertificateError(
            f"plan support {len(solution.plan)} exceeds {m + n - 1}"
        )
    return residuals


def solve_ot(cost: np.ndarray, marginals: Marginals, check: bool = True) -> TransportSolution:
    """Exactly solve min <pi, C> subject to row masses p and column masses q.

    Zero-mass rows/columns are stripped before pivoting (they carry no mass
    in any feasible plan) and receive the tightest feasible dual extension
    afterwards, so a solve costs O(|support(p)| x |support(q)|) per pivot.
    Deterministic for fixed input.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    marg = marginals.validated()
    m, n = cost.shape
    if marg.p.size != m or marg.q.size != n:
        raise MarginalError(
            f"marginal sizes {marg.p.size}x{marg.q.size} do not match cost {m}x{n}"
        )

    keep_r = np.flatnonzero(marg.p > 0.0)
    keep_c = np.flatnonzero(marg.q > 0.0)
    sub = np.ascontiguousarray(cost[np.ix_(keep_r, keep_c)])
    basis, u_sub, v_sub = _solve_dense(sub, marg.p[keep_r], marg.q[keep_c])

    # Gauge: mean-zero u over the mass-carrying rows.
    shift = float(u_sub.mean())
    u_sub = u_sub - shift
    v_sub = v_sub + shift

    objective = float(np.dot(basis.flow, sub[basis.rows, basis.cols]))

    # Extend duals feasibly to stripped atoms: columns first (tightest value
    # over kept rows), then rows against all columns; every (i, j) pair then
    # satisfies u_i + v_j <= C_ij.
    v_full = np.empty(n)
    v_full[keep_c] = v_sub
    drop_c = np.flatnonzero(marg.q <= 0.0)
    if drop_c.size:
        v_full[drop_c] = (cost[np.ix_(keep_r, drop_c)] - u_sub[:, None]).min(axis=0)
    u_full = np.empty(m)
    u_full[keep_r] = u_sub
    drop_r = np.flatnonzero(marg.p <= 0.0)
    if drop_r.size:
        u_full[drop_r] = (cost[drop_r] - v_full[None, :]).min(axis=1)

    plan = [
        (int(keep_r[basis.rows[a]]), int(keep_c[basis.cols[a]]), float(basis.flow[a]))
        for a in range(basis.flow.size)
        if basis.flow[a] > 0.0
    ]
    plan.sort()
    solution = TransportSolution(
        objective=objective, plan=plan, dual_u=u_full, dual_v=v_full
    )
    if check:
        verify_solution(cost, marg, solution)
    return solution


def solve_ot_on_subset(cost: np.ndarray, subset, check: bool = True) -> TransportSolution:
    """Transport from the uniform measure on ``subset`` rows of ``cost`` to
    the uniform measure on all columns.

    Equivalent to ``solve_ot`` on the full matrix with zero mass off the
    subset, but touches only the |subset| x n submatrix.  The returned plan
    rows and ``dual_u`` are indexed by position in ``sorted(subset)``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    idx = np.unique(np.asarray(sorted(subset), dtype=np.int64))
    if idx.size == 0:
        raise MarginalError("subset must be non-empty")
    if idx[0] < 0 or idx[-1] >= cost.shape[0]:
        raise IndexError(f"subset index out of range 0..{cost.shape[0] - 1}")
    return solve_ot(cost[idx], Marginals.uniform(idx.size, cost.shape[1]), check=check)


def kr_gap(ot_value: float, f_subset, f_val) -> float:
    """Slack of the Lipschitz duality inequality for one witness function.

    Returns ``ot_value - |mean(f_subset) - mean(f_val)|``; nonnegative (up
    to 1e-9) whenever f is 1-Lipschitz under the metric that generated the
    transport cost.
    """
    f_subset = np.asarray(f_subset, dtype=np.float64)
    f_val = np.asarray(f_val, dtype=np.float64)
    if f_subset.size == 0 or f_val.size == 0:
        raise ValueError("witness values must be non-empty")
    return float(ot_value - abs(float(f_subset.mean()) - float(f_val.mean())))
