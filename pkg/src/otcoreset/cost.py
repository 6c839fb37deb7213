"""Distance matrix and selection-cost matrix construction.

The selection cost matrix combines embedding distances with a per-row
gradient-norm bonus: entries(i, j) = distance(i, j) - lam * grad_norm(i).
Larger norms make a row cheaper everywhere, never reordering within a row.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

# Scratch budget per distance block; fixed so results never depend on the
# thread count, only on the input.
_BLOCK_BYTES = 1 << 24

METRICS = ("euclidean", "manhattan")


@dataclass(frozen=True)
class DistanceMatrix:
    """Pairwise distances, rows = training points, columns = validation."""

    entries: np.ndarray
    metric: str = "euclidean"

    def __post_init__(self):
        e = self.entries
        if e.ndim != 2:
            raise ValueError("distance entries must be 2-D")
        if not np.all(np.isfinite(e)):
            raise ValueError("distance entries must be finite")
        if np.any(e < 0):
            raise ValueError("distance entries must be nonnegative")
        e.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass(frozen=True)
class PooCostMatrix:
    """Distance matrix with the gradient bonus folded in; entries may be
    negative.  ``lam`` is the bonus weight, ``grad_norms`` the row bonuses."""

    entries: np.ndarray
    lam: float
    grad_norms: np.ndarray

    def __post_init__(self):
        self.entries.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


def matrix_entries(M) -> np.ndarray:
    """Accept a cost/distance wrapper or a bare array; return the array."""
    if hasattr(M, "entries"):
        return M.entries
    return np.asarray(M, dtype=np.float64)


def _pool_embeddings(pool) -> np.ndarray:
    emb = pool.embeddings if hasattr(pool, "embeddings") else pool
    return np.asarray(emb, dtype=np.float64)


def _metric_kernel(metric: str):
    if metric == "euclidean":
        return lambda diff: np.sqrt(np.square(diff).sum(axis=2))
    if metric == "manhattan":
        return lambda diff: np.abs(diff).sum(axis=2)
    raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")


def compute_distance_rows(train, val, rows, metric: str = "euclidean") -> np.ndarray:
    """Distances for selected training rows only, without the full matrix."""
    X = _pool_embeddings(train)
    Y = _pool_embeddings(val)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    kernel = _metric_kernel(metric)
    idx = np.asarray(rows, dtype=np.int64)
    return kernel(X[idx][:, None, :] - Y[None, :, :])


def compute_distances(train, val, metric: str = "euclidean",
                      threads: int | None = None) -> DistanceMatrix:
    """Full pairwise distance matrix, computed in fixed row blocks.

    Every entry is reduced independently over the embedding axis, and the
    block layout depends only on the input shape, so the result is
    bit-identical for any thread count.
    """
    X = _pool_embeddings(train)
    Y = _pool_embeddings(val)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    kernel = _metric_kernel(metric)
    m = X.shape[0]
    v, dim = Y.shape
    out = np.empty((m, v), dtype=np.float64)
    block = max(1, _BLOCK_BYTES // max(1, v * dim * 8))
    starts = range(0, m, block)

    def fill(a: int) -> None:
        b = min(a + block, m)
        out[a:b] = kernel(X[a:b, None, :] - Y[None, :, :])

    workers = threads if threads is not None else (os.cpu_count() or 1)
    if workers <= 1 or len(starts) <= 1:
        for a in starts:
            fill(a)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, starts))
    return DistanceMatrix(entries=out, metric=metric)


def normalize_grad_norms(g) -> np.ndarray:
    """Affine min-max map of the norms onto [0, 1]; constant input maps to 0."""
    g = np.asarray(g, dtype=np.float64)
    lo = float(g.min())
    hi = float(g.max())
    if hi == lo:
        return np.zeros_like(g)
    return (g - lo) / (hi - lo)


def build_poo_matrix(d: DistanceMatrix, g, lam: float) -> PooCostMatrix:
    """Fold the gradient bonus into the distances: M = D - lam * g per row."""
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam!r}")
    entries = matrix_entries(d)
    g = np.asarray(g, dtype=np.float64).ravel()
    if g.size != entries.shape[0]:
        raise ValueError(f"{g.size} gradient norms for {entries.shape[0]} matrix rows")
    M = entries - (lam * g)[:, None]
    return PooCostMatrix(entries=M, lam=float(lam), grad_norms=g)
