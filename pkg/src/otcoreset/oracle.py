"""Independent oracles and synthetic data.

Everything here exists to check the selection pipeline from the outside:
exhaustive subset enumeration, the classical sorted-matching identity for
transport on a line, Lipschitz witness functions for the duality inequality,
and reproducible synthetic pools.  None of it shares logic with the greedy
or refinement modules.
"""

from __future__ import annotations

import math
from itertools import combinations

import numpy as np

from .cost import matrix_entries
from .pool_io import Pool
from .transport import solve_ot_on_subset

# Enumeration guard: keeps exhaustive search around a minute at desk scale.
BRUTE_FORCE_LIMIT = 100_000

GRAD_MODELS = ("constant", "uniform", "lognormal")


def brute_force_best(M, budget: int):
    """Score every size-``budget`` subset with an exact transport solve.

    Returns (best subset, best score, full table) where the table lists
    (subset tuple, score) in enumeration order.  The best subset is the
    lexicographically smallest among exact ties.
    """
    entries = matrix_entries(M)
    n_rows = entries.shape[0]
    if not 1 <= budget <= n_rows:
        raise ValueError(f"budget must be in 1..{n_rows}, got {budget}")
    total = math.comb(n_rows, budget)
    if total > BRUTE_FORCE_LIMIT:
        raise ValueError(
            f"{total} subsets exceed the enumeration guard of {BRUTE_FORCE_LIMIT}"
        )
    table = []
    best_subset = None
    best_score = math.inf
    for subset in combinations(range(n_rows), budget):
        score = solve_ot_on_subset(entries, subset).objective
        table.append((subset, score))
        if score < best_score:
            best_subset, best_score = subset, score
    return best_subset, best_score, table


def ot_1d(xs, ys) -> float:
    """Uniform-mass transport cost on a line: mean |sorted(xs) - sorted(ys)|."""
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.size != ys.size:
        raise ValueError(f"length mismatch: {xs.size} vs {ys.size}")
    if xs.size == 0:
        raise ValueError("point sets must be non-empty")
    return float(np.abs(np.sort(xs) - np.sort(ys)).mean())


def lipschitz_probe(pool_a, pool_b, anchors, anchor_values) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate f(z) = min_a (value_a + ||z - anchor_a||) on both pools.

    The lower envelope of cones is 1-Lipschitz by construction, so the
    resulting values are a valid witness for the duality inequality.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    values = np.asarray(anchor_values, dtype=np.float64).ravel()
    if anchors.ndim != 2 or anchors.shape[0] == 0:
        raise ValueError("anchors must be a non-empty 2-D array")
    if values.size != anchors.shape[0]:
        raise ValueError(f"{values.size} values for {anchors.shape[0]} anchors")

    def evaluate(pool) -> np.ndarray:
        emb = pool.embeddings if hasattr(pool, "embeddings") else pool
        emb = np.asarray(emb, dtype=np.float64)
        d = np.sqrt(np.square(emb[:, None, :] - anchors[None, :, :]).sum(axis=2))
        return (d + values[None, :]).min(axis=1)

    return evaluate(pool_a), evaluate(pool_b)


def synth_pools(seed: int, n_train: int, n_val: int, dim: int,
                n_clusters: int = 3, grad_model: str = "uniform",
                center_shift: float = 0.0, cluster_std: float = 1.0,
                grad_distance_mix: float = 0.0) -> tuple[Pool, Pool]:
    """Deterministic Gaussian-mixture pools sharing cluster centers.

    ``center_shift`` displaces the validation centers along the first axis
    to open a distribution gap.  Gradient norms follow ``grad_model``
    (constant, uniform, lognormal); ``grad_distance_mix`` in [0, 1] blends
    in each point's distance to its center so norms can correlate with
    geometry.  Labels are the cluster ids, assigned round-robin so every
    cluster appears in both pools whenever sizes allow.
    """
    if min(n_train, n_val, dim, n_clusters) < 1:
        raise ValueError("sizes must be at least 1")
    if grad_model not in GRAD_MODELS:
        raise ValueError(f"grad_model must be one of {GRAD_MODELS}, got {grad_model!r}")
    if not 0.0 <= grad_distance_mix <= 1.0:
        raise ValueError("grad_distance_mix must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=4.0, size=(n_clusters, dim))

    def build(count: int, shift: float, role: str) -> Pool:
        labels = np.arange(count, dtype=np.int64) % n_clusters
        base = centers[labels]
        coords = base + cluster_std * rng.standard_normal((count, dim))
        coords[:, 0] += shift
        if grad_model == "constant":
            norms = np.ones(count)
        elif grad_model == "uniform":
            norms = rng.random(count)
        else:
            norms = rng.lognormal(mean=0.0, sigma=1.0, size=count)
        if grad_distance_mix > 0.0:
            radial = np.sqrt(np.square(coords - base).sum(axis=1))
            norms = (1.0 - grad_distance_mix) * norms + grad_distance_mix * radial
        return Pool.from_arrays(coords.astype(np.float32),
                                norms.astype(np.float32), labels, role=role)

    train = build(n_train, 0.0, "training")
    val = build(n_val, center_shift, "validation")
    return train, val
