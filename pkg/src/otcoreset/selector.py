"""End-to-end selection orchestration.

Wires the stages together: distance matrix, cost matrix with the gradient
bonus, greedy initialization, exchange refinement, and report assembly.
Labeled pools can be split by validation class and selected per class with
proportional budgets.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .cost import (build_poo_matrix, compute_distances, matrix_entries,
                   normalize_grad_norms)
from .greedy import greedy_select
from .pool_io import Pool, SelectionReport
from .refine import refine_loop
from .transport import solve_ot_on_subset


@dataclass(frozen=True)
class SelectionConfig:
    """Knobs of one selection run; ``echo()`` lands in every report."""

    budget: int
    lam: float = 0.1
    k: int = 10
    t_max: int = 200
    seed: int = 0
    normalize_grad: bool = False
    labeled: bool = False
    redistribute_remainder: bool = False
    metric: str = "euclidean"
    threads: int | None = None

    def validate(self, train_size: int) -> None:
        if not 1 <= self.budget <= train_size:
            raise ValueError(
                f"budget must be in 1..{train_size}, got {self.budget}"
            )
        if self.k < 1:
            raise ValueError(f"k must be at least 1, got {self.k}")
        if self.t_max < 0:
            raise ValueError(f"t_max must be nonnegative, got {self.t_max}")
        if self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")

    def echo(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class ClassEntry:
    """One class of a labeled split with its proportional budget."""

    label: int
    train_indices: np.ndarray
    val_indices: np.ndarray
    proportion: float
    budget: int


@dataclass(frozen=True)
class ClassPartition:
    classes: list[ClassEntry] = field(default_factory=list)

    def entry(self, label: int) -> ClassEntry:
        for e in self.classes:
            if e.label == label:
                return e
        raise KeyError(label)


def poo_score_components(d, g, lam: float, subset) -> tuple[float, float, float]:
    """Selection score split into its parts.

    Returns (score, transport_term, bonus_term) with
    score = transport_term - bonus_term, transport_term the exact transport
    cost from the uniform measure on ``subset`` rows of the distance matrix
    to the uniform column measure, and bonus_term = lam * mean(g over subset).
    """
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam!r}")
    entries = matrix_entries(d)
    idx = sorted({int(i) for i in subset})
    if not idx:
        raise ValueError("subset must be non-empty")
    if idx[0] < 0 or idx[-1] >= entries.shape[0]:
        raise ValueError(f"subset index out of range 0..{entries.shape[0] - 1}")
    g = np.asarray(g, dtype=np.float64).ravel()
    if g.size != entries.shape[0]:
        raise ValueError(f"{g.size} gradient norms for {entries.shape[0]} rows")
    transport_term = solve_ot_on_subset(entries, idx).objective
    bonus_term = lam * float(g[idx].mean())
    return transport_term - bonus_term, transport_term, bonus_term


def poo_score(d, g, lam: float, subset) -> float:
    return poo_score_components(d, g, lam, subset)[0]


def random_baseline(seed: int, n: int, train) -> np.ndarray:
    """Uniform sample of n row indices without replacement, sorted."""
    size = len(train) if hasattr(train, "__len__") else int(train)
    if not 1 <= n <= size:
        raise ValueError(f"n must be in 1..{size}, got {n}")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(size, size=n, replace=False))


def select(config: SelectionConfig, train: Pool, val: Pool) -> SelectionReport:
    """Full unlabeled pipeline; the report's trajectory covers both stages.

    Greedy steps log the relaxed score (iterations 0..n-1); iteration n logs
    the exact score of the greedy selection, and each accepted exchange
    appends its new exact score, so the trajectory never increases from
    iteration n onward.
    """
    config.validate(len(train))
    if train.dim != val.dim:
        raise ValueError(f"dimension mismatch: train {train.dim}, val {val.dim}")
    timings: dict[str, float] = {}
    t_total = time.perf_counter()

    t0 = time.perf_counter()
    d = compute_distances(train, val, metric=config.metric, threads=config.threads)
    g = np.asarray(train.grad_norms, dtype=np.float64)
    if config.normalize_grad:
        g = normalize_grad_norms(g)
    M = build_poo_matrix(d, g, config.lam)
    timings["cost_matrix"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    state = greedy_select(M, config.budget)
    timings["greedy"] = time.perf_counter() - t0
    greedy_relaxed = state.relaxed_score
    trajectory: list[tuple[int, float]] = list(state.trajectory)

    sol0 = solve_ot_on_subset(M.entries, sorted(state.selected))
    state.poo_score, state.duals = sol0.objective, sol0.dual_u
    greedy_score = sol0.objective
    trajectory.append((config.budget, greedy_score))

    t0 = time.perf_counter()
    refinement_skipped = None
    if config.budget >= 2:
        state, records = refine_loop(M, state, k=config.k, t_max=config.t_max)
    else:
        records = []
        refinement_skipped = "budget of 1 leaves no exchange with defined removal estimates"
    timings["refine"] = time.perf_counter() - t0
    for step, rec in enumerate(records):
        trajectory.append((config.budget + 1 + step, rec.score_after))
    final_score = float(state.poo_score)

    timings["total"] = time.perf_counter() - t_total
    pass_at_1 = (
        sum(1 for r in records if r.candidates_tested == 1) / len(records)
        if records else None
    )
    stats = {
        "train_size": len(train),
        "val_size": len(val),
        "dim": train.dim,
        "greedy_relaxed_score": greedy_relaxed,
        "greedy_score": greedy_score,
        "final_score": final_score,
        "exchanges": len(records),
        "refinement_start_iteration": config.budget,
        "pass_at_1": pass_at_1,
        "avg_seconds_per_exchange": timings["refine"] / len(records) if records else None,
        "candidates_tested": [r.candidates_tested for r in records],
    }
    if refinement_skipped:
        stats["refinement_skipped"] = refinement_skipped
    report = SelectionReport(
        selected_indices=sorted(int(i) for i in state.selected),
        score_trajectory=trajectory,
        exchange_log=[
            (r.removed, r.added, r.score_before, r.score_after) for r in records
        ],
        config_echo=config.echo(),
        timings=timings,
        stats=stats,
    )
    report.validate()
    return report


def partition_classes(train: Pool, val: Pool, budget: int,
                      redistribute_remainder: bool = False) -> ClassPartition:
    """Split both pools by validation class and assign floor-proportional
    budgets n_k = floor(budget * |val_k| / |val|), clamped to |train_k|.

    With redistribution enabled, the remainder is handed out one by one in
    order of largest fractional part (ties by label), skipping classes at
    their training-size cap, until the budget or every cap is exhausted.
    """
    if not (train.labeled and val.labeled):
        raise ValueError("both pools must carry labels for a class split")
    val_labels = np.unique(val.labels)
    entries = []
    for label in val_labels.tolist():
        val_idx = np.flatnonzero(val.labels == label)
        train_idx = np.flatnonzero(train.labels == label)
        if train_idx.size == 0:
            raise ValueError(f"validation class {label} is absent from the training pool")
        ideal_num = budget * int(val_idx.size)
        n_k = ideal_num // len(val)
        frac = ideal_num % len(val)
        if n_k > train_idx.size:
            warnings.warn(
                f"class {label}: budget {n_k} clamped to {train_idx.size} training points"
            )
            n_k = int(train_idx.size)
        entries.append([label, train_idx, val_idx, val_idx.size / len(val), n_k, frac])

    if redistribute_remainder:
        remainder = budget - sum(e[4] for e in entries)
        order = sorted(entries, key=lambda e: (-e[5], e[0]))
        while remainder > 0 and any(e[4] < e[1].size for e in entries):
            for e in order:
                if remainder == 0:
                    break
                if e[4] < e[1].size:
                    e[4] += 1
                    remainder -= 1

    return ClassPartition(classes=[
        ClassEntry(label=int(lab), train_indices=t_idx, val_indices=v_idx,
                   proportion=float(prop), budget=int(n_k))
        for lab, t_idx, v_idx, prop, n_k, _ in entries
    ])


def select_labeled(config: SelectionConfig, train: Pool, val: Pool,
                   class_order=None) -> SelectionReport:
    """Independent per-class selections on a labeled split.

    ``class_order`` only changes processing order; the per-class results and
    the assembled report are identical for any order.  Classes whose budget
    comes out to zero are skipped with a warning.
    """
    config.validate(len(train))
    partition = partition_classes(
        train, val, config.budget,
        redistribute_remainder=config.redistribute_remainder,
    )
    labels = [e.label for e in partition.classes]
    if class_order is None:
        class_order = labels
    if sorted(class_order) != sorted(labels):
        raise ValueError(f"class_order must permute {sorted(labels)}")

    results: dict[int, dict] = {}
    timings: dict[str, float] = {}
    t_total = time.perf_counter()
    for label in class_order:
        entry = partition.entry(label)
        if entry.budget == 0:
            warnings.warn(f"class {label}: proportional budget is 0, class skipped")
            continue
        sub_config = replace(config, budget=entry.budget, labeled=False)
        sub_report = select(
            sub_config, train.subset(entry.train_indices), val.subset(entry.val_indices)
        )
        global_sel = [int(entry.train_indices[i]) for i in sub_report.selected_indices]
        results[label] = {
            "label": label,
            "budget": entry.budget,
            "proportion": entry.proportion,
            "selected_indices": sorted(global_sel),
            "final_score": sub_report.stats["final_score"],
            "greedy_score": sub_report.stats["greedy_score"],
            "exchanges": sub_report.stats["exchanges"],
            "pass_at_1": sub_report.stats["pass_at_1"],
            "score_trajectory": sub_report.score_trajectory,
            "exchange_log": [
                (int(entry.train_indices[r]), int(entry.train_indices[a]), b, af)
                for r, a, b, af in sub_report.exchange_log
            ],
            "timings": sub_report.timings,
        }
    timings["total"] = time.perf_counter() - t_total

    selected = sorted(i for res in results.values() for i in res["selected_indices"])
    class_stats = [results[label] for label in labels if label in results]
    report = SelectionReport(
        selected_indices=selected,
        score_trajectory=[],
        exchange_log=[rec for cs in class_stats for rec in cs["exchange_log"]],
        config_echo=config.echo(),
        timings=timings,
        stats={
            "train_size": len(train),
            "val_size": len(val),
            "dim": train.dim,
            "mode": "labeled",
            "requested_budget": config.budget,
            "realized_budget": len(selected),
            "skipped_classes": [lab for lab in labels if lab not in results],
            "class_budgets": {str(e.label): e.budget for e in partition.classes},
            "realized_proportions": {
                str(cs["label"]): len(cs["selected_indices"]) / max(len(selected), 1)
                for cs in class_stats
            },
            "classes": class_stats,
        },
    )
    report.validate()
    return report
