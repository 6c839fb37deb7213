"""Transport-guided coreset selection over embedded data pools.

Given a training pool of embedding vectors (optionally with per-sample
gradient norms and labels) and a validation pool, the package selects a
fixed-size subset minimizing an exact transport distance between the subset
and the validation distribution, minus a gradient-norm bonus.  Selection
runs a greedy pass over the relaxed objective followed by dual-guided,
exactly verified exchange refinement.
"""

from .cost import (DistanceMatrix, PooCostMatrix, build_poo_matrix,
                   compute_distance_rows, compute_distances,
                   normalize_grad_norms)
from .greedy import (CoresetState, empty_state, gain, greedy_select,
                     relaxed_score, state_from_subset)
from .oracle import brute_force_best, lipschitz_probe, ot_1d, synth_pools
from .pool_io import (EmbeddedPoint, Pool, PoolError, SelectionReport,
                      load_pool, load_report, save_pool, save_report)
from .refine import (ExchangeRecord, MiEstimate, estimate_all, estimate_mi,
                     exact_mi, f_values, knot_rank, prune, refine_loop)
from .selector import (ClassEntry, ClassPartition, SelectionConfig,
                       partition_classes, poo_score, poo_score_components,
                       random_baseline, select, select_labeled)
from .transport import (CertificateError, MarginalError, Marginals,
                        TransportSolution, kr_gap, solve_ot,
                        solve_ot_on_subset, verify_solution)

__version__ = "0.1.0"

__all__ = [
    "CertificateError", "ClassEntry", "ClassPartition", "CoresetState",
    "DistanceMatrix", "EmbeddedPoint", "ExchangeRecord", "MarginalError",
    "Marginals", "MiEstimate", "Pool", "PoolError", "PooCostMatrix",
    "SelectionConfig", "SelectionReport", "TransportSolution",
    "brute_force_best", "build_poo_matrix", "compute_distance_rows",
    "compute_distances", "empty_state", "estimate_all", "estimate_mi",
    "exact_mi", "f_values", "gain", "greedy_select", "knot_rank", "kr_gap",
    "lipschitz_probe", "load_pool", "load_report", "normalize_grad_norms",
    "ot_1d", "partition_classes", "poo_score", "poo_score_components",
    "prune", "random_baseline", "refine_loop", "relaxed_score", "save_pool",
    "save_report", "select", "select_labeled", "solve_ot",
    "solve_ot_on_subset", "state_from_subset", "synth_pools",
    "verify_solution",
]
