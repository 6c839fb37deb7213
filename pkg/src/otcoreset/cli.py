"""Command-line interface.

Subcommands: ``select`` (run a selection and write report, index file, and
figures), ``score`` (evaluate an externally produced subset), ``oracle``
(independent checks: brute force, 1-D identity, Lipschitz probes), and
``gen`` (write synthetic pools).

Exit codes are stable API: 0 success, 1 user error, 2 internal invariant
failure (a solve failing its own optimality certificate).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cost import METRICS, compute_distances, build_poo_matrix, normalize_grad_norms
from .oracle import (GRAD_MODELS, brute_force_best, lipschitz_probe, ot_1d,
                     synth_pools)
from .pool_io import PoolError, load_pool, save_pool, save_report
from .plots import save_sweep_figure, save_trajectory_figure
from .selector import SelectionConfig, poo_score_components, select, select_labeled
from .transport import (CertificateError, Marginals, MarginalError, kr_gap,
                        solve_ot, solve_ot_on_subset)


class UserError(Exception):
    """Bad flags or bad input files; reported on stderr with exit code 1."""


class _Parser(argparse.ArgumentParser):
    # Exit code 2 is reserved for internal invariant failures, so usage
    # errors must not use argparse's default SystemExit(2).
    def error(self, message):
        raise UserError(f"{self.prog}: {message}\n{self.format_usage()}".rstrip())


def _add_pool_flags(p: argparse.ArgumentParser, *, need_budget: bool) -> None:
    p.add_argument("--train", required=True, help="training pool file")
    p.add_argument("--val", required=True, help="validation pool file")
    if need_budget:
        p.add_argument("--budget", type=int, required=True, help="selection size")
    p.add_argument("--grad", help="gradient-norm sidecar for the training pool")
    p.add_argument("--format", choices=("binary", "csv"), default="binary",
                   help="pool file format (default binary)")
    p.add_argument("--metric", choices=METRICS, default="euclidean")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for the distance matrix (default: all cores)")


def build_parser() -> _Parser:
    parser = _Parser(prog="otcoreset", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", parents=[], help="run a coreset selection")
    _add_pool_flags(p, need_budget=True)
    p.add_argument("--labels", help="label sidecar for the training pool")
    p.add_argument("--val-labels", help="label sidecar for the validation pool")
    p.add_argument("--lambda", dest="lam", type=float, default=0.1,
                   help="gradient bonus weight (default 0.1)")
    p.add_argument("--lambda-sweep", help="comma-separated weights, one selection each")
    p.add_argument("--k", type=int, default=10, help="pruning width (default 10)")
    p.add_argument("--t-max", type=int, default=200, help="exchange iteration cap")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalize-grad", action="store_true",
                   help="min-max normalize gradient norms to [0, 1]")
    p.add_argument("--labeled", action="store_true",
                   help="independent per-class selections with proportional budgets")
    p.add_argument("--redistribute-remainder", action="store_true",
                   help="hand the flooring remainder to classes by fractional part")
    p.add_argument("--out", default="report.json", help="report path (default report.json)")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("score", help="score an externally produced subset")
    _add_pool_flags(p, need_budget=False)
    p.add_argument("--subset", required=True, help="newline-separated index file")
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--normalize-grad", action="store_true")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("oracle", help="independent correctness checks")
    osub = p.add_subparsers(dest="oracle_command", required=True)

    q = osub.add_parser("brute", help="exhaustively score every subset")
    _add_pool_flags(q, need_budget=False)
    q.add_argument("--n", type=int, required=True, help="subset size to enumerate")
    q.add_argument("--lambda", dest="lam", type=float, default=0.0)
    q.add_argument("--out", help="write the full score table as CSV")
    q.set_defaults(func=cmd_oracle_brute)

    q = osub.add_parser("ot1d", help="solver vs sorted-matching identity on a line")
    q.add_argument("--trials", type=int, default=100)
    q.add_argument("--max-size", type=int, default=64)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_oracle_ot1d)

    q = osub.add_parser("kr", help="Lipschitz witness probes of the duality inequality")
    q.add_argument("--probes", type=int, default=100)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_oracle_kr)

    p = sub.add_parser("gen", help="write deterministic synthetic pools")
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=64)
    p.add_argument("--n-val", type=int, default=32)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--clusters", type=int, default=3)
    p.add_argument("--grad-model", choices=GRAD_MODELS, default="uniform")
    p.add_argument("--center-shift", type=float, default=0.0)
    p.add_argument("--cluster-std", type=float, default=1.0)
    p.add_argument("--grad-distance-mix", type=float, default=0.0)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.set_defaults(func=cmd_gen)
    return parser


def _load_pools(args, *, labels: bool = False):
    train = load_pool(args.train, args.format, grad_path=args.grad,
                      labels_path=getattr(args, "labels", None) if labels else None,
                      role="training")
    val = load_pool(args.val, args.format,
                    labels_path=getattr(args, "val_labels", None) if labels else None,
                    role="validation")
    return train, val


def _stem(path: Path) -> Path:
    return path.with_suffix("") if path.suffix else path


def cmd_select(args) -> int:
    train, val = _load_pools(args, labels=True)
    if args.labeled and not (train.labeled and val.labeled):
        raise UserError("--labeled needs label sidecars for both pools "
                        "(--labels and --val-labels)")
    config = SelectionConfig(
        budget=args.budget, lam=args.lam, k=args.k, t_max=args.t_max,
        seed=args.seed, normalize_grad=args.normalize_grad, labeled=args.labeled,
        redistribute_remainder=args.redistribute_remainder, metric=args.metric,
        threads=args.threads,
    )
    run = select_labeled if args.labeled else select
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    if args.lambda_sweep:
        try:
            lambdas = [float(x) for x in args.lambda_sweep.split(",") if x.strip()]
        except ValueError:
            raise UserError(f"--lambda-sweep is not a comma-separated float list: "
                            f"{args.lambda_sweep!r}") from None
        if not lambdas:
            raise UserError("--lambda-sweep lists no values")
        runs = []
        written = []
        for lam in lambdas:
            report = run(replace(config, lam=lam), train, val)
            tag = format(lam, "g")
            index_path = _stem(out).with_name(_stem(out).name + f".lambda-{tag}.indices.txt")
            index_path.write_text("".join(f"{i}\n" for i in report.selected_indices))
            written.append(index_path)
            runs.append({
                "lambda": lam,
                "final_score": _labeled_total(report) if args.labeled
                               else report.stats["final_score"],
                "selected_indices": report.selected_indices,
                "stats": report.stats,
                "config_echo": report.config_echo,
                "timings": report.timings,
            })
            print(f"lambda={tag} score={runs[-1]['final_score']!r} "
                  f"selected={len(report.selected_indices)}")
        doc = {"mode": "lambda_sweep", "lambdas": lambdas, "runs": runs,
               "config_echo": config.echo()}
        out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        written.insert(0, out)
        if not args.no_figures:
            fig = _stem(out).with_name(_stem(out).name + ".sweep.png")
            save_sweep_figure(lambdas, [r["final_score"] for r in runs], fig)
            written.append(fig)
        print("wrote " + " ".join(str(w) for w in written))
        return 0

    report = run(config, train, val)
    report_path, index_path = save_report(report, out)
    written = [report_path, index_path]
    if not args.no_figures:
        fig = _stem(out).with_name(_stem(out).name + ".trajectory.png")
        save_trajectory_figure(report, fig)
        written.append(fig)
    final = (report.stats.get("final_score") if not args.labeled
             else _labeled_total(report))
    print(f"final_score={final!r}")
    print(f"selected={len(report.selected_indices)} exchanges="
          f"{report.stats.get('exchanges', sum(c['exchanges'] for c in report.stats.get('classes', [])))}"
          f" pass_at_1={report.stats.get('pass_at_1')}")
    print("wrote " + " ".join(str(w) for w in written))
    return 0


def _labeled_total(report) -> float:
    return sum(c["final_score"] for c in report.stats["classes"])


def cmd_score(args) -> int:
    train, val = _load_pools(args)
    text = Path(args.subset).read_text()
    try:
        subset = [int(line) for line in text.split()]
    except ValueError:
        raise UserError(f"{args.subset}: not a newline-separated integer list") from None
    if not subset:
        raise UserError(f"{args.subset}: empty subset")
    d = compute_distances(train, val, metric=args.metric, threads=args.threads)
    g = np.asarray(train.grad_norms, dtype=np.float64)
    if args.normalize_grad:
        g = normalize_grad_norms(g)
    score, transport_term, bonus_term = poo_score_components(d, g, args.lam, subset)
    print(f"score={score!r}")
    print(f"transport_component={transport_term!r}")
    print(f"gradient_component={bonus_term!r}")
    return 0


def cmd_oracle_brute(args) -> int:
    train, val = _load_pools(args)
    d = compute_distances(train, val, metric=args.metric, threads=args.threads)
    M = build_poo_matrix(d, np.asarray(train.grad_norms, dtype=np.float64), args.lam)
    best_subset, best_score, table = brute_force_best(M, args.n)
    print(f"subsets={len(table)}")
    print(f"best_subset={' '.join(map(str, best_subset))}")
    print(f"best_score={best_score!r}")
    if args.out:
        lines = ["subset,score"]
        lines += [f"{' '.join(map(str, s))},{score!r}" for s, score in table]
        Path(args.out).write_text("\n".join(lines) + "\n")
        print(f"wrote {args.out}")
    return 0


def cmd_oracle_ot1d(args) -> int:
    if args.trials < 1 or args.max_size < 2:
        raise UserError("need --trials >= 1 and --max-size >= 2")
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.trials):
        size = int(rng.integers(2, args.max_size + 1))
        xs = rng.normal(size=size)
        ys = rng.normal(size=size)
        solved = solve_ot(np.abs(xs[:, None] - ys[None, :]),
                          Marginals.uniform(size, size)).objective
        worst = max(worst, abs(solved - ot_1d(xs, ys)))
    print(f"trials={args.trials} worst_abs_diff={worst:.3e}")
    if worst > 1e-9:
        raise CertificateError(f"solver disagrees with the 1-D identity by {worst:g}")
    print("PASS")
    return 0


def cmd_oracle_kr(args) -> int:
    if args.probes < 1:
        raise UserError("need --probes >= 1")
    rng = np.random.default_rng(args.seed)
    train, val = synth_pools(args.seed, n_train=40, n_val=16, dim=4,
                             n_clusters=3, grad_model="uniform")
    d = compute_distances(train, val)
    min_gap = float("inf")
    for _ in range(args.probes):
        size = int(rng.integers(2, len(train) // 2))
        subset = np.sort(rng.choice(len(train), size=size, replace=False))
        ot_value = solve_ot_on_subset(d.entries, subset).objective
        n_anchors = int(rng.integers(1, 6))
        anchor_rows = rng.choice(len(val), size=n_anchors, replace=False)
        anchors = np.asarray(val.embeddings, dtype=np.float64)[anchor_rows]
        values = rng.normal(size=n_anchors)
        f_train, f_val = lipschitz_probe(train, val, anchors, values)
        min_gap = min(min_gap, kr_gap(ot_value, f_train[subset], f_val))
    print(f"probes={args.probes} min_gap={min_gap:.6e}")
    if min_gap < -1e-9:
        raise CertificateError(f"duality inequality violated by {-min_gap:g}")
    print("PASS")
    return 0


def cmd_gen(args) -> int:
    train, val = synth_pools(
        args.seed, n_train=args.n_train, n_val=args.n_val, dim=args.dim,
        n_clusters=args.clusters, grad_model=args.grad_model,
        center_shift=args.center_shift, cluster_std=args.cluster_std,
        grad_distance_mix=args.grad_distance_mix,
    )
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    emb_ext = "gemb" if args.format == "binary" else "csv"
    grad_ext = "gnrm" if args.format == "binary" else "grad.csv"
    written = []
    for pool, name in ((train, "train"), (val, "val")):
        emb = prefix.with_name(f"{prefix.name}.{name}.{emb_ext}")
        grad = prefix.with_name(f"{prefix.name}.{name}.{grad_ext}")
        labels = prefix.with_name(f"{prefix.name}.{name}.labels.csv")
        save_pool(pool, emb, format=args.format, grad_path=grad, labels_path=labels)
        written += [emb, grad, labels]
    print("wrote " + " ".join(str(w) for w in written))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PoolError, MarginalError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CertificateError as exc:
        print(f"internal invariant failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
