"""Figure rendering for selection runs.

Pure file output: figures are drawn off-screen and saved next to the report,
one for the score trajectory of a single run and one for lambda sweeps.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

from matplotlib.figure import Figure  # noqa: E402  (backend must be set first)

_LINE = "#1f6fb2"
_ACCENT = "#b2541f"


def save_trajectory_figure(report, path) -> Path:
    """Score versus iteration; labeled runs fall back to per-class bars."""
    path = Path(path)
    fig = Figure(figsize=(7.0, 4.5), dpi=120)
    ax = fig.add_subplot(111)
    if report.score_trajectory:
        iterations = [it for it, _ in report.score_trajectory]
        scores = [sc for _, sc in report.score_trajectory]
        ax.plot(iterations, scores, marker="o", markersize=3, linewidth=1.2, color=_LINE)
        start = report.stats.get("refinement_start_iteration")
        if start is not None:
            ax.axvline(start, color=_ACCENT, linestyle="--", linewidth=1.0,
                       label="refinement starts")
            ax.legend(loc="upper right", frameon=False)
        ax.set_xlabel("iteration")
        ax.set_ylabel("score")
        ax.set_title("selection score trajectory")
    else:
        classes = report.stats.get("classes", [])
        labels = [str(c["label"]) for c in classes]
        finals = [c["final_score"] for c in classes]
        ax.bar(labels, finals, color=_LINE)
        ax.set_xlabel("class")
        ax.set_ylabel("final score")
        ax.set_title("per-class final scores")
    ax.grid(True, alpha=0.25)
    fig.tight_layout()
    fig.savefig(path)
    return path


def save_sweep_figure(lambdas, scores, path) -> Path:
    """Final score for each swept bonus weight."""
    path = Path(path)
    fig = Figure(figsize=(7.0, 4.5), dpi=120)
    ax = fig.add_subplot(111)
    ax.plot(list(lambdas), list(scores), marker="o", markersize=4,
            linewidth=1.2, color=_LINE)
    ax.set_xlabel("lambda")
    ax.set_ylabel("final score")
    ax.set_title("scores across the lambda sweep")
    ax.grid(True, alpha=0.25)
    fig.tight_layout()
    fig.savefig(path)
    return path
