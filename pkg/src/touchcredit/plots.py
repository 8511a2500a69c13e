"""Figure rendering for CLI reports.

Every report-producing subcommand writes its numbers as CSV/JSON and renders
the matching figure next to them.  Figures are presentation only; nothing
reads them back.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_STYLE = {"figure.figsize": (6.4, 4.0), "axes.grid": True, "grid.alpha": 0.3}


def plot_likelihood_trace(
    trace_train: list[float], trace_test: list[float], path
) -> None:
    """Additivity likelihood per iteration, train and (if present) test."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        iterations = range(1, len(trace_train) + 1)
        ax.plot(iterations, trace_train, marker="o", markersize=3, label="train")
        if trace_test:
            ax.plot(
                range(1, len(trace_test) + 1),
                trace_test,
                marker="s",
                markersize=3,
                label="test",
            )
        ax.set_xlabel("iteration")
        ax.set_ylabel("additivity likelihood")
        ax.legend()
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)


def plot_robustness(rows, path) -> None:
    """Valuation per display type across the scenario-mix sweep."""
    series: dict[tuple[str, str], tuple[list[float], list[float]]] = {}
    for row in rows:
        xs, ys = series.setdefault((row.method, row.display_type), ([], []))
        xs.append(row.p)
        ys.append(row.valuation)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for (method, display_type), (xs, ys) in sorted(series.items()):
            style = "-o" if method == "core" else "--s"
            ax.plot(xs, ys, style, markersize=3, label=f"{method} {display_type}")
        ax.set_xlabel("probability of the single-display scenario")
        ax.set_ylabel("valuation")
        ax.legend()
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)


def plot_precision_recall(curves: dict[str, "object"], path) -> None:
    """Precision-recall curves, one per labeled model."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for label, points in curves.items():
            ax.plot(points[:, 0], points[:, 1], label=label)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_ylim(0.0, 1.05)
        ax.legend()
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
