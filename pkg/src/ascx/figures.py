"""Figure rendering for the CLI report paths.

Everything here draws to files through the Agg backend so the tool works
on headless boxes. Functions take plain data plus an output path; callers
decide where figures land next to their delimited output.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from ascx.evaluation import BoundRow

plt.ioff()

_RC = {
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.axisbelow": True,
    "font.size": 9,
    "legend.fontsize": 8,
}

_LINE_COLORS = ["#B22222", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]
_MARKERS = ["o", "s", "^", "v", "D", "x"]


def render_bounds_figure(rows: Sequence[BoundRow], path: str) -> None:
    """Two-panel tightness overview of the per-cluster score bounds.

    Left: distribution of actual/estimate for the additive bound and the
    segment-max bound. Right: segment-average spread against how tight the
    segment-max bound was, one point per (query, cluster).
    """
    if not rows:
        raise ValueError("no rows to plot")
    tight_bs = [r.actual / r.bound_sum for r in rows]
    tight_ms = [r.actual / r.max_sbound for r in rows]
    avg_over_max = [r.avg_sbound / r.max_sbound for r in rows]
    with plt.rc_context(_RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.2))
        bins = [i / 20.0 for i in range(21)]
        ax1.hist(tight_bs, bins=bins, alpha=0.6, color=_LINE_COLORS[1], label="additive")
        ax1.hist(tight_ms, bins=bins, alpha=0.6, color=_LINE_COLORS[0], label="segment max")
        ax1.set_xlabel("actual max / bound")
        ax1.set_ylabel("(query, cluster) pairs")
        ax1.set_title("bound tightness")
        ax1.legend()
        ax2.scatter(tight_ms, avg_over_max, s=6, alpha=0.4, color=_LINE_COLORS[0])
        ax2.set_xlabel("actual max / segment-max bound")
        ax2.set_ylabel("segment avg / segment max")
        ax2.set_xlim(0, 1.02)
        ax2.set_ylim(0, 1.02)
        ax2.set_title("average vs max spread")
        fig.tight_layout()
        fig.savefig(path, bbox_inches="tight")
        plt.close(fig)


def render_ratio_figure(
    curves: Mapping[str, Sequence[tuple[int, float]]], path: str, *, floor: float | None = None
) -> None:
    """Score-ratio quality curves, one line per labeled run."""
    if not curves:
        raise ValueError("no curves to plot")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        for i, (label, curve) in enumerate(curves.items()):
            ks = [k for k, _ in curve]
            ratios = [r for _, r in curve]
            ax.plot(
                ks,
                ratios,
                label=label,
                color=_LINE_COLORS[i % len(_LINE_COLORS)],
                marker=_MARKERS[i % len(_MARKERS)],
                markersize=3.5,
                linewidth=1.2,
            )
        if floor is not None:
            ax.axhline(floor, color="0.4", linestyle="--", linewidth=1.0, label="floor")
        if any(k > 60 for curve in curves.values() for k, _ in curve):
            ax.set_xscale("log")
        ax.set_xlabel("rank cutoff k'")
        ax.set_ylabel("avg score ratio vs exact")
        ax.set_ylim(top=1.005)
        ax.legend(loc="lower left")
        fig.tight_layout()
        fig.savefig(path, bbox_inches="tight")
        plt.close(fig)


def render_latency_figure(samples_by_run: Mapping[str, Sequence[float]], path: str) -> None:
    """Per-run latency distributions as overlaid sorted curves."""
    if not samples_by_run:
        raise ValueError("no latency samples to plot")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        for i, (label, samples) in enumerate(samples_by_run.items()):
            ordered = sorted(samples)
            n = len(ordered)
            quantiles = [(j + 1) / n for j in range(n)]
            ax.plot(
                ordered,
                quantiles,
                label=label,
                color=_LINE_COLORS[i % len(_LINE_COLORS)],
                linewidth=1.2,
            )
        ax.set_xlabel("query latency (ms)")
        ax.set_ylabel("fraction of queries")
        ax.set_ylim(0, 1.02)
        ax.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(path, bbox_inches="tight")
        plt.close(fig)
