"""Figure rendering for the report path: sweep curves and mask histograms.

Matplotlib is imported lazily with the Agg backend so headless runs and
figure-free invocations never touch a display.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from .corpus import DatasetStats
from .scoring import ScoreReport


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def save_sweep_figure(
    sweep: Sequence[tuple[float, ScoreReport]],
    path: str | Path,
    title: str | None = None,
) -> None:
    """Line chart of P/R/F1 against the IoU threshold."""
    plt = _pyplot()
    thresholds = [t for t, _ in sweep]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(thresholds, [r.f1 for _, r in sweep], marker="o", label="F1")
    ax.plot(thresholds, [r.precision for _, r in sweep], marker="s", linestyle="--", label="Pre.")
    ax.plot(thresholds, [r.recall for _, r in sweep], marker="^", linestyle=":", label="Rec.")
    ax.set_xlabel("IoU threshold")
    ax.set_ylabel("score")
    ax.set_ylim(0, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend()
    if title is None and sweep:
        title = sweep[0][1].task.upper()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_stats_figure(stats: DatasetStats, path: str | Path, title: str | None = None) -> None:
    """Bar charts: masks-per-image distribution and per-type groundability."""
    plt = _pyplot()
    fig, (left, right) = plt.subplots(1, 2, figsize=(10, 4))

    hist = sorted(stats.masks_per_image.items())
    left.bar([str(k) for k, _ in hist], [v for _, v in hist], color="tab:blue")
    left.set_xlabel("masks in image")
    left.set_ylabel("images")
    left.set_title("Masks per image")

    types = sorted(stats.per_type)
    groundable = [stats.per_type[t]["groundable"] for t in types]
    ungroundable = [stats.per_type[t]["ungroundable"] for t in types]
    xs = range(len(types))
    right.bar([x - 0.2 for x in xs], groundable, width=0.4, label="groundable")
    right.bar([x + 0.2 for x in xs], ungroundable, width=0.4, label="ungroundable")
    right.set_xticks(list(xs))
    right.set_xticklabels(types)
    right.set_ylabel("entities")
    right.set_title("Groundability by type")
    right.legend()

    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
