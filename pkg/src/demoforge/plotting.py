"""Report figures written next to the JSON / binary outputs of the CLI."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "figure.dpi": 120,
}
# no timestamps or version strings, so identical inputs give identical files
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_PNG_META, bbox_inches="tight")
    plt.close(fig)
    return path


def temporal_histogram(histograms: dict[str, dict[int, int]], path) -> Path:
    """Grouped bars of draw counts per keyframe transition, one group per buffer."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6, 3))
        keys = sorted({k for h in histograms.values() for k in h})
        x = np.arange(len(keys))
        width = 0.8 / max(1, len(histograms))
        for i, (label, hist) in enumerate(histograms.items()):
            ax.bar(x + i * width, [hist.get(k, 0) for k in keys], width, label=label)
        ax.set_xticks(x + width * (len(histograms) - 1) / 2)
        ax.set_xticklabels([str(k) for k in keys])
        ax.set_xlabel("target keyframe ordinal")
        ax.set_ylabel("samples")
        if len(histograms) > 1:
            ax.legend(frameon=False)
        return _save(fig, path)


def success_curves(curves, verdict, path) -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6, 3.2))
        for cur in curves:
            steps = [c.step for c in cur.checkpoints]
            ax.plot(steps, [c.train_sr for c in cur.checkpoints], lw=1, label=f"{cur.task_instance} train")
            test = [c.test_sr for c in cur.checkpoints]
            if all(t is not None for t in test):
                ax.plot(steps, test, lw=1, ls="--", label=f"{cur.task_instance} test")
        ax.set_ylim(-0.05, 1.05)
        ax.set_xlabel("training step")
        ax.set_ylabel("success rate")
        ax.set_title(f"verdict: {verdict.scenario}")
        if len(curves) <= 6:
            ax.legend(frameon=False, fontsize=7)
        return _save(fig, path)


def view_sheet(rows: dict[str, Sequence], axes: Sequence[str], path) -> Path:
    """Grid of rendered rasters: one row per label (e.g. standard / inverted), one column per view."""
    with plt.rc_context(RC):
        nr, nc = len(rows), len(axes)
        fig, grid = plt.subplots(nr, nc, figsize=(1.8 * nc, 1.9 * nr), squeeze=False)
        for r, (label, views) in enumerate(rows.items()):
            for c, v in enumerate(views):
                ax = grid[r][c]
                ax.imshow(v.rgb, origin="lower", interpolation="nearest")
                ax.set_xticks([])
                ax.set_yticks([])
                if r == 0:
                    ax.set_title(axes[c])
                if c == 0:
                    ax.set_ylabel(label)
        return _save(fig, path)


def heatmap_sheet(heatmaps: Sequence, axes: Sequence[str], path, marks: Sequence | None = None) -> Path:
    with plt.rc_context(RC):
        fig, grid = plt.subplots(1, len(heatmaps), figsize=(1.8 * len(heatmaps), 2.0), squeeze=False)
        for c, h in enumerate(heatmaps):
            ax = grid[0][c]
            ax.imshow(h.scores, origin="lower", cmap="magma", interpolation="nearest")
            if marks is not None:
                u, v = marks[c]
                ax.plot([u], [v], marker="+", color="cyan", ms=6)
            ax.set_xticks([])
            ax.set_yticks([])
            ax.set_title(axes[c])
        return _save(fig, path)
