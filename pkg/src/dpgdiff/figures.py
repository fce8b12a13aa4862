"""Matplotlib rendering of training curves and evaluation samples.

All output goes to files (Agg backend); the numeric library never needs these
functions, so matplotlib is imported lazily here and nowhere else.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _scalar_series(metrics: list[dict]) -> dict[str, tuple[list, list]]:
    series: dict[str, tuple[list, list]] = {}
    for row in metrics:
        if "kind" in row:  # reward trace rows
            continue
        for key, val in row.items():
            if key == "step" or val is None:
                continue
            xs, ys = series.setdefault(key, ([], []))
            xs.append(row["step"])
            ys.append(val)
    return series


def render_training_curves(metrics: list[dict], path: Path) -> None:
    plt = _plt()
    series = _scalar_series(metrics)
    if not series:
        return
    fig, axes = plt.subplots(1, len(series), figsize=(4 * len(series), 3.2))
    if len(series) == 1:
        axes = [axes]
    for ax, (name, (xs, ys)) in zip(axes, sorted(series.items())):
        ax.plot(xs, ys, lw=1.2)
        ax.set_xlabel("step")
        ax.set_title(name)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_eval_samples(refs, generated: dict[int, list[np.ndarray]], path: Path) -> None:
    """Scatter for 2-D concepts; image grid for glyph concepts."""
    plt = _plt()
    if refs.domain == "mixture2d":
        fig, ax = plt.subplots(figsize=(5, 5))
        stacked = refs.stacked()
        ax.scatter(stacked[:, 0], stacked[:, 1], marker="*", s=160, c="black",
                   label="references", zorder=3)
        for ctx, samples in sorted(generated.items()):
            pts = np.stack(samples)
            ax.scatter(pts[:, 0], pts[:, 1], s=18, alpha=0.7, label=f"context {ctx}")
        ax.legend(fontsize=8)
        ax.set_title(f"concept {refs.concept_token}")
        ax.grid(alpha=0.3)
    else:
        side = int(round(np.sqrt(refs.samples[0].size)))
        ctxs = sorted(generated)
        n_cols = max(len(refs.samples), max(len(v) for v in generated.values()))
        fig, axes = plt.subplots(1 + len(ctxs), n_cols,
                                 figsize=(1.1 * n_cols, 1.1 * (1 + len(ctxs))))
        axes = np.atleast_2d(axes)
        for j in range(n_cols):
            ax = axes[0, j]
            ax.axis("off")
            if j < len(refs.samples):
                ax.imshow(refs.samples[j].reshape(side, side), cmap="gray",
                          vmin=-1, vmax=1)
                ax.set_title("ref", fontsize=6)
        for i, ctx in enumerate(ctxs, start=1):
            for j in range(n_cols):
                ax = axes[i, j]
                ax.axis("off")
                if j < len(generated[ctx]):
                    ax.imshow(generated[ctx][j].reshape(side, side), cmap="gray",
                              vmin=-1, vmax=1)
                    if j == 0:
                        ax.set_title(f"ctx {ctx}", fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_ablation_curves(cells: dict[str, list[dict]], path: Path) -> None:
    """Overlay each grid cell's scalar curves, one panel per metric."""
    plt = _plt()
    names = sorted({name for metrics in cells.values()
                    for name in _scalar_series(metrics)})
    if not names:
        return
    fig, axes = plt.subplots(1, len(names), figsize=(4 * len(names), 3.2))
    if len(names) == 1:
        axes = [axes]
    for ax, name in zip(axes, names):
        for cell, metrics in sorted(cells.items()):
            series = _scalar_series(metrics)
            if name in series:
                xs, ys = series[name]
                ax.plot(xs, ys, lw=1.1, label=cell)
        ax.set_xlabel("step")
        ax.set_title(name)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
