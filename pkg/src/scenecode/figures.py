"""Matplotlib renderings of evaluation reports and sweep grids.

Every figure is written to a file next to its delimited report; nothing is
shown interactively. Metadata is stripped so outputs depend only on the data.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import EquivarianceReport, InvarianceReport

_SAVE_KWARGS = {"dpi": 110, "metadata": {"Software": None}}


def save_equivariance_figure(reports: list[EquivarianceReport], path) -> None:
    """One scatter panel per factor: inferred latent mean vs ground truth."""
    n = max(len(reports), 1)
    fig, axes = plt.subplots(1, n, figsize=(4.0 * n, 3.6), squeeze=False)
    for ax, rep in zip(axes[0], reports):
        ax.scatter(rep.truth, rep.inferred, s=8, alpha=0.6, edgecolors="none")
        ax.set_xlabel(f"ground-truth {rep.factor}")
        ax.set_ylabel("inferred latent mean")
        tag = "degenerate" if rep.degenerate else f"r={rep.pearson_r:.3f}"
        ax.set_title(f"{rep.factor} ({tag})")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def save_invariance_figure(report: InvarianceReport, path) -> None:
    """Grouped bars of standardized within-batch variance per latent."""
    factors = report.factors
    fig, axes = plt.subplots(len(factors), 1, figsize=(7.0, 2.2 * len(factors)), squeeze=False)
    for ax, factor in zip(axes[:, 0], factors):
        var = report.per_latent[factor]
        ax.bar(np.arange(var.size), var, width=0.8)
        ax.set_ylabel("std. variance")
        ax.set_title(f"active factor: {factor} (inactive/active = {report.ratio[factor]:.3f})")
    axes[-1, 0].set_xlabel("latent index")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def save_image_grid(images: list[np.ndarray], path, columns: int | None = None, titles=None) -> None:
    """Grayscale grid of (1,H,W) or (H,W) images."""
    n = len(images)
    cols = columns or min(n, 8)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(1.6 * cols, 1.6 * rows), squeeze=False)
    for i in range(rows * cols):
        ax = axes[i // cols, i % cols]
        ax.axis("off")
        if i < n:
            img = images[i]
            if img.ndim == 3:
                img = img[0]
            ax.imshow(img, cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
            if titles is not None and i < len(titles):
                ax.set_title(str(titles[i]), fontsize=7)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def save_training_curves(metrics_path, path) -> None:
    """Reconstruction/KL curves from a metrics log, smoothed over 100 steps."""
    steps, recon, kl = [], [], []
    with open(metrics_path, "r", encoding="utf-8") as f:
        header = f.readline()
        for line in f:
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 5:
                continue
            steps.append(int(parts[0]))
            recon.append(float(parts[2]))
            kl.append(float(parts[3]))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    for ax, series, label in ((ax1, recon, "reconstruction"), (ax2, kl, "kl")):
        ax.plot(steps, series, lw=0.5, alpha=0.4)
        if len(series) >= 100:
            kernel = np.ones(100) / 100.0
            smooth = np.convolve(series, kernel, mode="valid")
            ax.plot(steps[99:], smooth, lw=1.5)
        ax.set_xlabel("step")
        ax.set_ylabel(label)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
