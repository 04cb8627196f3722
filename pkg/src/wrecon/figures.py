"""Matplotlib figure rendering for the report paths (headless, file output)."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .ioutil import atomic_output
from .metrics import METRIC_NAMES

__all__ = ["save_loss_figure", "save_metric_figure", "save_recon_figure"]


def _save(fig, path):
    with atomic_output(path) as tmp:
        fig.savefig(tmp, format="png", dpi=110, bbox_inches="tight")
    plt.close(fig)


def save_loss_figure(history, path):
    """Training loss and validation PSNR per epoch."""
    epochs = [h.epoch for h in history]
    loss = [h.train_loss for h in history]
    psnr = [h.val_psnr for h in history]
    fig, ax1 = plt.subplots(figsize=(7, 4))
    ax1.plot([e for e, l in zip(epochs, loss) if not math.isnan(l)],
             [l for l in loss if not math.isnan(l)],
             color="tab:blue", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color="tab:blue")
    ax1.set_yscale("log")
    ax2 = ax1.twinx()
    ax2.plot(epochs, psnr, color="tab:red", label="val PSNR")
    ax2.set_ylabel("val PSNR (dB)", color="tab:red")
    fig.tight_layout()
    _save(fig, path)


def save_metric_figure(model_rows, baseline_rows, path, model_label="recon",
                       baseline_label="zero-filled"):
    """Per-image metric scatter for the reconstruction vs the aliased baseline."""
    fig, axes = plt.subplots(2, 2, figsize=(9, 6))
    base = dict(baseline_rows)
    for ax, name in zip(axes.ravel(), METRIC_NAMES):
        xs = np.arange(len(model_rows))
        ax.plot(xs, [vals[name] for _, vals in model_rows], ".", ms=4,
                color="tab:red", label=model_label)
        bvals = [base[i][name] for i, _ in model_rows if i in base]
        if len(bvals) == len(model_rows):
            ax.plot(xs, bvals, ".", ms=4, color="tab:gray", label=baseline_label)
        ax.set_title(name)
        ax.set_xlabel("image")
    axes[0, 0].legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def save_recon_figure(panels, path, window=(0.0, 1.0)):
    """Row of grayscale image panels: (title, image) pairs."""
    fig, axes = plt.subplots(1, len(panels), figsize=(3 * len(panels), 3.2))
    if len(panels) == 1:
        axes = [axes]
    for ax, (title, img) in zip(axes, panels):
        ax.imshow(img, cmap="gray", vmin=window[0], vmax=window[1])
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    _save(fig, path)
