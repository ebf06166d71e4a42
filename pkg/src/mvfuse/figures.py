"""Figure rendering for the report paths of the command line tools.

All functions write a PNG next to the delimited output and return the
path. Rendering uses the Agg backend so they work headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 120


def _finish(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_similarity_histogram(counts, edges, tau: float, path) -> Path:
    """Log-scale histogram of cross-view similarities with the tau cut."""
    counts = np.asarray(counts)
    edges = np.asarray(edges)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge",
           color="#4878b0", edgecolor="none")
    ax.axvline(tau, color="#c44e52", linestyle="--", label=f"tau = {tau:g}")
    ax.set_xlabel("cosine similarity")
    ax.set_ylabel("points")
    if counts.any():
        ax.set_yscale("log")
    ax.set_xlim(0.0, 1.0)
    ax.legend(loc="upper left")
    ax.set_title("cross-view agreement")
    return _finish(fig, path)


def save_loss_curve(history, path) -> Path:
    """Mean loss per epoch with the learning rate on a twin axis."""
    epochs = [h.epoch for h in history]
    losses = [h.mean_loss for h in history]
    lrs = [h.lr for h in history]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, losses, marker="o", color="#4878b0", label="mean loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, lrs, color="#c44e52", alpha=0.6, label="lr")
    ax2.set_ylabel("learning rate")
    ax.set_title("head training")
    return _finish(fig, path)


def save_iou_bars(iou, path, ignore_nan: bool = True) -> Path:
    """Per-class IoU bars; absent classes show as empty slots."""
    iou = np.asarray(iou, dtype=np.float64)
    shown = np.where(np.isnan(iou), 0.0, iou) if ignore_nan else iou
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(np.arange(iou.size), 100.0 * shown, color="#4878b0")
    for k in np.nonzero(np.isnan(iou))[0]:
        ax.text(k, 1.0, "absent", rotation=90, ha="center", va="bottom", fontsize=8)
    ax.set_xlabel("class id")
    ax.set_ylabel("IoU [%]")
    ax.set_xticks(np.arange(iou.size))
    ax.set_ylim(0, 100)
    ax.set_title("per-class IoU")
    return _finish(fig, path)


def save_strata_curve(strata, path) -> Path:
    """Mean IoU against planar radius band."""
    mids = [(s.r_lo + s.r_hi) / 2.0 for s in strata]
    vals = [100.0 * s.miou for s in strata]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(mids, vals, marker="o", color="#4878b0")
    ax.set_xlabel("planar radius [m]")
    ax.set_ylabel("mIoU [%]")
    ax.set_ylim(0, 100)
    ax.set_title("mIoU by distance")
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def save_sweep_curve(values, mious, xlabel: str, path) -> Path:
    """Pipeline quality across one swept parameter."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(values, [100.0 * m for m in mious], marker="o", color="#4878b0")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("mIoU [%]")
    ax.set_title(f"sweep over {xlabel}")
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)
