"""Figure rendering for the report paths: training curves, K sweeps, overlays."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.patches import Rectangle

from .pipeline import SpotReport
from .raster import GrayImage


def render_training_curve(log: list[dict], path: str | Path) -> None:
    """Accuracy-vs-epoch curve with the loss on a twin axis."""
    epochs = [e["epoch"] for e in log]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [e["train_accuracy"] for e in log], color="tab:blue", label="train accuracy")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train accuracy", color="tab:blue")
    ax.set_ylim(0.0, 1.02)
    twin = ax.twinx()
    twin.plot(epochs, [e["train_loss"] for e in log], color="tab:red", alpha=0.6, label="train loss")
    twin.set_ylabel("train loss", color="tab:red")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_k_sweep(rows: list[tuple[int, float]], path: str | Path) -> None:
    """Validation accuracy for each swept neighbor count."""
    ks = [k for k, _ in rows]
    accs = [a for _, a in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ks, accs, marker="o")
    ax.set_xlabel("K")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.02)
    ax.set_xticks(ks)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_overlay(page: GrayImage, report: SpotReport, path: str | Path) -> None:
    """Page image with accepted boxes outlined green and rejected red."""
    fig, ax = plt.subplots(figsize=(page.width / 80, page.height / 80))
    ax.imshow(page.pixels, cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
    for boxes, color in ((report.accepted, "lime"), (report.rejected, "red")):
        for box, _ in boxes:
            ax.add_patch(
                Rectangle((box.x - 0.5, box.y - 0.5), box.w, box.h,
                          fill=False, edgecolor=color, linewidth=1.2)
            )
    ax.set_axis_off()
    fig.tight_layout(pad=0)
    fig.savefig(path, dpi=100)
    plt.close(fig)
