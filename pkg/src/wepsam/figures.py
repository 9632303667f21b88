"""Figure rendering for training and evaluation reports.

Plots are written straight to files next to the delimited outputs; there
is no interactive display."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import METRIC_NAMES


def render_loss_curves(rows, out_path, title="training loss"):
    """Train/validation loss per epoch on a log-scaled y axis."""
    epochs = [r.epoch for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [r.train_loss for r in rows], color="#2a7e43", label="train")
    ax.plot(epochs, [r.val_loss for r in rows], color="#1c1c1c", ls="--",
            label="validation")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean squared error")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def render_metric_summary(report, out_path, title="saliency metrics"):
    """Aggregate bars with per-image values scattered on top."""
    fig, ax = plt.subplots(figsize=(7, 4))
    pos = np.arange(len(METRIC_NAMES))
    means = [report.aggregate[m] for m in METRIC_NAMES]
    ax.bar(pos, means, width=0.6, color="#7aa6c2", zorder=2)
    rng = np.random.default_rng(0)
    for i, metric in enumerate(METRIC_NAMES):
        values = [row[metric] for row in report.per_image.values()]
        jitter = rng.uniform(-0.15, 0.15, size=len(values))
        ax.plot(pos[i] + jitter, values, ".", color="#333333", ms=4,
                alpha=0.6, zorder=3)
    for i, mean in enumerate(means):
        ax.annotate(f"{mean:.3f}", (pos[i], mean), textcoords="offset points",
                    xytext=(0, 4), ha="center", fontsize=8)
    ax.set_xticks(pos, METRIC_NAMES)
    ax.set_ylabel("score")
    ax.set_title(f"{title} (n={len(report.per_image)})")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
