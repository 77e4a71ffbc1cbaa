"""Figures for training runs and ablations (written to files, never shown)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_training_curves(metrics, path, metric="accuracy"):
    """Loss and validation metric per epoch, with LR halvings marked."""
    epochs = [m["epoch"] for m in metrics]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(epochs, [m["train_loss"] for m in metrics], label="train")
    ax1.plot(epochs, [m["val_loss"] for m in metrics], label="val")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(epochs, [m[metric] for m in metrics], color="tab:green")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel(f"val {metric}")
    for m in metrics:
        if m.get("lr_halved"):
            for ax in (ax1, ax2):
                ax.axvline(m["epoch"], color="grey", linestyle=":", linewidth=1)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_ablation(result, path):
    """Bar chart of mean metric per variant with one-std error bars."""
    rows = result.rows
    fig, ax = plt.subplots(figsize=(max(4.0, 1.3 * len(rows)), 3.4))
    xs = range(len(rows))
    ax.bar(xs, [r.mean for r in rows], yerr=[r.std for r in rows], capsize=4, color="tab:blue", alpha=0.8)
    ax.set_xticks(list(xs))
    ax.set_xticklabels([r.label for r in rows], rotation=20, ha="right", fontsize=8)
    ax.set_ylabel(rows[0].metric if rows else "")
    ax.set_title(f"{result.axis} ({result.task}, {len(result.seeds)} seeds)")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
