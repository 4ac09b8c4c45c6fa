"""Render training-run figures next to the delimited metrics output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .train import EpochMetrics, RepetitionAggregate

__all__ = ["save_run_curves", "save_repetition_summary"]


def save_run_curves(epochs: list[EpochMetrics], path: str) -> None:
    """Loss, test accuracy, and spike counts over epochs for one run."""
    xs = [m.epoch for m in epochs]
    fig, axes = plt.subplots(3, 1, figsize=(6, 8), sharex=True)
    axes[0].plot(xs, [m.train_loss for m in epochs], color="tab:red")
    axes[0].set_ylabel("train loss")
    axes[1].plot(xs, [m.test_acc for m in epochs], color="tab:blue")
    axes[1].set_ylabel("test accuracy (%)")
    axes[2].plot(xs, [m.total_spikes for m in epochs], color="k",
                 label="total")
    n_layers = len(epochs[0].layer_spikes) if epochs else 0
    for j in range(n_layers):
        series = [m.layer_spikes[j] for m in epochs]
        if any(series):
            axes[2].plot(xs, series, alpha=0.5, label=f"layer {j}")
    axes[2].set_ylabel("spikes / inference")
    axes[2].set_xlabel("epoch")
    axes[2].legend(fontsize=8)
    for ax in axes:
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_repetition_summary(agg: RepetitionAggregate, path: str) -> None:
    """Final accuracy and spike count per repetition, with mean/max lines."""
    reps = list(range(len(agg.runs)))
    accs = [r.final_accuracy for r in agg.runs]
    spikes = [r.final_spikes for r in agg.runs]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.5))
    ax1.bar(reps, accs, color="tab:blue")
    ax1.axhline(agg.acc_mean, color="k", linestyle="--", linewidth=1,
                label=f"mean {agg.acc_mean:.2f}")
    ax1.axhline(agg.acc_max, color="tab:green", linestyle=":", linewidth=1,
                label=f"max {agg.acc_max:.2f}")
    ax1.set_xlabel("repetition")
    ax1.set_ylabel("final accuracy (%)")
    ax1.legend(fontsize=8)
    ax2.bar(reps, spikes, color="tab:orange")
    ax2.axhline(agg.spikes_mean, color="k", linestyle="--", linewidth=1,
                label=f"mean {agg.spikes_mean:.1f}")
    ax2.axhline(agg.spikes_max, color="tab:green", linestyle=":", linewidth=1,
                label=f"max {agg.spikes_max:.1f}")
    ax2.set_xlabel("repetition")
    ax2.set_ylabel("spikes / inference")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
