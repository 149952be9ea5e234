"""Figure rendering for the report path.

Everything draws through the Agg backend straight to files; no display is
ever opened. Each function returns the path it wrote.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def training_curves(history: list, path) -> str:
    """Loss and accuracy curves over epochs from train() history rows."""
    if not history:
        raise ValueError("empty training history")
    epochs = [row["epoch"] for row in history]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(epochs, [row["loss"] for row in history], color="tab:red")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("training loss")
    ax_acc.plot(epochs, [row["train_acc"] for row in history], label="train")
    ax_acc.plot(epochs, [row["test_acc"] for row in history], label="test")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0.0, 1.05)
    ax_acc.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def evolution_curve(history: list, path) -> str:
    """Best and mean fitness per generation from evolve() history rows."""
    if not history:
        raise ValueError("empty evolution history")
    gens = [row["generation"] for row in history]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(gens, [row["best_fitness"] for row in history], marker="o",
            label="best")
    ax.plot(gens, [row["mean_fitness"] for row in history], marker=".",
            label="mean")
    ax.set_xlabel("generation")
    ax.set_ylabel("fitness (test accuracy)")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def sweep_curves(rows: list, path) -> str:
    """Accuracy-vs-epoch curves, one line per weight width."""
    if not rows:
        raise ValueError("empty sweep table")
    widths = sorted({row["width"] for row in rows})
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for width in widths:
        pts = [(r["epoch"], r["test_accuracy"]) for r in rows
               if r["width"] == width]
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts],
                label=f"{width}-bit")
    ax.set_xlabel("epoch")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def spike_raster(trains: list, path) -> str:
    """Raster of per-layer [t_steps, units] spike matrices, layers stacked
    with separating lines."""
    if not trains:
        raise ValueError("no spike trains to plot")
    fig, ax = plt.subplots(figsize=(7, 4))
    base = 0
    for li, train in enumerate(trains):
        train = np.asarray(train)
        t_idx, unit_idx = np.nonzero(train)
        ax.scatter(t_idx, unit_idx + base, s=4, marker="|",
                   label=f"layer {li}")
        base += train.shape[1]
        if li < len(trains) - 1:
            ax.axhline(base - 0.5, color="grey", lw=0.5)
    ax.set_xlabel("time step")
    ax.set_ylabel("neuron")
    ax.legend(loc="upper right", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def energy_bars(report, path) -> str:
    """Per-layer spike ratios plus the network ratio as a reference line."""
    ratios = report.per_layer_spike_ratio
    if not ratios:
        raise ValueError("report has no per-layer spike ratios")
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.bar(range(len(ratios)), ratios, color="tab:blue")
    ax.axhline(report.network_spike_ratio, color="tab:red", lw=1,
               label=f"network SR {report.network_spike_ratio:.3f}")
    ax.set_xlabel("layer")
    ax.set_ylabel("spike ratio")
    ax.set_xticks(range(len(ratios)))
    ax.set_title(f"energy ratio {report.energy_ratio_snn_over_ann:.4f}, "
                 f"efficiency {report.efficiency:.2f}x")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)
