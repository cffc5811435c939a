"""Report figures rendered to files with the Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_metric_curves(report, path: str | Path, title: str = "Cause retrieval") -> Path:
    """Macro P@n, R@n and F1@n against n."""
    ns = list(report.n_values)
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    for i, (name, style) in enumerate((("P@n", "o-"), ("R@n", "s-"), ("F1@n", "^-"))):
        ax.plot(ns, [report.macro[n][i] for n in ns], style, ms=3, lw=1.2, label=name)
    ax.set_xlabel("n")
    ax.set_ylabel("macro average")
    ax.set_ylim(0, 1.02)
    ax.set_xticks(ns if len(ns) <= 20 else ns[::2])
    ax.grid(alpha=0.3)
    ax.legend(frameon=False)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_ablation(result, path: str | Path, n_values=(1, 10, 20)) -> Path:
    """Grouped bars of seed-mean macro F1@n per configuration, with seed spread."""
    configs = result.configs
    width = 0.8 / len(n_values)
    x = np.arange(len(configs))
    fig, ax = plt.subplots(figsize=(6.5, 3.8))
    for j, n in enumerate(n_values):
        means = [result.mean(c, n)[2] for c in configs]
        spread = [np.std([r.report.macro[n][2] for r in result.runs_for(c)]) for c in configs]
        ax.bar(x + (j - (len(n_values) - 1) / 2) * width, means, width, yerr=spread, capsize=2,
               label=f"F1@{n}")
    ax.set_xticks(x)
    ax.set_xticklabels([c.name for c in configs])
    ax.set_ylabel("macro F1 (seed mean)")
    ax.set_ylim(0, 1)
    ax.grid(axis="y", alpha=0.3)
    ax.legend(frameon=False, ncol=len(n_values))
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_loss_trace(ckpt, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    ax.plot(np.arange(1, len(ckpt.loss_trace) + 1), ckpt.loss_trace, lw=1, label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("BCE loss")
    if ckpt.val_trace:
        ax2 = ax.twinx()
        epochs, f1 = zip(*ckpt.val_trace)
        ax2.plot(epochs, f1, "o", ms=3, color="tab:orange", label="val F1@10")
        ax2.set_ylabel("val F1@10")
        ax2.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
