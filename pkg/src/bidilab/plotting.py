"""Figure rendering for the CLI report paths.

Every sweep or training run that writes delimited output also renders a
matplotlib figure next to it; these helpers keep the styling in one place.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_sweep_figure(
    rows: list[dict], x_key: str, y_key: str, path: str | Path,
    title: str = "", ylabel: str | None = None,
) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    xs = [row[x_key] for row in rows]
    ys = [row[y_key] for row in rows]
    ax.plot(xs, ys, marker="o")
    ax.set_xlabel(x_key)
    ax.set_ylabel(ylabel or y_key)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_loss_curve(metrics: list[dict], path: str | Path, title: str = "training loss") -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = [m["step"] for m in metrics]
    for key, label in (("loss", "total"), ("loss_next", "next"), ("loss_mask", "mask")):
        ys = [m.get(key) for m in metrics]
        if any(y is not None for y in ys):
            ax.plot(steps, [y if y is not None else float("nan") for y in ys], label=label)
    ax.set_xlabel("step")
    ax.set_ylabel("mean NLL")
    ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_grid_figure(table: list[dict], path: str | Path, title: str = "grid search") -> Path:
    """Bar chart of dev accuracy per grid cell."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(max(6, len(table) * 0.6), 3.5))
    labels = [f"lr={r['lr']:g}\nbs={r['batch_size']}\nr={r['r_bidir']:g}" for r in table]
    ax.bar(range(len(table)), [r["dev_accuracy"] for r in table])
    ax.set_xticks(range(len(table)))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("dev accuracy")
    ax.set_title(title)
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
