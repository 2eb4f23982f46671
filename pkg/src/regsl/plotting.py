"""PNG figures written next to the CSV outputs of each command."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .trainer import EpochMetrics  # noqa: E402

# fixed metadata keeps figures byte-stable across runs
_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def _series(history, name):
    pts = [(r.epoch, getattr(r, name)) for r in history if getattr(r, name) is not None]
    return [p[0] for p in pts], [p[1] for p in pts]


def training_curves(history: Sequence[EpochMetrics], path, title: str = "") -> Path:
    fig, (ax_acc, ax_loss) = plt.subplots(1, 2, figsize=(10, 4))
    for name, label in (("train_accuracy", "train"), ("val_accuracy", "validation"),
                        ("test_accuracy", "test")):
        x, y = _series(history, name)
        if x:
            ax_acc.plot(x, y, marker=".", label=label)
    x, y = _series(history, "generalization_gap")
    if x:
        ax_acc.plot(x, y, linestyle="--", label="train - test")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.legend()
    x, y = _series(history, "train_loss")
    ax_loss.plot(x, y, marker=".")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("training loss")
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def distance_curves(history: Sequence[EpochMetrics], path, radii: Sequence[float] | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [r.epoch for r in history]
    num_layers = len(history[0].layer_distances)
    for i in range(num_layers):
        line, = ax.plot(epochs, [r.layer_distances[i] for r in history], label=f"layer {i + 1}")
        if radii is not None and radii[i] != float("inf"):
            ax.axhline(radii[i], color=line.get_color(), linestyle=":", linewidth=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("distance from start")
    ax.legend()
    return _save(fig, path)


def selflabel_curves(history: Sequence[EpochMetrics], path) -> Path | None:
    """Correction precision and mean clean/noisy weights; None when nothing to plot."""
    px, py = _series(history, "correction_precision")
    cx, cy = _series(history, "mean_clean_weight")
    nx, ny = _series(history, "mean_noisy_weight")
    if not (px or cx or nx):
        return None
    fig, (ax_p, ax_w) = plt.subplots(1, 2, figsize=(10, 4))
    ax_p.plot(px, py, marker="o")
    ax_p.set_ylim(0, 1.05)
    ax_p.set_xlabel("epoch")
    ax_p.set_ylabel("correction precision")
    ax_w.plot(cx, cy, marker=".", label="clean labels")
    ax_w.plot(nx, ny, marker=".", label="noisy labels")
    ax_w.set_xlabel("epoch")
    ax_w.set_ylabel("mean normalized weight")
    ax_w.legend()
    return _save(fig, path)


def layer_bars(values: Sequence[float], path, ylabel: str) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([str(i + 1) for i in range(len(values))], values)
    ax.set_xlabel("layer")
    ax.set_ylabel(ylabel)
    return _save(fig, path)


def perturbed_loss_plot(sigmas: Sequence[float], means: Sequence[float], errors: Sequence[float],
                        path, base_loss: float) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    pos = [s for s in sigmas if s > 0]
    ax.errorbar([s for s in sigmas if s > 0], [m for s, m in zip(sigmas, means) if s > 0],
                yerr=[e for s, e in zip(sigmas, errors) if s > 0], marker="o", capsize=3)
    ax.axhline(base_loss, color="gray", linestyle=":", label="unperturbed")
    if pos:
        ax.set_xscale("log")
    ax.set_xlabel("sigma")
    ax.set_ylabel("perturbed training loss")
    ax.legend()
    return _save(fig, path)


def grid_bars(labels: Sequence[str], values: Sequence[float], path, best: int | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(labels)), 4))
    colors = ["tab:orange" if i == best else "tab:blue" for i in range(len(values))]
    ax.bar(range(len(values)), values, color=colors)
    ax.set_xticks(range(len(values)), labels, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("final validation accuracy")
    return _save(fig, path)
