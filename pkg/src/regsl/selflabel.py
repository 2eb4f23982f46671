"""Confidence-thresholded label correction and exponential loss reweighting."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class BatchError(ValueError):
    pass


CORRECTION_THRESHOLD = 0.90


@dataclass(frozen=True)
class SelfLabelConfig:
    """Thresholds and start steps for self-labeling.

    Start indices are optimizer steps; a mechanism is active only when the
    current step is strictly greater than its start. ``correct`` and
    ``reweight`` switch the two mechanisms off independently (ablations).
    """

    correction_start: int = 0
    correction_threshold: float = CORRECTION_THRESHOLD
    reweight_start: int = 0
    temperature: float = 1.0
    correct: bool = True
    reweight: bool = True

    def __post_init__(self):
        if not 0 < self.correction_threshold <= 1:
            raise ValueError(f"correction_threshold must be in (0, 1], got {self.correction_threshold}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.correction_start < 0 or self.reweight_start < 0:
            raise ValueError("start steps must be >= 0")


def maybe_correct(probabilities, current_label: int, step: int, cfg: SelfLabelConfig) -> int | None:
    """The new label if the prediction is confident and disagrees, else None."""
    if not cfg.correct or step <= cfg.correction_start:
        return None
    p = np.asarray(probabilities)
    top = int(np.argmax(p))  # first maximum, i.e. lowest index on ties
    if p[top] > cfg.correction_threshold and top != int(current_label):
        return top
    return None


def correct_batch(probabilities: np.ndarray, labels: np.ndarray, step: int,
                  cfg: SelfLabelConfig) -> np.ndarray:
    """Vectorized ``maybe_correct``: boolean mask of rows to relabel to their argmax."""
    if not cfg.correct or step <= cfg.correction_start:
        return np.zeros(len(labels), dtype=bool)
    top = np.argmax(probabilities, axis=1)
    conf = probabilities[np.arange(len(labels)), top]
    return (conf > cfg.correction_threshold) & (top != labels)


def weight(loss_value: float, step: int, cfg: SelfLabelConfig) -> float:
    if not cfg.reweight or step <= cfg.reweight_start:
        return 1.0
    return math.exp(-loss_value / cfg.temperature)


def batch_weights(losses: np.ndarray, step: int, cfg: SelfLabelConfig | None) -> np.ndarray:
    if cfg is None or not cfg.reweight or step <= cfg.reweight_start:
        return np.ones(len(losses))
    return np.exp(-np.asarray(losses) / cfg.temperature)


def weighted_batch_loss(losses: Sequence[float], weights: Sequence[float]) -> float:
    losses = np.asarray(losses, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if losses.size == 0:
        raise BatchError("empty batch")
    if losses.shape != weights.shape:
        raise BatchError(f"{losses.size} losses but {weights.size} weights")
    total = weights.sum()
    if not total > 0:
        raise BatchError("weights must have a positive sum")
    return float(np.dot(weights / total, losses))


def correction_precision(events: Iterable[tuple[int, int, int]]) -> float | None:
    """Fraction of relabel events ``(old, new, true)`` whose new label is the true one."""
    events = list(events)
    if not events:
        return None
    return sum(new == true for _, new, true in events) / len(events)


def group_means(values, noise_mask) -> tuple[float | None, float | None]:
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(noise_mask, dtype=bool)
    if values.shape != mask.shape:
        raise ValueError("values and mask lengths differ")
    clean = float(values[~mask].mean()) if (~mask).any() else None
    noisy = float(values[mask].mean()) if mask.any() else None
    return clean, noisy


def weight_gap(weights, noise_mask) -> tuple[float | None, float | None]:
    """Mean normalized weight ``w / sum(w)`` of clean and of noise-masked points."""
    weights = np.asarray(weights, dtype=np.float64)
    return group_means(weights / weights.sum(), noise_mask)
