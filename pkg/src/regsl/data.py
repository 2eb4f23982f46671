"""Dataset ingestion, synthetic Gaussian blobs, and deterministic splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class Table:
    features: np.ndarray
    labels: np.ndarray
    label_values: tuple[int, ...]  # original label of each 0-based class index

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.label_values)

    def __len__(self):
        return self.features.shape[0]


def load_csv(path) -> Table:
    """Read ``feature_1,...,feature_d,label`` rows.

    Labels are remapped onto 0..K-1 in sorted order; the original values are
    kept in ``label_values``.
    """
    path = Path(path)
    feats, raw = [], []
    width = None
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise DataError(f"{path}:{lineno}: need at least one feature and a label")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            try:
                values = [float(c) for c in row[:-1]]
                label = int(row[-1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"{path}:{lineno}: non-finite feature value")
            feats.append(values)
            raw.append(label)
    if not feats:
        raise DataError(f"{path}: empty file")
    raw = np.array(raw, dtype=np.int64)
    values, labels = np.unique(raw, return_inverse=True)
    return Table(np.array(feats, dtype=np.float64), labels.astype(np.int64),
                 tuple(int(v) for v in values))


def save_csv(path, features, labels) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for x, y in zip(np.asarray(features), np.asarray(labels)):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])
    return path


@dataclass
class Blobs:
    features: np.ndarray
    labels: np.ndarray
    means: np.ndarray

    def __len__(self):
        return len(self.labels)


def blob_means(d: int, num_classes: int, class_separation: float, seed: int) -> np.ndarray:
    """Class means ``separation * u_k`` on a random frame of unit directions.

    The directions are orthonormal when ``num_classes <= d``.
    """
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((d, num_classes))
    if num_classes <= d:
        q, _ = np.linalg.qr(g)
        frame = q.T
    else:
        frame = (g / np.linalg.norm(g, axis=0)).T
    return class_separation * frame


def sample_blobs(n: int, means: np.ndarray, seed: int) -> Blobs:
    """``n`` unit-covariance samples, classes balanced to within one row, shuffled."""
    num_classes, d = means.shape
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % num_classes).astype(np.int64)
    features = means[labels] + rng.standard_normal((n, d))
    return Blobs(features, labels, means)


def make_blobs(n: int, d: int, num_classes: int, class_separation: float, seed: int) -> Blobs:
    if num_classes < 2 or d < 1:
        raise DataError("make_blobs needs num_classes >= 2 and d >= 1")
    means = blob_means(d, num_classes, class_separation, seed)
    return sample_blobs(n, means, seed + 1)


def shifted_means(means: np.ndarray, shift: float, seed: int) -> np.ndarray:
    """Move every class mean by an independent random vector of norm ``shift``."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(means.shape)
    return means + shift * g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass
class Split:
    train_indices: np.ndarray
    val_indices: np.ndarray
    test_indices: np.ndarray


def split(n: int, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0) -> Split:
    """Seeded permutation partition into train/val/test by ``fractions``.

    Sizes are ``round(f * n)`` for val and test; train takes the remainder when
    the fractions sum to one, otherwise ``round(f_train * n)``.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or fractions[0] <= 0:
        raise DataError(f"fractions must be three nonnegative values with train > 0, got {fractions}")
    total = sum(fractions)
    if total > 1 + 1e-12:
        raise DataError(f"fractions sum to {total} > 1")
    n_val = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    if abs(total - 1) <= 1e-12:
        n_train = n - n_val - n_test
    else:
        n_train = min(int(round(fractions[0] * n)), n - n_val - n_test)
    perm = np.random.default_rng(seed).permutation(n)
    return Split(np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
                 np.sort(perm[n_train + n_val:n_train + n_val + n_test]))


def standardize(features: np.ndarray, train_indices) -> np.ndarray:
    """Per-column z-score using statistics of the training rows only."""
    ref = features[train_indices]
    mu = ref.mean(axis=0)
    sd = ref.std(axis=0)
    sd[sd == 0] = 1.0
    return (features - mu) / sd
