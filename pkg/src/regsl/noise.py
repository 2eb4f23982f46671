"""Label-noise models: uniform independent flips and auxiliary-network predictions."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import Network, forward_logits


class ParameterError(ValueError):
    pass


@dataclass
class NoisyDataset:
    """Training rows with injected label noise.

    ``working_labels`` is the only field that changes after construction (label
    correction writes to it). ``noisy_labels`` and ``noise_mask`` record the
    injection itself and are read-only.
    """

    features: np.ndarray
    true_labels: np.ndarray
    noisy_labels: np.ndarray
    working_labels: np.ndarray | None = None
    num_classes: int | None = None
    noise_mask: np.ndarray = field(init=False)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.true_labels = _frozen(self.true_labels)
        self.noisy_labels = _frozen(self.noisy_labels)
        if self.working_labels is None:
            self.working_labels = self.noisy_labels
        self.working_labels = np.array(self.working_labels, dtype=np.int64)
        self.noise_mask = self.noisy_labels != self.true_labels
        self.noise_mask.flags.writeable = False
        n = self.features.shape[0]
        if not (len(self.true_labels) == len(self.noisy_labels) == len(self.working_labels) == n):
            raise ValueError("features and label arrays must have the same number of rows")
        if self.num_classes is None:
            self.num_classes = int(max(self.true_labels.max(), self.noisy_labels.max())) + 1
        for name in ("true_labels", "noisy_labels", "working_labels"):
            labels = getattr(self, name)
            if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise ValueError(f"{name} out of range for {self.num_classes} classes")

    def __len__(self):
        return self.features.shape[0]

    @classmethod
    def clean(cls, features, labels, num_classes=None) -> "NoisyDataset":
        return cls(features, labels, labels, num_classes=num_classes)

    def copy(self) -> "NoisyDataset":
        """Fresh working labels (reset to the injected ones); other arrays shared."""
        return NoisyDataset(self.features, self.true_labels, self.noisy_labels,
                            num_classes=self.num_classes)


def _frozen(labels) -> np.ndarray:
    out = np.array(labels, dtype=np.int64)
    out.flags.writeable = False
    return out


def inject_independent(labels, rate: float, num_classes: int, seed: int):
    """Flip each label with probability ``rate`` to one of the other classes uniformly.

    Returns ``(noisy_labels, noise_mask)``.
    """
    if not 0.0 <= rate <= 1.0:
        raise ParameterError(f"noise rate must lie in [0, 1], got {rate}")
    if num_classes < 2:
        raise ParameterError("need at least two classes to flip labels")
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    flip = rng.random(len(labels)) < rate
    offsets = rng.integers(1, num_classes, size=len(labels))
    noisy = np.where(flip, (labels + offsets) % num_classes, labels)
    return noisy, noisy != labels


def labels_from_network(net: Network, features, true_labels):
    """Argmax predictions of ``net`` used as noisy labels; ties go to the lowest class."""
    pred = np.argmax(forward_logits(net, features), axis=1).astype(np.int64)
    return pred, pred != np.asarray(true_labels)


@dataclass(frozen=True)
class AuxConfig:
    hidden: tuple[int, ...] = (32,)
    activation: str = "relu"
    target_accuracy: float = 0.75
    max_epochs: int = 50
    learning_rate: float = 0.05
    batch_size: int = 32


@dataclass
class CorrelatedResult:
    noisy_labels: np.ndarray
    noise_mask: np.ndarray
    aux_accuracy: float
    epochs: int
    converged: bool
    network: Network

    @property
    def realized_rate(self) -> float:
        return float(self.noise_mask.mean())


def inject_correlated(features, true_labels, holdout_features, holdout_labels,
                      aux: AuxConfig, seed: int, num_classes: int | None = None) -> CorrelatedResult:
    """Train an auxiliary network on a held-out split and use its predictions as labels.

    Training stops after the first epoch whose accuracy on the target rows
    reaches ``aux.target_accuracy``; if that never happens the final epoch's
    predictions are used and ``converged`` is False.
    """
    from .trainer import TrainConfig, pretrain  # trainer imports this module

    true_labels = np.asarray(true_labels, dtype=np.int64)
    holdout_labels = np.asarray(holdout_labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(max(true_labels.max(), holdout_labels.max())) + 1
    features = np.asarray(features, dtype=np.float64)
    widths = [features.shape[1], *aux.hidden, num_classes]
    state = {"epochs": 0, "converged": False}

    def stop(epoch, net):
        state["epochs"] = epoch
        pred, _ = labels_from_network(net, features, true_labels)
        if np.mean(pred == true_labels) >= aux.target_accuracy:
            state["converged"] = True
            return True
        return False

    cfg = TrainConfig(learning_rate=aux.learning_rate, batch_size=aux.batch_size,
                      epochs=aux.max_epochs, seed=seed)
    train = NoisyDataset.clean(holdout_features, holdout_labels, num_classes)
    net = pretrain(train, widths, cfg, activation=aux.activation, epoch_callback=stop)
    noisy, mask = labels_from_network(net, features, true_labels)
    return CorrelatedResult(noisy, mask, float(np.mean(~mask)), state["epochs"],
                            state["converged"], net)


def realized_noise_rate(ds: NoisyDataset) -> float:
    return float(np.mean(ds.noise_mask)) if len(ds) else 0.0


# -- noise record ------------------------------------------------------------

def write_noise_record(path, true_labels, noisy_labels, header: dict) -> Path:
    """``index,true_label,noisy_label`` CSV preceded by one ``# key=value ...`` line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write("# " + " ".join(f"{k}={v}" for k, v in header.items()) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "true_label", "noisy_label"])
        for i, (t, y) in enumerate(zip(true_labels, noisy_labels)):
            writer.writerow([i, int(t), int(y)])
    return path


def read_noise_record(path):
    """Returns ``(header, true_labels, noisy_labels)``."""
    header = {}
    rows = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, value = tok.partition("=")
                    header[key] = value
                continue
            if line.startswith("index"):
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns")
            rows.append((int(parts[0]), int(parts[1]), int(parts[2])))
    rows.sort()
    true = np.array([r[1] for r in rows], dtype=np.int64)
    noisy = np.array([r[2] for r in rows], dtype=np.int64)
    return header, true, noisy
