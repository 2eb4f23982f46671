"""Mini-batch SGD loops: source pre-training, plain fine-tuning and RegSL.

All three share one loop (:func:`_train`). Plain fine-tuning is the loop with
no projection and unit weights, so an unconstrained RegSL run without
self-labeling reproduces it bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .constraint import DistanceSchedule, layer_distances, project_inplace
from .noise import NoisyDataset
from .seeding import derive_seed, rng_for
from .selflabel import SelfLabelConfig, batch_weights, correct_batch, group_means
from .nn import Network, ShapeError


class DivergenceError(RuntimeError):
    def __init__(self, step: int, what: str = "loss"):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    schedule: DistanceSchedule | None = None
    selflabel: SelfLabelConfig | None = None
    eval_every: int = 1
    lr_decay: bool = False

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be positive")

    def lr_at(self, epoch: int) -> float:
        """Constant, or x0.1 after every third of training when ``lr_decay`` is set."""
        if not self.lr_decay:
            return self.learning_rate
        period = max(1, self.epochs // 3)
        return self.learning_rate * 0.1 ** ((epoch - 1) // period)


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def selflabel_from_epochs(steps: int, correction_start: float = 0, reweight_start: float = 0,
                          **kwargs) -> SelfLabelConfig:
    """Build a :class:`SelfLabelConfig` whose start points are given in epochs."""
    return SelfLabelConfig(correction_start=int(round(correction_start * steps)),
                           reweight_start=int(round(reweight_start * steps)), **kwargs)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_accuracy: float
    layer_distances: list[float]
    val_accuracy: float | None = None
    test_accuracy: float | None = None
    correction_events: int = 0
    corrections_right: int = 0
    correction_precision: float | None = None
    mean_clean_weight: float | None = None
    mean_noisy_weight: float | None = None
    learning_rate: float | None = None

    @property
    def generalization_gap(self) -> float | None:
        if self.test_accuracy is None:
            return None
        return self.train_accuracy - self.test_accuracy


def evaluate(net: Network, features, labels) -> tuple[float, float]:
    """Mean cross-entropy and top-1 accuracy (argmax ties to the lowest class)."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("evaluate needs at least one row")
    logits = nn.forward_logits(net, features)
    losses = nn.cross_entropy(logits, labels)
    return float(losses.mean()), float(np.mean(np.argmax(logits, axis=1) == labels))


EvalSet = tuple[np.ndarray, np.ndarray]
EpochCallback = Callable[[int, Network], "bool | None"]


def _train(ds: NoisyDataset, init: Network, cfg: TrainConfig, *,
           schedule: DistanceSchedule | None, selflabel: SelfLabelConfig | None,
           val: EvalSet | None = None, test: EvalSet | None = None,
           epoch_callback: EpochCallback | None = None) -> tuple[Network, list[EpochMetrics]]:
    X = ds.features
    n = len(ds)
    if X.shape[1] != init.input_width:
        raise ShapeError(f"data has {X.shape[1]} features, network expects {init.input_width}")
    if ds.num_classes > init.num_classes:
        raise ShapeError(f"data has {ds.num_classes} classes, network outputs {init.num_classes}")
    if cfg.epochs and cfg.batch_size > n:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {n}")
    if schedule is not None and len(schedule) != len(init):
        raise ShapeError(f"schedule has {len(schedule)} radii for {len(init)} layers")

    net = nn.clone_weights(init)
    labels = ds.working_labels
    mask = ds.noise_mask
    truth = ds.true_labels

    def snapshot(epoch, events=0, right=0, weight_stats=(None, None), lr=None):
        train_loss, train_acc = evaluate(net, X, labels)
        row = EpochMetrics(epoch, train_loss, train_acc, layer_distances(net, init),
                           correction_events=events, corrections_right=right,
                           correction_precision=right / events if events else None,
                           mean_clean_weight=weight_stats[0], mean_noisy_weight=weight_stats[1],
                           learning_rate=lr)
        if val is not None:
            row.val_accuracy = evaluate(net, *val)[1]
        if test is not None:
            row.test_accuracy = evaluate(net, *test)[1]
        return row

    history = [snapshot(0)]
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch)
        order = rng_for(cfg.seed, f"shuffle:{epoch}").permutation(n)
        events = right = 0
        # per-example normalized weights for this epoch, filled batch by batch
        w_norm = np.full(n, np.nan)
        reweighted = np.zeros(n, dtype=bool)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            cache = nn.forward_cached(net, X[idx])
            logits = cache.logits
            if not np.isfinite(logits).all():
                raise DivergenceError(step)
            if selflabel is not None:
                probs = nn.softmax(logits)
                fix = correct_batch(probs, labels[idx], step, selflabel)
                if fix.any():
                    rows = idx[fix]
                    new = np.argmax(probs[fix], axis=1)
                    labels[rows] = new
                    events += len(rows)
                    right += int(np.sum(new == truth[rows]))
            y = labels[idx]
            losses = nn.cross_entropy(logits, y)
            w = batch_weights(losses, step, selflabel)
            total = w.sum()
            if not (np.isfinite(total) and total > 0):
                raise DivergenceError(step, "weights")
            w_norm[idx] = w / total
            reweighted[idx] = (selflabel is not None and selflabel.reweight
                               and step > selflabel.reweight_start)
            dlogits = nn.ce_logit_grad(logits, y) * (w / total)[:, None]
            grad_w, grad_b = nn.backward_cached(net, cache, dlogits)
            nn.sgd_step(net, grad_w, grad_b, lr)
            if not all(np.isfinite(l.weight).all() and np.isfinite(l.bias).all()
                       for l in net.layers):
                raise DivergenceError(step, "parameters")
            if schedule is not None:
                project_inplace(net, init, schedule)
            step += 1

        weight_stats = (None, None)
        if reweighted.any():
            weight_stats = group_means(w_norm[reweighted], mask[reweighted])
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            history.append(snapshot(epoch, events, right, weight_stats, lr))
        if epoch_callback is not None and epoch_callback(epoch, net):
            break
    return net, history


def pretrain(dataset: NoisyDataset, widths: Sequence[int], cfg: TrainConfig,
             activation: str = "relu", epoch_callback: EpochCallback | None = None) -> Network:
    """Train a freshly initialized network on (clean) source labels."""
    init = nn.init_network(widths, activation, derive_seed(cfg.seed, "init"))
    net, _ = _train(dataset, init, cfg, schedule=None, selflabel=None,
                    epoch_callback=epoch_callback)
    return net


def pretrain_with_history(dataset: NoisyDataset, widths: Sequence[int], cfg: TrainConfig,
                          activation: str = "relu", val: EvalSet | None = None,
                          test: EvalSet | None = None):
    init = nn.init_network(widths, activation, derive_seed(cfg.seed, "init"))
    return _train(dataset, init, cfg, schedule=None, selflabel=None, val=val, test=test)


def finetune_vanilla(dataset: NoisyDataset, init: Network, cfg: TrainConfig,
                     val: EvalSet | None = None, test: EvalSet | None = None,
                     epoch_callback: EpochCallback | None = None):
    """Unconstrained SGD from ``init``; ``cfg.schedule`` and ``cfg.selflabel`` are ignored."""
    return _train(dataset, init, cfg, schedule=None, selflabel=None, val=val, test=test,
                  epoch_callback=epoch_callback)


def finetune_regsl(dataset: NoisyDataset, init: Network, cfg: TrainConfig,
                   val: EvalSet | None = None, test: EvalSet | None = None,
                   epoch_callback: EpochCallback | None = None):
    """Projected SGD with optional label correction and loss reweighting.

    Corrections are written into ``dataset.working_labels``; pass a copy to
    keep the original.
    """
    if cfg.schedule is None:
        raise ValueError("finetune_regsl needs a distance schedule")
    return _train(dataset, init, cfg, schedule=cfg.schedule, selflabel=cfg.selflabel,
                  val=val, test=test, epoch_callback=epoch_callback)


# -- metrics persistence -----------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


METRIC_COLUMNS = ["epoch", "learning_rate", "train_loss", "train_accuracy", "val_accuracy",
                  "test_accuracy", "generalization_gap", "correction_events",
                  "correction_precision", "mean_clean_weight", "mean_noisy_weight"]


def write_metrics_csv(path, history: Sequence[EpochMetrics]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    num_layers = len(history[0].layer_distances) if history else 0
    header = METRIC_COLUMNS + [f"layer_distance_{i}" for i in range(num_layers)]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in history:
            values = [getattr(row, c) for c in METRIC_COLUMNS] + list(row.layer_distances)
            writer.writerow([_cell(v) for v in values])
    return path


def read_metrics_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({k: (None if v == "" else float(v)) for k, v in r.items()})
    return out
