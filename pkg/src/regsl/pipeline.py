"""Turn a :class:`~regsl.config.Config` into datasets, networks and train settings.

Every random stage draws from ``derive_seed(run.seed, label)`` with its own
label, so for example changing the noise rate leaves the data draw and the
pre-trained network untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .config import Config, ConfigError
from .constraint import DistanceSchedule, schedule_from_config
from .data import DataError, blob_means, load_csv, sample_blobs, shifted_means, split, standardize
from .noise import (AuxConfig, NoisyDataset, inject_correlated, inject_independent,
                    read_noise_record)
from .seeding import derive_seed
from .selflabel import SelfLabelConfig
from .trainer import TrainConfig, pretrain, steps_per_epoch


@dataclass
class Target:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    means: np.ndarray | None  # class means when generated, for the source task


@dataclass
class Prepared:
    """Target data after splitting and noise injection."""

    target: Target
    noisy_labels: np.ndarray  # one per target row
    noise_header: dict
    train: NoisyDataset
    val: tuple[np.ndarray, np.ndarray] | None
    test: tuple[np.ndarray, np.ndarray] | None


def _load(cfg: Config, key: str):
    path = cfg.require_file(key)
    try:
        return load_csv(path)
    except DataError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def load_target(cfg: Config) -> Target:
    seed = cfg["run.seed"]
    if cfg["data.source"] == "csv":
        t = _load(cfg, "data.path")
        feats = t.features
        if cfg["data.standardize"] is not False:
            parts = split(len(t), cfg["data.fractions"], derive_seed(seed, "split"))
            feats = standardize(feats, parts.train_indices)
        return Target(feats, t.labels, t.num_classes, None)
    k = cfg["data.num_classes"]
    means = blob_means(cfg["data.d"], k, cfg["data.separation"], derive_seed(seed, "frame"))
    blobs = sample_blobs(cfg["data.n"], means, derive_seed(seed, "target"))
    feats = blobs.features
    if cfg["data.standardize"]:
        parts = split(len(feats), cfg["data.fractions"], derive_seed(seed, "split"))
        feats = standardize(feats, parts.train_indices)
    return Target(feats, blobs.labels, k, means)


def load_source(cfg: Config, target: Target) -> NoisyDataset:
    if cfg["source.source"] == "csv":
        t = _load(cfg, "source.path")
        if t.d != target.features.shape[1]:
            raise ConfigError(f"source.path: {t.d} features, target data has {target.features.shape[1]}")
        return NoisyDataset.clean(t.features, t.labels, max(t.num_classes, target.num_classes))
    if target.means is None:
        raise ConfigError("source.source: blobs source needs blobs target data; set source.path")
    seed = cfg["run.seed"]
    means = shifted_means(target.means, cfg["source.shift"], derive_seed(seed, "shift"))
    blobs = sample_blobs(cfg["source.n"], means, derive_seed(seed, "source"))
    return NoisyDataset.clean(blobs.features, blobs.labels, target.num_classes)


def corrupt(cfg: Config, target: Target) -> tuple[np.ndarray, dict]:
    """Noisy labels for every target row, plus the header for the noise record."""
    mode = cfg["noise.mode"]
    seed = cfg["run.seed"]
    header = {"mode": mode, "seed": seed}
    if mode == "none":
        noisy = target.labels.copy()
    elif mode == "independent":
        header["rate"] = cfg["noise.rate"]
        noisy, _ = inject_independent(target.labels, cfg["noise.rate"], target.num_classes,
                                      derive_seed(seed, "noise"))
    elif mode == "correlated":
        if cfg["noise.holdout_path"] is not None:
            held = _load(cfg, "noise.holdout_path")
            hx, hy = held.features, held.labels
        elif target.means is not None:
            held = sample_blobs(cfg["noise.holdout_n"], target.means, derive_seed(seed, "holdout"))
            hx, hy = held.features, held.labels
        else:
            raise ConfigError("noise.holdout_path: required for correlated noise on CSV data")
        aux = AuxConfig(hidden=cfg["noise.aux_hidden"], activation=cfg["model.activation"],
                        target_accuracy=cfg["noise.aux_target_accuracy"],
                        max_epochs=cfg["noise.aux_max_epochs"],
                        learning_rate=cfg["noise.aux_learning_rate"],
                        batch_size=min(cfg["train.batch_size"], len(hy)))
        res = inject_correlated(target.features, target.labels, hx, hy, aux,
                                seed=derive_seed(seed, "noise"), num_classes=target.num_classes)
        noisy = res.noisy_labels
        header.update(aux_accuracy=res.aux_accuracy, aux_epochs=res.epochs,
                      aux_converged=str(res.converged).lower())
    else:  # record
        path = cfg.require_file("noise.record")
        try:
            rec_header, true, noisy = read_noise_record(path)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"noise.record: {exc}") from None
        if len(true) != len(target.labels) or not np.array_equal(true, target.labels):
            raise ConfigError("noise.record: true labels do not match the configured data")
        header["source"] = str(path)
        if "mode" in rec_header:
            header["recorded_mode"] = rec_header["mode"]
    header["realized_rate"] = float(np.mean(noisy != target.labels))
    return np.asarray(noisy, dtype=np.int64), header


def prepare(cfg: Config) -> Prepared:
    target = load_target(cfg)
    noisy, header = corrupt(cfg, target)
    parts = split(len(target.labels), cfg["data.fractions"], derive_seed(cfg["run.seed"], "split"))
    tr = parts.train_indices
    if len(tr) == 0:
        raise ConfigError("data.fractions: empty training split")
    train = NoisyDataset(target.features[tr], target.labels[tr], noisy[tr],
                         num_classes=target.num_classes)

    def held(idx):
        return (target.features[idx], target.labels[idx]) if len(idx) else None

    return Prepared(target, noisy, header, train, held(parts.val_indices), held(parts.test_indices))


def widths(cfg: Config, d: int, num_classes: int) -> list[int]:
    return [d, *cfg["model.hidden"], num_classes]


def _batch(cfg: Config, key: str, n: int) -> int:
    size = cfg[key]
    if size > n:
        raise ConfigError(f"{key}: {size} exceeds the {n} available training rows")
    return size


def pretrain_config(cfg: Config, n: int) -> TrainConfig:
    return TrainConfig(learning_rate=cfg["pretrain.learning_rate"],
                       batch_size=_batch(cfg, "pretrain.batch_size", n),
                       epochs=cfg["pretrain.epochs"], seed=derive_seed(cfg["run.seed"], "pretrain"))


def pretrain_anchor(cfg: Config, target: Target) -> nn.Network:
    source = load_source(cfg, target)
    return pretrain(source, widths(cfg, target.features.shape[1], target.num_classes),
                    pretrain_config(cfg, len(source)), activation=cfg["model.activation"])


def load_anchor(cfg: Config, target: Target) -> nn.Network:
    """The fine-tuning start point: ``train.init`` if given, else pre-trained here."""
    if cfg["train.init"] is None:
        return pretrain_anchor(cfg, target)
    path = cfg.require_file("train.init")
    try:
        net = nn.load_snapshot(path)
    except (ValueError, nn.ShapeError) as exc:
        raise ConfigError(f"train.init: {exc}") from None
    if net.input_width != target.features.shape[1] or net.num_classes < target.num_classes:
        raise ConfigError(f"train.init: network shape {net.widths} does not fit the data")
    return net


def schedule(cfg: Config, num_layers: int) -> DistanceSchedule:
    if not cfg["constraint.enabled"]:
        return DistanceSchedule.unconstrained(num_layers)
    radii = cfg["constraint.radii"]
    if radii is not None and len(radii) != num_layers:
        raise ConfigError(f"constraint.radii: {len(radii)} radii for {num_layers} layers")
    return schedule_from_config(num_layers, base_d=cfg["constraint.base_d"],
                                gamma=cfg["constraint.gamma"], radii=radii)


def selflabel(cfg: Config, n_train: int) -> SelfLabelConfig | None:
    """Step-based settings; explicit ``*_start_step`` keys override the epoch keys."""
    if not (cfg["selflabel.correct"] or cfg["selflabel.reweight"]):
        return None
    steps = steps_per_epoch(n_train, _batch(cfg, "train.batch_size", n_train))

    def start(name):
        explicit = cfg[f"selflabel.{name}_start_step"]
        if explicit is not None:
            return explicit
        return int(round(cfg[f"selflabel.{name}_start_epoch"] * steps))

    return SelfLabelConfig(correction_start=start("correction"), reweight_start=start("reweight"),
                           correction_threshold=cfg["selflabel.correction_threshold"],
                           temperature=cfg["selflabel.temperature"],
                           correct=cfg["selflabel.correct"], reweight=cfg["selflabel.reweight"])


def train_config(cfg: Config, n_train: int, num_layers: int) -> TrainConfig:
    regsl = cfg["train.mode"] == "regsl"
    return TrainConfig(learning_rate=cfg["train.learning_rate"],
                       batch_size=_batch(cfg, "train.batch_size", n_train),
                       epochs=cfg["train.epochs"], seed=derive_seed(cfg["run.seed"], "finetune"),
                       schedule=schedule(cfg, num_layers) if regsl else None,
                       selflabel=selflabel(cfg, n_train) if regsl else None,
                       eval_every=cfg["train.eval_every"], lr_decay=cfg["train.lr_decay"])

