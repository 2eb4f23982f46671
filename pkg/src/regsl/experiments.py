"""Desk-scale transfer task for the noisy-label study.

A source task and a target task share a class frame; the source's class
means are shifted away from the target's, so the pre-trained network is a
useful but imperfect start. The source network is pre-trained
on clean labels, then fine-tuned on target labels corrupted by uniform
noise, comparing plain fine-tuning, distance-constrained fine-tuning, and
the full RegSL procedure.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .constraint import exponential_schedule
from .data import blob_means, sample_blobs, shifted_means, split
from .noise import NoisyDataset, inject_independent
from .nn import Network
from .seeding import derive_seed
from .trainer import (EpochMetrics, TrainConfig, finetune_regsl, finetune_vanilla, pretrain,
                      selflabel_from_epochs, steps_per_epoch)


@dataclass(frozen=True)
class StudyConfig:
    n: int = 2000
    d: int = 20
    num_classes: int = 10
    separation: float = 3.2
    shift: float = 3.0
    n_source: int = 4000
    hidden: tuple[int, ...] = (128, 128)
    noise_rate: float = 0.6
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    pretrain_epochs: int = 20
    pretrain_lr: float = 0.05
    epochs: int = 40
    learning_rate: float = 0.1
    batch_size: int = 32
    base_d: float = 1.0
    gamma: float = 1.5
    temperature: float = 1.0
    reweight_start: float = 8  # epochs
    correction_start: float = 5  # epochs
    correction_threshold: float = 0.9


@dataclass
class Task:
    source: NoisyDataset
    train: NoisyDataset
    val: tuple[np.ndarray, np.ndarray]
    test: tuple[np.ndarray, np.ndarray]


def make_task(cfg: StudyConfig, seed: int) -> Task:
    means = blob_means(cfg.d, cfg.num_classes, cfg.separation, derive_seed(seed, "frame"))
    source_means = shifted_means(means, cfg.shift, derive_seed(seed, "shift"))
    src = sample_blobs(cfg.n_source, source_means, derive_seed(seed, "source"))
    tgt = sample_blobs(cfg.n, means, derive_seed(seed, "target"))
    parts = split(cfg.n, cfg.fractions, derive_seed(seed, "split"))
    tr = parts.train_indices
    noisy, _ = inject_independent(tgt.labels[tr], cfg.noise_rate, cfg.num_classes,
                                  derive_seed(seed, "noise"))
    return Task(
        source=NoisyDataset.clean(src.features, src.labels, cfg.num_classes),
        train=NoisyDataset(tgt.features[tr], tgt.labels[tr], noisy, num_classes=cfg.num_classes),
        val=(tgt.features[parts.val_indices], tgt.labels[parts.val_indices]),
        test=(tgt.features[parts.test_indices], tgt.labels[parts.test_indices]),
    )


@dataclass
class ArmResult:
    name: str
    network: Network
    history: list[EpochMetrics]
    dataset: NoisyDataset

    @property
    def final(self) -> EpochMetrics:
        return self.history[-1]


@dataclass
class StudyResult:
    seed: int
    anchor: Network
    arms: dict[str, ArmResult] = field(default_factory=dict)


ARMS = ("vanilla", "regularization", "selflabel", "regsl")


def run_study(cfg: StudyConfig, seed: int, arms=("vanilla", "regularization", "regsl")) -> StudyResult:
    task = make_task(cfg, seed)
    widths = [cfg.d, *cfg.hidden, cfg.num_classes]
    anchor = pretrain(task.source, widths,
                      TrainConfig(learning_rate=cfg.pretrain_lr, batch_size=cfg.batch_size,
                                  epochs=cfg.pretrain_epochs, seed=derive_seed(seed, "pretrain")))
    steps = steps_per_epoch(len(task.train), cfg.batch_size)
    schedule = exponential_schedule(cfg.base_d, cfg.gamma, len(widths) - 1)
    selflabel = selflabel_from_epochs(steps, correction_start=cfg.correction_start,
                                      reweight_start=cfg.reweight_start,
                                      correction_threshold=cfg.correction_threshold,
                                      temperature=cfg.temperature)
    base = TrainConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
                       epochs=cfg.epochs, seed=derive_seed(seed, "finetune"))
    out = StudyResult(seed, anchor)
    for arm in arms:
        ds = task.train.copy()
        if arm == "vanilla":
            net, hist = finetune_vanilla(ds, anchor, base, val=task.val, test=task.test)
        else:
            arm_cfg = {
                "regularization": replace(base, schedule=schedule),
                "selflabel": replace(base, schedule=schedule.unconstrained(len(schedule)),
                                     selflabel=selflabel),
                "regsl": replace(base, schedule=schedule, selflabel=selflabel),
            }[arm]
            net, hist = finetune_regsl(ds, anchor, arm_cfg, val=task.val, test=task.test)
        out.arms[arm] = ArmResult(arm, net, hist, ds)
    return out
