"""Distance-constrained fine-tuning with label correction and loss reweighting."""

from .constraint import DistanceSchedule, exponential_schedule, project
from .diagnostics import BoundInputs, PerturbSpec, kl_gaussian, pacbayes_bound, perturbed_loss
from .nn import Layer, Network, forward, init_network, load_snapshot, save_snapshot
from .noise import NoisyDataset, inject_correlated, inject_independent
from .selflabel import SelfLabelConfig
from .trainer import TrainConfig, evaluate, finetune_regsl, finetune_vanilla, pretrain

__all__ = [
    "BoundInputs", "DistanceSchedule", "Layer", "Network", "NoisyDataset", "PerturbSpec",
    "SelfLabelConfig", "TrainConfig", "evaluate", "exponential_schedule", "finetune_regsl",
    "finetune_vanilla", "forward", "init_network", "inject_correlated", "inject_independent",
    "kl_gaussian", "load_snapshot", "pacbayes_bound", "perturbed_loss", "pretrain", "project",
    "save_snapshot",
]
