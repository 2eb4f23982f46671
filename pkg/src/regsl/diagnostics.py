"""Noise-stability and distance diagnostics, and the fine-tuning PAC-Bayes bound."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import nn
from .constraint import DistanceSchedule
from .nn import MAX_LOSS, Network, check_same_shapes
from .seeding import rng_for


class ParameterError(ValueError):
    pass


DEFAULT_SIGMAS = (1e-2, 1e-3, 1e-4)
DEFAULT_DRAWS = 10


@dataclass(frozen=True)
class PerturbSpec:
    sigma: float
    samples: int = DEFAULT_DRAWS
    seed: int = 0
    perturb_biases: bool = True

    def __post_init__(self):
        if self.sigma < 0:
            raise ParameterError("sigma must be >= 0")
        if self.samples < 1:
            raise ParameterError("samples must be >= 1")


LossFn = Callable[[Network, np.ndarray, np.ndarray], float]


def mean_cross_entropy(net: Network, features, labels) -> float:
    return float(nn.cross_entropy(nn.forward_logits(net, features), labels).mean())


def perturbed_loss(net: Network, features, labels, spec: PerturbSpec,
                   loss_fn: LossFn = mean_cross_entropy) -> tuple[float, float]:
    """Monte-Carlo mean and standard error of the loss under N(0, sigma^2) weight noise.

    Draw ``k`` uses the generator labelled ``perturb:k`` so draws are
    reproducible regardless of how many are taken. ``net`` is left untouched.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if spec.sigma == 0:
        return float(loss_fn(net, features, labels)), 0.0
    work = nn.clone_weights(net)
    values = np.empty(spec.samples)
    for k in range(spec.samples):
        rng = rng_for(spec.seed, f"perturb:{k}")
        for src, dst in zip(net.layers, work.layers):
            dst.weight[...] = src.weight + spec.sigma * rng.standard_normal(src.weight.shape)
            if spec.perturb_biases:
                dst.bias[...] = src.bias + spec.sigma * rng.standard_normal(src.bias.shape)
        v = float(loss_fn(work, features, labels))
        values[k] = v if math.isfinite(v) else MAX_LOSS
    stderr = float(values.std(ddof=1) / math.sqrt(spec.samples)) if spec.samples > 1 else 0.0
    return float(values.mean()), stderr


def squared_distance(net: Network, anchor: Network) -> float:
    check_same_shapes(net, anchor)
    return float(sum(np.sum((a.weight - b.weight) ** 2) for a, b in zip(net.layers, anchor.layers)))


def kl_gaussian(net: Network, anchor: Network, sigma: float) -> float:
    """KL between isotropic Gaussians of std ``sigma`` centred at the two weight sets."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    return squared_distance(net, anchor) / (2.0 * sigma * sigma)


@dataclass(frozen=True)
class BoundInputs:
    """Quantities entering the fine-tuning generalization bound.

    ``B`` holds per-layer spectral-norm bounds of the anchor weights (each > 1),
    ``D`` the per-layer distance radii, ``C1`` the input-norm bound, ``C2`` the
    loss ceiling and ``H`` the largest width (input dimension included).
    """

    B: tuple[float, ...]
    D: tuple[float, ...]
    C1: float
    C2: float
    H: int
    eps: float
    delta: float
    n: int

    def __post_init__(self):
        object.__setattr__(self, "B", tuple(float(b) for b in self.B))
        object.__setattr__(self, "D", tuple(float(d) for d in self.D))
        if len(self.B) != len(self.D) or not self.B:
            raise ParameterError("B and D must be non-empty and of equal length")
        if any(not b > 1 for b in self.B):
            raise ParameterError(f"every B_i must exceed 1, got {self.B}")
        if any(not (d >= 0 and math.isfinite(d)) for d in self.D):
            raise ParameterError(f"every D_i must be finite and >= 0, got {self.D}")
        if not self.C1 >= 1:
            raise ParameterError(f"C1 must be >= 1, got {self.C1}")
        if not self.C2 > 0:
            raise ParameterError(f"C2 must be positive, got {self.C2}")
        if self.H < 1 or self.n < 1:
            raise ParameterError("H and n must be positive integers")
        if not self.eps > 0:
            raise ParameterError("eps must be positive")
        if not 0 < self.delta < 1:
            raise ParameterError(f"delta must lie in (0, 1), got {self.delta}")
        if not 4 * self.L * self.H * self.C2 > 1:
            raise ParameterError("4*L*H*C2 must exceed 1")
        if not self.n / self.delta > 1:
            raise ParameterError("n/delta must exceed 1")

    @property
    def L(self) -> int:
        return len(self.B)


def layer_product_sum(B: Sequence[float], D: Sequence[float]) -> float:
    """sum_i prod_j (B_j + D_j) / (B_i + D_i)."""
    s = [b + d for b, d in zip(B, D)]
    total = math.prod(s)
    return sum(total / si for si in s)


def pacbayes_bound(train_loss: float, inputs: BoundInputs) -> float:
    """Upper bound on expected loss: train loss + eps + PAC-Bayes complexity term."""
    L, H = inputs.L, inputs.H
    alpha = layer_product_sum(inputs.B, inputs.D)
    sum_sq = sum(d * d for d in inputs.D)
    kl_term = (36.0 / inputs.eps**2) * inputs.C1**2 * H * math.log(4 * L * H * inputs.C2) \
        * alpha**2 * sum_sq
    inner = (kl_term + 3.0 * math.log(inputs.n / inputs.delta) + 8.0) / inputs.n
    return float(train_loss + inputs.eps + inputs.C2 * math.sqrt(inner))


def schedule_bound_summary(schedule: DistanceSchedule | Sequence[float]) -> float:
    radii = schedule.radii if isinstance(schedule, DistanceSchedule) else tuple(schedule)
    if any(math.isinf(r) for r in radii):
        raise ParameterError("sum of squared radii is undefined for an infinite radius")
    return float(sum(r * r for r in radii))


def perturbation_radius(sigma: float, H: int, L: int, delta: float) -> float:
    """sigma * sqrt(2 H ln(2 L H / delta)): high-probability spectral norm of the noise."""
    if sigma < 0 or H < 1 or L < 1 or not 0 < delta < 1:
        raise ParameterError("need sigma >= 0, H, L >= 1 and delta in (0, 1)")
    arg = 2 * L * H / delta
    if not arg > 1:
        raise ParameterError("2LH/delta must exceed 1")
    return sigma * math.sqrt(2 * H * math.log(arg))


def spectral_norms(net: Network) -> list[float]:
    return [float(np.linalg.norm(l.weight, 2)) for l in net.layers]


def bound_inputs_for(net: Network, anchor: Network, features, *, D: Sequence[float],
                     eps: float = 0.1, delta: float = 0.05, C2: float = MAX_LOSS,
                     min_B: float = 1.0 + 1e-9) -> BoundInputs:
    """Fill bound inputs from a concrete anchor network and training features.

    B_i is the anchor layer's spectral norm (raised to ``min_B`` when it is
    not above 1); C1 is the largest input norm, at least 1.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    B = tuple(max(b, min_B) for b in spectral_norms(anchor))
    C1 = max(1.0, float(np.linalg.norm(features, axis=1).max()))
    return BoundInputs(B=B, D=tuple(D), C1=C1, C2=C2, H=max(net.widths), eps=eps,
                       delta=delta, n=features.shape[0])


def rank_correlation(values: Sequence[float]) -> float | None:
    """Spearman correlation between layer index and ``values``; None if undefined."""
    from scipy.stats import spearmanr

    values = list(values)
    if len(values) < 2 or len(set(values)) < 2:
        return None
    return float(spearmanr(np.arange(len(values)), values).statistic)
