"""Per-layer Frobenius-ball constraints around an anchor network."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn import Layer, Network, ShapeError, check_same_shapes


class ParameterError(ValueError):
    pass


class DegenerateAnchorError(ValueError):
    pass


@dataclass(frozen=True)
class DistanceSchedule:
    radii: tuple[float, ...]

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        if any(math.isnan(r) or r < 0 for r in radii):
            raise ParameterError(f"radii must be nonnegative, got {radii}")
        object.__setattr__(self, "radii", radii)

    def __len__(self):
        return len(self.radii)

    @classmethod
    def unconstrained(cls, num_layers: int) -> "DistanceSchedule":
        return cls((math.inf,) * num_layers)


def exponential_schedule(base_d: float, gamma: float, num_layers: int) -> DistanceSchedule:
    """Radii ``base_d * gamma**i`` for i = 0..num_layers-1 (bottom layer first)."""
    if gamma < 1:
        raise ParameterError(f"gamma must be >= 1, got {gamma}")
    if base_d < 0:
        raise ParameterError(f"base distance must be >= 0, got {base_d}")
    if num_layers < 1:
        raise ParameterError("num_layers must be positive")
    return DistanceSchedule(tuple(base_d * gamma**i for i in range(num_layers)))


def _check(net: Network, anchor: Network, schedule: DistanceSchedule | None = None):
    check_same_shapes(net, anchor)
    if schedule is not None and len(schedule) != len(net):
        raise ShapeError(f"schedule has {len(schedule)} radii for {len(net)} layers")


def project_weight(w: np.ndarray, anchor_w: np.ndarray, radius: float) -> np.ndarray:
    """Nearest point to ``w`` in the Frobenius ball of ``radius`` around ``anchor_w``.

    Points already inside the ball are returned as-is (same object values,
    no arithmetic), which keeps unconstrained runs bit-identical.
    """
    diff = w - anchor_w
    dist = np.linalg.norm(diff)
    if dist <= radius:
        return w
    return anchor_w + (radius / dist) * diff


def project(net: Network, anchor: Network, schedule: DistanceSchedule) -> Network:
    _check(net, anchor, schedule)
    layers = []
    for layer, ref, radius in zip(net.layers, anchor.layers, schedule.radii):
        w = project_weight(layer.weight, ref.weight, radius)
        layers.append(Layer(w.copy() if w is layer.weight else w, layer.bias.copy(),
                            layer.activation))
    return Network(layers)


def project_inplace(net: Network, anchor: Network, schedule: DistanceSchedule) -> None:
    _check(net, anchor, schedule)
    for layer, ref, radius in zip(net.layers, anchor.layers, schedule.radii):
        w = project_weight(layer.weight, ref.weight, radius)
        if w is not layer.weight:
            layer.weight[...] = w


def layer_distances(net: Network, anchor: Network) -> list[float]:
    _check(net, anchor)
    return [float(np.linalg.norm(l.weight - r.weight)) for l, r in zip(net.layers, anchor.layers)]


def distance_ratios(net: Network, anchor: Network) -> list[float]:
    """Fine-tuned distance of each layer relative to the anchor layer's norm."""
    _check(net, anchor)
    out = []
    for i, (l, r) in enumerate(zip(net.layers, anchor.layers)):
        ref_norm = np.linalg.norm(r.weight)
        if ref_norm == 0:
            raise DegenerateAnchorError(f"anchor layer {i} has zero Frobenius norm")
        out.append(float(np.linalg.norm(l.weight - r.weight) / ref_norm))
    return out


def satisfies(net: Network, anchor: Network, schedule: DistanceSchedule, tol: float = 1e-9) -> bool:
    return all(d <= r + tol for d, r in zip(layer_distances(net, anchor), schedule.radii))


def schedule_from_config(num_layers: int, base_d: float | None = None, gamma: float = 1.0,
                         radii: Sequence[float] | None = None) -> DistanceSchedule | None:
    """Explicit ``radii`` win over ``(base_d, gamma)``; neither given means no constraint."""
    if radii is not None:
        schedule = DistanceSchedule(tuple(radii))
        if len(schedule) != num_layers:
            raise ShapeError(f"{len(schedule)} radii given for {num_layers} layers")
        return schedule
    if base_d is None:
        return None
    return exponential_schedule(base_d, gamma, num_layers)
