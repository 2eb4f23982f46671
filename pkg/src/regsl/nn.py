"""Small dense feedforward networks with exact gradients.

Weights are stored as ``(out_width, in_width)`` matrices so a layer computes
``act(W @ z + b)``. Everything runs in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")

PROB_FLOOR = 1e-12
# Loss ceiling implied by the probability floor; doubles as the C2 default.
MAX_LOSS = -math.log(PROB_FLOOR)


class ShapeError(ValueError):
    """Raised when array shapes are inconsistent with a network."""


class LabelError(ValueError):
    """Raised when a class index is out of range."""


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or 0 in self.weight.shape:
            raise ShapeError(f"weight must be a non-empty matrix, got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"bias length {self.bias.shape[0]} != output width {self.weight.shape[0]}"
            )

    @property
    def in_width(self) -> int:
        return self.weight.shape[1]

    @property
    def out_width(self) -> int:
        return self.weight.shape[0]


@dataclass
class Network:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a network needs at least one layer")
        for i in range(len(self.layers) - 1):
            if self.layers[i].out_width != self.layers[i + 1].in_width:
                raise ShapeError(
                    f"layer {i} outputs {self.layers[i].out_width} but layer {i + 1} "
                    f"expects {self.layers[i + 1].in_width}"
                )

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_width

    @property
    def input_width(self) -> int:
        return self.layers[0].in_width

    @property
    def widths(self) -> list[int]:
        return [self.input_width] + [layer.out_width for layer in self.layers]

    def __len__(self):
        return len(self.layers)


@dataclass
class Prediction:
    logits: np.ndarray
    probabilities: np.ndarray = field(init=False)

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.probabilities = softmax(self.logits)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def _activate(kind: str, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "tanh":
        return np.tanh(a)
    return a


def _activation_grad(kind: str, a: np.ndarray, h: np.ndarray) -> np.ndarray:
    # derivative of the activation w.r.t. its pre-activation a, given h = act(a)
    if kind == "relu":
        return (a > 0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - h * h
    return np.ones_like(a)


def init_network(widths: Sequence[int], activation: str = "relu", seed: int = 0) -> Network:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.

    ``widths`` runs from input dimension to number of classes; the last layer
    is always linear.
    """
    if len(widths) < 2 or min(widths) < 1:
        raise ShapeError(f"invalid widths {list(widths)}")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        act = "identity" if i == len(widths) - 2 else activation
        layers.append(Layer(w, np.zeros(fan_out), act))
    return Network(layers)


def zeros_like_network(net: Network) -> Network:
    return Network(
        [Layer(np.zeros_like(l.weight), np.zeros_like(l.bias), l.activation) for l in net.layers]
    )


def _check_input(net: Network, x: np.ndarray) -> None:
    if x.shape[-1] != net.input_width:
        raise ShapeError(f"input width {x.shape[-1]} != network input width {net.input_width}")


def forward_logits(net: Network, X: np.ndarray) -> np.ndarray:
    """Logits for a batch ``X`` of shape (n, d); also accepts a single vector."""
    X = np.asarray(X, dtype=np.float64)
    _check_input(net, X)
    h = X
    for layer in net.layers:
        h = _activate(layer.activation, h @ layer.weight.T + layer.bias)
    return h


def forward(net: Network, x) -> Prediction:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"forward expects a feature vector, got shape {x.shape}")
    return Prediction(forward_logits(net, x))


def _check_labels(labels: np.ndarray, num_classes: int) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelError(f"labels must lie in [0, {num_classes}), got range "
                         f"[{labels.min()}, {labels.max()}]")


def cross_entropy(logits: np.ndarray, labels) -> np.ndarray:
    """Per-row -log p[label] computed in log space.

    Values are clamped to [0, -ln(PROB_FLOOR)] and snapped to exactly 0 once the
    label's probability reaches 1 - PROB_FLOOR.
    """
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    _check_labels(labels, logits.shape[1])
    logp = log_softmax(logits)[np.arange(len(labels)), labels]
    out = np.minimum(-logp, MAX_LOSS)
    out[np.exp(logp) >= 1.0 - PROB_FLOOR] = 0.0
    return np.maximum(out, 0.0)


def loss(pred: Prediction, label: int) -> float:
    label = int(label)
    if not 0 <= label < pred.probabilities.shape[-1]:
        raise LabelError(f"label {label} out of range for {pred.probabilities.shape[-1]} classes")
    return float(cross_entropy(pred.logits, [label])[0])


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    post: list[np.ndarray]

    @property
    def logits(self) -> np.ndarray:
        return self.post[-1]


def forward_cached(net: Network, X: np.ndarray) -> ForwardCache:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _check_input(net, X)
    inputs, pre, post = [], [], []
    h = X
    for layer in net.layers:
        inputs.append(h)
        a = h @ layer.weight.T + layer.bias
        h = _activate(layer.activation, a)
        pre.append(a)
        post.append(h)
    return ForwardCache(inputs, pre, post)


def ce_logit_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(cross_entropy)/d(logits) per row; zero where the probability floor binds."""
    p = softmax(logits)
    labels = np.asarray(labels, dtype=np.int64)
    g = p.copy()
    rows = np.arange(len(labels))
    g[rows, labels] -= 1.0
    g[p[rows, labels] < PROB_FLOOR] = 0.0
    return g


def backward_cached(net: Network, cache: ForwardCache, dlogits: np.ndarray):
    """Backpropagate ``dlogits`` (n, K); returns (weight_grads, bias_grads) summed over rows."""
    grad_w = [None] * len(net.layers)
    grad_b = [None] * len(net.layers)
    delta = dlogits
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        delta = delta * _activation_grad(layer.activation, cache.pre[i], cache.post[i])
        grad_w[i] = delta.T @ cache.inputs[i]
        grad_b[i] = delta.sum(axis=0)
        if i:
            delta = delta @ layer.weight
    return grad_w, grad_b


def backward(net: Network, x, label: int):
    """Gradients of the single-example cross-entropy w.r.t. every weight and bias."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"backward expects a feature vector, got shape {x.shape}")
    cache = forward_cached(net, x[None, :])
    labels = np.array([label], dtype=np.int64)
    _check_labels(labels, net.num_classes)
    return backward_cached(net, cache, ce_logit_grad(cache.logits, labels))


def clone_weights(net: Network) -> Network:
    return Network(
        [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in net.layers]
    )


def networks_equal(a: Network, b: Network) -> bool:
    """Exact, entrywise equality of architecture and parameters."""
    if len(a) != len(b):
        return False
    return all(
        la.activation == lb.activation
        and np.array_equal(la.weight, lb.weight)
        and np.array_equal(la.bias, lb.bias)
        for la, lb in zip(a.layers, b.layers)
    )


def check_same_shapes(a: Network, b: Network) -> None:
    if len(a) != len(b):
        raise ShapeError(f"layer counts differ: {len(a)} vs {len(b)}")
    for i, (la, lb) in enumerate(zip(a.layers, b.layers)):
        if la.weight.shape != lb.weight.shape:
            raise ShapeError(f"layer {i} shapes differ: {la.weight.shape} vs {lb.weight.shape}")


def sgd_step(net: Network, grad_w, grad_b, lr: float) -> None:
    for layer, gw, gb in zip(net.layers, grad_w, grad_b):
        layer.weight -= lr * gw
        layer.bias -= lr * gb


# -- snapshot format ---------------------------------------------------------

def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def dumps(net: Network) -> str:
    lines = [f"layers={len(net)}"]
    for i, layer in enumerate(net.layers):
        r, c = layer.weight.shape
        lines.append(f"layer {i} rows {r} cols {c} activation {layer.activation}")
        lines.extend(_fmt(row) for row in layer.weight)
        lines.append(_fmt(layer.bias))
    return "\n".join(lines) + "\n"


def loads(text: str) -> Network:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("layers="):
        raise ValueError("snapshot must start with 'layers=L'")
    count = int(lines[0].split("=", 1)[1])
    pos = 1
    layers = []
    for i in range(count):
        head = lines[pos].split()
        if len(head) != 8 or head[0] != "layer" or int(head[1]) != i:
            raise ValueError(f"line {pos + 1}: malformed layer header {lines[pos]!r}")
        rows, cols, act = int(head[3]), int(head[5]), head[7]
        pos += 1
        w = np.array([[float(v) for v in lines[pos + k].split()] for k in range(rows)])
        if w.shape != (rows, cols):
            raise ValueError(f"layer {i}: expected {rows}x{cols} weights")
        pos += rows
        b = np.array([float(v) for v in lines[pos].split()])
        pos += 1
        layers.append(Layer(w, b, act))
    return Network(layers)


def save_snapshot(net: Network, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(net))
    return path


def load_snapshot(path) -> Network:
    return loads(Path(path).read_text())
