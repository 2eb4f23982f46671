"""Flat ``section.key = value`` experiment configuration.

A config file holds one assignment per line; ``#`` starts a comment. Values
are numbers, ``true``/``false``, bare strings, or bracketed comma lists such
as ``[128, 128]``. Every key must be known to :data:`SCHEMA`, and values are
converted and checked eagerly so errors name the offending field.

Precedence, lowest first: schema defaults, the config file, ``--set``
overrides, then dedicated command-line flags.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

from .nn import ACTIVATIONS, MAX_LOSS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Field:
    kind: str  # int, float, bool, str, path, ints, floats
    default: Any = None
    choices: tuple[str, ...] | None = None
    check: Callable[[Any], bool] | None = None
    rule: str = ""


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _prob(v):
    return 0 < v < 1


SCHEMA: dict[str, Field] = {
    "run.seed": Field("int", 0),
    # target data
    "data.source": Field("str", "blobs", choices=("blobs", "csv")),
    "data.path": Field("path"),
    "data.n": Field("int", 2000, check=_pos, rule="> 0"),
    "data.d": Field("int", 20, check=_pos, rule="> 0"),
    "data.num_classes": Field("int", 10, check=lambda v: v >= 2, rule=">= 2"),
    "data.separation": Field("float", 3.2, check=_nonneg, rule=">= 0"),
    "data.fractions": Field("floats", (0.8, 0.1, 0.1),
                            check=lambda v: len(v) == 3 and v[0] > 0 and min(v) >= 0
                            and sum(v) <= 1 + 1e-12,
                            rule="three fractions, train > 0, sum <= 1"),
    "data.standardize": Field("bool"),
    # source (pre-training) data
    "source.source": Field("str", "blobs", choices=("blobs", "csv")),
    "source.path": Field("path"),
    "source.n": Field("int", 4000, check=_pos, rule="> 0"),
    "source.shift": Field("float", 3.0, check=_nonneg, rule=">= 0"),
    # network
    "model.hidden": Field("ints", (128, 128), check=lambda v: all(w > 0 for w in v),
                          rule="positive widths"),
    "model.activation": Field("str", "relu", choices=tuple(ACTIVATIONS)),
    "pretrain.epochs": Field("int", 20, check=_nonneg, rule=">= 0"),
    "pretrain.learning_rate": Field("float", 0.05, check=_nonneg, rule=">= 0"),
    "pretrain.batch_size": Field("int", 32, check=_pos, rule="> 0"),
    # label noise
    "noise.mode": Field("str", "independent",
                        choices=("none", "independent", "correlated", "record")),
    "noise.rate": Field("float", 0.6, check=lambda v: 0 <= v <= 1, rule="in [0, 1]"),
    "noise.record": Field("path"),
    "noise.holdout_path": Field("path"),
    "noise.holdout_n": Field("int", 2000, check=_pos, rule="> 0"),
    "noise.aux_hidden": Field("ints", (32,), check=lambda v: all(w > 0 for w in v),
                              rule="positive widths"),
    "noise.aux_target_accuracy": Field("float", 0.75, check=lambda v: 0 < v <= 1, rule="in (0, 1]"),
    "noise.aux_max_epochs": Field("int", 50, check=_pos, rule="> 0"),
    "noise.aux_learning_rate": Field("float", 0.05, check=_pos, rule="> 0"),
    # fine-tuning
    "train.mode": Field("str", "regsl", choices=("vanilla", "regsl")),
    "train.init": Field("path"),
    "train.learning_rate": Field("float", 0.1, check=_nonneg, rule=">= 0"),
    "train.batch_size": Field("int", 32, check=_pos, rule="> 0"),
    "train.epochs": Field("int", 40, check=_nonneg, rule=">= 0"),
    "train.lr_decay": Field("bool", False),
    "train.eval_every": Field("int", 1, check=_pos, rule="> 0"),
    "train.snapshot_every": Field("int", 0, check=_nonneg, rule=">= 0"),
    "constraint.enabled": Field("bool", True),
    "constraint.base_d": Field("float", 1.0, check=_nonneg, rule=">= 0"),
    "constraint.gamma": Field("float", 1.5, check=lambda v: v >= 1, rule=">= 1"),
    "constraint.radii": Field("floats", check=lambda v: len(v) > 0 and min(v) >= 0,
                              rule="nonnegative list"),
    "selflabel.correct": Field("bool", True),
    "selflabel.reweight": Field("bool", True),
    "selflabel.temperature": Field("float", 1.0, check=_pos, rule="> 0"),
    "selflabel.correction_threshold": Field("float", 0.9, check=lambda v: 0 < v <= 1,
                                            rule="in (0, 1]"),
    "selflabel.correction_start_epoch": Field("float", 5.0, check=_nonneg, rule=">= 0"),
    "selflabel.reweight_start_epoch": Field("float", 8.0, check=_nonneg, rule=">= 0"),
    "selflabel.correction_start_step": Field("int", check=_nonneg, rule=">= 0"),
    "selflabel.reweight_start_step": Field("int", check=_nonneg, rule=">= 0"),
    # diagnostics
    "diagnose.snapshot": Field("path"),
    "diagnose.anchor": Field("path"),
    "diagnose.sigmas": Field("floats", (1e-2, 1e-3, 1e-4), check=lambda v: len(v) > 0 and min(v) >= 0,
                             rule="nonnegative list"),
    "diagnose.draws": Field("int", 10, check=_pos, rule="> 0"),
    "diagnose.perturb_biases": Field("bool", True),
    "diagnose.eps": Field("float", 0.1, check=_pos, rule="> 0"),
    "diagnose.delta": Field("float", 0.05, check=_prob, rule="in (0, 1)"),
    "diagnose.C2": Field("float", MAX_LOSS, check=_pos, rule="> 0"),
}


def _scalar(text: str):
    t = text.strip()
    if len(t) >= 2 and t[0] == t[-1] and t[0] in "\"'":
        return t[1:-1]
    return t


def split_value(text: str) -> str | list[str]:
    """Raw value text, or a list of raw item texts for ``[a, b, ...]``."""
    t = text.strip()
    if t.startswith("["):
        if not t.endswith("]"):
            raise ConfigError(f"unterminated list: {text!r}")
        inner = t[1:-1].strip()
        return [_scalar(p) for p in inner.split(",")] if inner else []
    return _scalar(t)


def parse_lines(text: str, origin: str = "<config>") -> dict[str, str | list[str]]:
    out: dict[str, str | list[str]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key}")
        try:
            out[key] = split_value(value)
        except ConfigError as exc:
            raise ConfigError(f"{origin}:{lineno}: {key}: {exc}") from None
    return out


def _convert_one(kind: str, raw: str):
    if kind == "int":
        return int(raw)
    if kind == "float":
        v = float(raw)
        if math.isnan(v):
            raise ValueError("nan is not allowed")
        return v
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return raw


def convert(key: str, raw) -> Any:
    if key not in SCHEMA:
        raise ConfigError(f"{key}: unknown config key")
    f = SCHEMA[key]
    try:
        if f.kind in ("ints", "floats"):
            items = raw if isinstance(raw, list) else [raw]
            value = tuple(_convert_one(f.kind[:-1], r) for r in items)
        else:
            if isinstance(raw, list):
                raise ValueError("expected a single value, got a list")
            value = _convert_one("str" if f.kind == "path" else f.kind, raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    if f.choices is not None and value not in f.choices:
        raise ConfigError(f"{key}: must be one of {', '.join(f.choices)}, got {value!r}")
    if f.check is not None and not f.check(value):
        raise ConfigError(f"{key}: must be {f.rule}, got {format_value(value)}")
    return value


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    return str(value)


class Config(Mapping):
    """Validated settings; missing keys fall back to :data:`SCHEMA` defaults."""

    def __init__(self, values: Mapping[str, Any] | None = None):
        self._values = dict(values or {})

    @classmethod
    def from_raw(cls, raw: Mapping[str, Any]) -> "Config":
        return cls({k: convert(k, v) for k, v in raw.items()})

    @classmethod
    def from_text(cls, text: str, origin: str = "<config>") -> "Config":
        return cls.from_raw(parse_lines(text, origin))

    @classmethod
    def load(cls, path) -> "Config":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"--config: file not found: {path}")
        return cls.from_text(path.read_text(), str(path))

    def __getitem__(self, key):
        if key in self._values:
            return self._values[key]
        if key not in SCHEMA:
            raise KeyError(key)
        return SCHEMA[key].default

    def __iter__(self):
        return iter(sorted(SCHEMA))

    def __len__(self):
        return len(SCHEMA)

    def explicit(self) -> dict[str, Any]:
        return dict(self._values)

    def with_raw(self, raw: Mapping[str, Any]) -> "Config":
        values = dict(self._values)
        values.update({k: convert(k, v) for k, v in raw.items()})
        return Config(values)

    def dumps(self) -> str:
        """Every key with its effective value, sorted; unset optional keys are skipped."""
        lines = [f"{k} = {format_value(self[k])}" for k in self if self[k] is not None]
        return "\n".join(lines) + "\n"

    def require_file(self, key: str) -> Path:
        value = self[key]
        if value is None:
            raise ConfigError(f"{key}: required")
        path = Path(value)
        if not path.is_file():
            raise ConfigError(f"{key}: file not found: {path}")
        return path


def parse_assignment(text: str) -> tuple[str, str | list[str]]:
    """``key=value`` from the command line."""
    if "=" not in text:
        raise ConfigError(f"--set: expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), split_value(value)
