"""Training hyperparameters and the flat ``key = value`` run-config format.

A run config file holds every :class:`~maunet.model.ModelConfig` and
:class:`TrainConfig` field, one per line.  ``#`` starts a comment, missing
keys take their defaults, unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 1
    epochs: int = 50
    seed: int = 0
    loss_reduction: str = "mean"
    monitor: str = "mdc"

    def problems(self) -> list[str]:
        out = []
        if not self.learning_rate >= 0:
            out.append(f"learning_rate must be >= 0 (got {self.learning_rate})")
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                out.append(f"{name} must be in [0, 1) (got {getattr(self, name)})")
        if not self.eps > 0:
            out.append(f"eps must be > 0 (got {self.eps})")
        if self.batch_size < 1:
            out.append(f"batch_size must be >= 1 (got {self.batch_size})")
        if self.epochs < 1:
            out.append(f"epochs must be >= 1 (got {self.epochs})")
        if not 0 <= self.seed < 2**64:
            out.append(f"seed must fit in 64 unsigned bits (got {self.seed})")
        if self.loss_reduction not in ("sum", "mean"):
            out.append(f"loss_reduction must be 'sum' or 'mean' (got {self.loss_reduction!r})")
        if self.monitor not in ("mdc", "miou"):
            out.append(f"monitor must be 'mdc' or 'miou' (got {self.monitor!r})")
        return out

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ConfigError("invalid TrainConfig: " + "; ".join(problems))


_SECTIONS = (ModelConfig, TrainConfig)


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(key: str, text: str, hint):
    optional = typing.get_origin(hint) in (typing.Union, types.UnionType)
    if optional:
        if text == "auto":
            return None
        hint = next(a for a in typing.get_args(hint) if a is not type(None))
    try:
        if hint is bool:
            if text not in ("true", "false"):
                raise ValueError("expected true or false")
            return text == "true"
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        return text
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {text!r} ({e})") from None


def serialize_config(model: ModelConfig, train: TrainConfig) -> str:
    """Canonical text: model keys then train keys, in field order."""
    lines = []
    for obj in (model, train):
        lines.append(f"# {type(obj).__name__}")
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> tuple[ModelConfig, TrainConfig]:
    owners = {}
    hints = {}
    for cls in _SECTIONS:
        cls_hints = typing.get_type_hints(cls)
        for f in dataclasses.fields(cls):
            owners[f.name] = cls
            hints[f.name] = cls_hints[f.name]
    values: dict[type, dict[str, object]] = {cls: {} for cls in _SECTIONS}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, val = (part.strip() for part in line.partition("="))
        if key not in owners:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[owners[key]][key] = _parse(key, val, hints[key])
    model = ModelConfig(**values[ModelConfig])
    train = TrainConfig(**values[TrainConfig])
    model.validate()
    train.validate()
    return model, train


def load_config(path) -> tuple[ModelConfig, TrainConfig]:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def save_config(path, model: ModelConfig, train: TrainConfig) -> None:
    Path(path).write_text(serialize_config(model, train), encoding="utf-8", newline="\n")
