"""Dataclass configs and the flat key=value config-file format.

The config file is a flat schema whose keys mirror the TrainConfig and
ModelConfig field names (no sections, no nesting).  Unknown keys are hard
errors: a silently ignored typo in a hyperparameter name is the costliest
failure mode for long runs.

Precedence when resolving a run config: command-line overrides > file
values > dataclass defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigurationError

BACKBONES = ("resnet18", "tiny_mlp")
ACTIVATIONS = ("relu", "tanh")
DATASETS = ("cifar10", "synthetic")


@dataclass
class ModelConfig:
    """Architecture of the multi-exit encoder.

    ``num_student_exits`` defaults to the backbone's natural count
    (3 for resnet18, 1 for tiny_mlp) when left as None.
    """

    backbone: str = "resnet18"
    num_student_exits: int | None = None
    feature_dim: int = 128
    hidden_dim: int = 1024
    num_prototypes: int = 60
    temperature: float = 0.5
    activation: str = "relu"
    # tiny_mlp only: flat input width and backbone width
    input_dim: int = 16
    mlp_width: int = 64

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ConfigurationError(
                f"unsupported backbone {self.backbone!r}; expected one of {BACKBONES}"
            )
        if self.num_student_exits is None:
            self.num_student_exits = 3 if self.backbone == "resnet18" else 1
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(
                f"unsupported activation {self.activation!r}; expected one of {ACTIVATIONS}"
            )
        if self.feature_dim < 2:
            raise ConfigurationError("feature_dim must be >= 2")
        if self.num_prototypes < 2:
            raise ConfigurationError("num_prototypes must be >= 2")
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be > 0")
        if self.num_student_exits < 1:
            raise ConfigurationError("num_student_exits must be >= 1")
        if self.backbone == "resnet18" and self.num_student_exits > 3:
            raise ConfigurationError("resnet18 supports at most 3 student exits")
        if self.backbone == "tiny_mlp" and self.num_student_exits != 1:
            raise ConfigurationError("tiny_mlp supports exactly 1 student exit")

    @property
    def num_heads(self) -> int:
        return self.num_student_exits + 1


@dataclass
class TrainConfig:
    """Every hyperparameter of the training pipeline."""

    base_lr: float = 6e-2
    final_lr: float = 3e-4
    warmup_epochs: int = 5
    warmup_start_lr: float = 1e-6
    momentum: float = 0.9
    weight_decay: float = 1e-6
    epochs: int = 150
    batch_size: int = 256
    frozen_proto_iters: int = 5000
    alpha: float = 0.9
    lam: float = 1e-5
    seed: int = 0
    # pipeline flags (recorded in run metadata)
    distill: bool = True
    hints_squared: bool = True
    distill_reduce: str = "sum"  # "sum" | "mean" over student branches
    kmeans_max_iters: int = 100
    dataset: str = "cifar10"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.epochs > 0 and not (0 <= self.warmup_epochs < self.epochs):
            raise ConfigurationError("need 0 <= warmup_epochs < epochs")
        for name in ("base_lr", "final_lr", "warmup_start_lr"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be > 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError("alpha must lie in [0, 1]")
        if self.lam < 0:
            raise ConfigurationError("lam must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.seed < 0:
            raise ConfigurationError("seed must be >= 0")
        if self.distill_reduce not in ("sum", "mean"):
            raise ConfigurationError("distill_reduce must be 'sum' or 'mean'")
        if self.dataset not in DATASETS:
            raise ConfigurationError(
                f"unsupported dataset {self.dataset!r}; expected one of {DATASETS}"
            )

    def without_distillation(self) -> "TrainConfig":
        """Baseline variant: teacher CE only (alpha=0, lam=0, students off)."""
        return dataclasses.replace(self, distill=False, alpha=0.0, lam=0.0)


_TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig) if f.name != "model"}
_MODEL_FIELDS = {f.name: f for f in fields(ModelConfig)}


def _parse_value(key: str, raw: str, typ) -> object:
    raw = raw.strip()
    if typ is bool or raw.lower() in ("true", "false"):
        if raw.lower() == "true":
            return True
        if raw.lower() == "false":
            return False
        raise ConfigurationError(f"key {key!r}: expected true/false, got {raw!r}")
    if typ is int:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigurationError(f"key {key!r}: expected integer, got {raw!r}") from exc
    if typ is float:
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigurationError(f"key {key!r}: expected number, got {raw!r}") from exc
    return raw


def _field_type(f) -> type:
    # `int | None` fields parse as int; plain annotations map to their type
    if f.type in ("int", "int | None"):
        return int
    if f.type == "float":
        return float
    if f.type == "bool":
        return bool
    return str


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse flat `key = value` lines into a raw dict (typed values).

    Blank lines and `#` comments are ignored.  Unknown keys raise
    ConfigurationError naming the key and source.
    """
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(
                f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}"
            )
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key in _TRAIN_FIELDS:
            typ = _field_type(_TRAIN_FIELDS[key])
        elif key in _MODEL_FIELDS:
            typ = _field_type(_MODEL_FIELDS[key])
        else:
            raise ConfigurationError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw, typ)
    return values


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    return parse_config_text(path.read_text(), source=str(path))


def build_train_config(file_values: dict | None = None, overrides: dict | None = None) -> TrainConfig:
    """Assemble a TrainConfig applying precedence: overrides > file > defaults."""
    merged: dict[str, object] = {}
    for layer in (file_values or {}, overrides or {}):
        for key, value in layer.items():
            if key not in _TRAIN_FIELDS and key not in _MODEL_FIELDS:
                raise ConfigurationError(f"unknown config key {key!r}")
            merged[key] = value
    model_kwargs = {k: v for k, v in merged.items() if k in _MODEL_FIELDS}
    train_kwargs = {k: v for k, v in merged.items() if k in _TRAIN_FIELDS}
    return TrainConfig(model=ModelConfig(**model_kwargs), **train_kwargs)


def config_to_flat_dict(config: TrainConfig) -> dict:
    """Flatten TrainConfig + ModelConfig into the file schema's key space."""
    out = {name: getattr(config, name) for name in _TRAIN_FIELDS}
    out.update({name: getattr(config.model, name) for name in _MODEL_FIELDS})
    return out


def format_config(config: TrainConfig) -> str:
    """Render a resolved config back into the flat file format."""
    lines = ["# resolved run configuration"]
    for key, value in config_to_flat_dict(config).items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def write_config_snapshot(config: TrainConfig, path: str | Path) -> None:
    Path(path).write_text(format_config(config))
