"""Configuration records and the flat ``key = value`` config file format.

Keys in a config file are the field names of :class:`ModelConfig`,
:class:`LossWeights` and :class:`TrainConfig` in a single namespace::

    # matched joint VAE, all weights 1
    objective = matched
    epochs = 30
    encoder_hidden = 32
    lambda2 = 10
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

__all__ = [
    "ConfigError",
    "OBJECTIVES",
    "ModelConfig",
    "LossWeights",
    "TrainConfig",
    "parse_config",
    "load_config",
    "dump_config",
]

OBJECTIVES = ("vae", "da", "am", "jvae-approx", "jvae-relaxed", "matched")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 8
    latent_dim: int = 8
    encoder_layers: int = 3
    encoder_hidden: int = 32
    decoder_x_layers: int = 2
    decoder_x_hidden: int = 32
    decoder_y_layers: int = 2
    decoder_y_hidden: int = 32
    da_layers: int = 2
    da_hidden: int = 32
    am_layers: int = 3
    am_hidden: int = 48
    num_classes: int = 10
    splice_context: int = 2

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            low = 0 if f.name == "splice_context" else 1
            if not isinstance(v, int) or v < low:
                raise ConfigError(f"{f.name} must be an integer >= {low}, got {v!r}")

    @property
    def splice_width(self) -> int:
        return 2 * self.splice_context + 1


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda_da: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not v >= 0:
                raise ConfigError(f"{f.name} must be non-negative, got {v!r}")
            object.__setattr__(self, f.name, float(v))

    @classmethod
    def parse(cls, text: str) -> "LossWeights":
        """Parse ``"l1,l2,l3,l_da,beta"``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 5:
            raise ConfigError(f"expected 5 comma-separated weights, got {text!r}")
        try:
            return cls(*(float(p) for p in parts))
        except ValueError:
            raise ConfigError(f"non-numeric weight in {text!r}") from None

    def as_tuple(self) -> tuple:
        return dataclasses.astuple(self)


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    objective: str = "matched"
    epochs: int = 100
    batch_size: int = 4
    seed: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip_norm: float = 5.0
    # which features the plain acoustic model ("am" objective) trains on
    am_features: str = "far"

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.clip_norm > 0:
            raise ConfigError("clip_norm must be positive")
        if self.am_features not in ("far", "close"):
            raise ConfigError("am_features must be 'far' or 'close'")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _convert(name: str, typ: Any, raw: str):
    typ = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {typ}") from None
    return raw


def parse_config(text: str, source: str = "<config>", defaults: dict | None = None) -> TrainConfig:
    """Parse a flat config; ``defaults`` (same keys) apply where the text is silent."""
    sections = {"model": {}, "weights": {}, "train": {}}
    owners = {}
    for cls, key in ((ModelConfig, "model"), (LossWeights, "weights")):
        for f in fields(cls):
            owners[f.name] = (key, f.type)
    for f in fields(TrainConfig):
        if f.name not in ("model", "weights"):
            owners[f.name] = ("train", f.type)

    for key, value in (defaults or {}).items():
        if key not in owners:
            raise ConfigError(f"unknown key {key!r}")
        sections[owners[key][0]][key] = value

    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in owners:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        section, typ = owners[key]
        sections[section][key] = _convert(key, typ, raw)

    return TrainConfig(model=ModelConfig(**sections["model"]),
                       weights=LossWeights(**sections["weights"]),
                       **sections["train"])


def load_config(path, defaults: dict | None = None) -> TrainConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path), defaults)


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for obj in (cfg, cfg.model, cfg.weights):
        for f in fields(obj):
            if f.name in ("model", "weights"):
                continue
            lines.append(f"{f.name} = {getattr(obj, f.name)!r}".replace("'", ""))
    return "\n".join(lines) + "\n"
