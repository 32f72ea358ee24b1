"""Run configuration: nested dataclasses, strict JSON loading, dotted overrides."""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

from .data import AugmentConfig, SynthSpec
from .model import ModelConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 25
    batch_size: int = 32
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    schedule: str = "constant"  # or "cosine"
    grad_clip: Optional[float] = None
    max_steps: Optional[int] = None
    eval_every: int = 1
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    checkpoint_dir: Optional[str] = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError(f"epochs and batch_size must be >= 1, got {self.epochs}, {self.batch_size}")
        if self.schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")


@dataclass
class DataConfig:
    manifest: Optional[str] = None  # manifest.json, or a class-folder root to scan
    ratios: tuple = (0.8, 0.1, 0.1)
    split_seed: int = 0


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])

    def set_seed(self, seed: int) -> None:
        self.model.seed = seed
        self.train.seed = seed

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def _build(cls, d: Any, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(d).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(where + k for k in unknown)}")
    kw = {}
    for k, v in d.items():
        t = hints[k]
        if dataclasses.is_dataclass(t):
            kw[k] = _build(t, v, f"{where}{k}.")
        elif t is tuple and isinstance(v, list):
            kw[k] = tuple(v)
        else:
            kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where or 'config'}: {e}") from e


def from_dict(d: dict) -> RunConfig:
    version = d.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}; expected {SCHEMA_VERSION}")
    return _build(RunConfig, d, "")


def load_config(path=None, overrides=()) -> RunConfig:
    d: dict = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
    for ov in overrides:
        apply_override(d, ov)
    return from_dict(d)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(d: dict, override: str) -> None:
    """Apply ``a.b.c=value`` in place; the value is parsed as JSON when possible."""
    if "=" not in override:
        raise ConfigError(f"override {override!r} is not of the form key=value")
    key, text = override.split("=", 1)
    parts = key.strip().split(".")
    node = d
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-object")
    node[parts[-1]] = _parse_value(text)
