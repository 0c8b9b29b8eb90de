"""Run configuration: JSON file -> validated dataclasses, with CLI flags
layered on top (defaults < config file < flags)."""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .contrastive import PretrainConfig
from .encoder import EncoderConfig
from .errors import ConfigError, ContractViolation
from .forecaster import TrainConfig
from .store import ScaleSpec
from .synth import Sinusoid, SynthSpec


@dataclass(frozen=True)
class ModelSettings:
    context_dim: int = 64
    id_dim: int = 8
    heads: int = 4
    flow_layers: int = 4
    flow_hidden: int = 64
    scale_clamp: float = 3.0


@dataclass(frozen=True)
class RunConfig:
    data: str | None = None
    out: str = "out"
    seed: int = 0
    train_frac: float = 0.7
    val_frac: float = 0.1
    backcast: int = 96
    horizons: tuple[int, ...] = (96, 192, 336, 720)
    eval_stride: int = 288
    n_samples: int = 100
    denormalized: bool = False
    encode_cadence: int | None = None          # None: one anchor per day
    scales: tuple[ScaleSpec, ...] | None = None  # None: derive from stride
    no_repr: bool = False
    no_fusion: bool = False
    no_flow: bool = False
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelSettings = field(default_factory=ModelSettings)
    synth: SynthSpec = field(default_factory=SynthSpec)


def _build(cls, raw, path: str):
    """Recursively construct a dataclass from plain JSON data, reporting the
    offending field path on any mismatch."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or cls.__name__}: expected an object, got {raw!r}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{path + '.' if path else ''}{key}: unknown field")
    kwargs = {}
    hints = typing.get_type_hints(cls)
    for name, spec in known.items():
        if name not in raw:
            continue
        where = f"{path + '.' if path else ''}{name}"
        kwargs[name] = _coerce(hints[name], raw[name], where)
    try:
        return cls(**kwargs)
    except (ContractViolation, ConfigError) as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from None


def _coerce(annotation, value, where: str):
    origin = typing.get_origin(annotation)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        (inner, _ellipsis) = typing.get_args(annotation)
        return tuple(_coerce(inner, v, f"{where}[{i}]") for i, v in enumerate(value))
    if dataclasses.is_dataclass(annotation):
        return _build(annotation, value, where)
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported field type {annotation!r}")


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config file (missing path -> pure defaults) and apply flat
    CLI overrides on top."""
    if path is None:
        config = RunConfig()
    else:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        config = _build(RunConfig, raw, "")
    if overrides:
        clean = {k: v for k, v in overrides.items() if v is not None}
        if clean:
            config = dataclasses.replace(config, **clean)
    return config


def config_to_dict(config: RunConfig) -> dict:
    return dataclasses.asdict(config)


__all__ = ["ModelSettings", "RunConfig", "config_to_dict", "load_config",
           "PretrainConfig", "TrainConfig", "EncoderConfig", "SynthSpec",
           "Sinusoid", "ScaleSpec"]
