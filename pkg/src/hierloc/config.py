"""Flat, typed run configuration loaded from a JSON object."""

from __future__ import annotations

import json
import typing
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

from .data import LocationGrid
from .model import ModelConfig
from .training import LEARNING_RATES, WEIGHT_DECAYS, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # data
    data_path: Optional[str] = None
    grid_width: int = 20
    grid_height: int = 20
    slots_per_day: int = 48
    epoch_weekday: int = 6
    split_ratios: tuple = (0.7, 0.2, 0.1)
    # synthetic generator
    n_users: int = 50
    n_days: int = 30
    noise_eps: float = 0.1
    missing_mu: float = 0.1
    # model
    lookback: int = 336
    horizon: int = 48
    segment_length: int = 48
    d_model: int = 128
    d_tod: int = 128
    d_dow: int = 128
    d_loc: int = 256
    d_coord: int = 128
    heads: int = 4
    intra_depth: int = 1
    inter_depth: int = 1
    dropout: float = 0.1
    backbone_depth: int = 14
    backbone_heads: int = 4
    backbone_seed: int = 0
    backbone_weights: Optional[str] = None
    # ablation switches
    use_tokenization: bool = True
    use_hierarchical_attention: bool = True
    use_traj_info: bool = True
    use_task_desc: bool = True
    # semantics
    provider: str = "hashing"
    provider_path: Optional[str] = None
    provider_seed: int = 0
    # training
    learning_rate: float = 5e-4
    weight_decay: float = 0.01
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    sweep_learning_rates: tuple = LEARNING_RATES
    sweep_weight_decays: tuple = WEIGHT_DECAYS
    ablation_seeds: tuple = (0,)
    # output
    out_dir: str = "out"

    @property
    def grid(self) -> LocationGrid:
        return LocationGrid(self.grid_width, self.grid_height)

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


_HINTS = typing.get_type_hints(RunConfig)


def _coerce(key: str, value):
    hint = _HINTS[key]
    optional = typing.get_origin(hint) is typing.Union and type(None) in typing.get_args(hint)
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{key}: null not allowed")
    base = typing.get_args(hint)[0] if optional else hint
    if base is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {type(value).__name__}")
        return tuple(value)
    if base is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if base is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if base is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if base is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{key}: unsupported type {hint}")


def from_mapping(values: dict, base: RunConfig = RunConfig()) -> RunConfig:
    unknown = sorted(set(values) - set(_HINTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = replace(base, **{k: _coerce(k, v) for k, v in values.items()})
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    try:
        values = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(values, dict):
        raise ConfigError(f"{path}: expected a JSON object of key/value pairs")
    return from_mapping(values)


def validate(cfg: RunConfig) -> None:
    if cfg.provider not in ("hashing", "file"):
        raise ConfigError(f"provider: expected 'hashing' or 'file', got {cfg.provider!r}")
    if cfg.provider == "file" and not cfg.provider_path:
        raise ConfigError("provider_path: required when provider is 'file'")
    if not 0 <= cfg.epoch_weekday <= 6:
        raise ConfigError("epoch_weekday: expected 0 (Monday) .. 6 (Sunday)")
    try:
        cfg.grid
        cfg.model_config()
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
