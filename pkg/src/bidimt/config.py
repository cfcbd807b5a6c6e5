"""Declarative run configuration: JSON file plus command-line overrides.

Unknown keys are rejected up front so a typo cannot silently fall back to
a default. The effective (merged) config is echoed into the run directory
and can itself be used as the config file of a later run.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .inference import DecodeConfig
from .model import ModelConfig
from .training import TrainConfig


@dataclass
class DataConfig:
    train_src: str | None = None
    train_tgt: str | None = None
    dev_src: str | None = None
    dev_tgt: str | None = None
    vocab: str | None = None       # shared vocabulary mode
    src_vocab: str | None = None   # split vocabulary mode
    tgt_vocab: str | None = None
    max_len: int = 256
    lowercase: bool = False


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int | None = None

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["train"]["directions"] = list(self.train.directions)
        return out


_SECTIONS = {"model": ModelConfig, "train": TrainConfig,
             "decode": DecodeConfig, "data": DataConfig}


def _coerce(value, target_type):
    if target_type is bool and isinstance(value, str):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse boolean from {value!r}")
    if isinstance(value, str) and target_type in (int, float):
        return target_type(value)
    return value


def _build_section(cls, values: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    kwargs = {}
    for key, value in values.items():
        f = known[key]
        if key == "directions" and isinstance(value, (list, tuple)):
            value = tuple(value)
        elif f.type in ("int", "float", "bool"):
            value = _coerce(value, {"int": int, "float": float, "bool": bool}[f.type])
        kwargs[key] = value
    return cls(**kwargs)


def run_config_from_dict(raw: dict) -> RunConfig:
    raw = dict(raw)
    unknown = set(raw) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTIONS.items():
        values = raw.get(name, {})
        if not isinstance(values, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        sections[name] = _build_section(cls, values, name)
    cfg = RunConfig(seed=raw.get("seed"), **sections)
    if cfg.seed is not None:
        cfg.train.seed = int(cfg.seed)
    return cfg


def load_run_config(path: str | None, overrides=()) -> RunConfig:
    raw = {}
    if path is not None:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        dotted, value = item.split("=", 1)
        parts = dotted.split(".")
        if parts == ["seed"]:
            raw["seed"] = int(value)
            continue
        if len(parts) != 2 or parts[0] not in _SECTIONS:
            raise ConfigError(f"override target {dotted!r} is not section.key")
        section, key = parts
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        raw.setdefault(section, {})[key] = parsed
    return run_config_from_dict(raw)
