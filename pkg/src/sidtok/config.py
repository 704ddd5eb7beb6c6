"""Training configuration: nested dataclasses, JSON round-trip, dotted overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .numeric import AdamConfig
from .overlap import RegulationConfig
from .schedule import ScheduleConfig
from .tokenizer import TokenizerConfig


@dataclass
class TrainConfig:
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    regulation: RegulationConfig = field(default_factory=RegulationConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optim: AdamConfig = field(default_factory=AdamConfig)
    temperature: float = 0.07
    batch_size: int = 64
    total_steps: int = 5000
    seed: int = 0
    enable_sear: bool = True
    enable_las: bool = True
    enable_par: bool = True
    # progress value used for every step when enable_par is off
    static_tau: float = 0.5
    # rows sampled (without replacement) to seed the k-means codebook init
    init_sample: int = 4096

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if not 0 <= self.static_tau <= 1:
            raise ConfigError("static_tau must lie in [0, 1]")
        if len(self.regulation.eta) != self.tokenizer.L:
            raise ConfigError(f"eta has {len(self.regulation.eta)} thresholds for "
                              f"L={self.tokenizer.L} layers")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return _build(cls, data, "")

    def with_overrides(self, overrides: list[str]) -> "TrainConfig":
        return TrainConfig.from_dict(apply_overrides(self.to_dict(), overrides))


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(prefix + k for k in sorted(unknown))}")
    kwargs = {}
    for name, value in data.items():
        sub = _SECTIONS.get(name) if cls is TrainConfig else None
        kwargs[name] = _build(sub, value, f"{prefix}{name}.") if sub else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


_SECTIONS = {"tokenizer": TokenizerConfig, "regulation": RegulationConfig,
             "schedule": ScheduleConfig, "optim": AdamConfig}


def _leaf_paths(d: dict, prefix=()) -> list[tuple[str, ...]]:
    out = []
    for k, v in d.items():
        if isinstance(v, dict):
            out.extend(_leaf_paths(v, prefix + (k,)))
        else:
            out.append(prefix + (k,))
    return out


def parse_value(text: str) -> Any:
    """JSON literal if it parses (numbers, true/false, lists), else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``key=value`` overrides; a key is a dotted path or a unique leaf name."""
    data = json.loads(json.dumps(data))
    leaves = _leaf_paths(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        path = tuple(key.split("."))
        if path not in leaves:
            matches = [p for p in leaves if p[-1] == key]
            if len(matches) != 1:
                raise ConfigError(f"unknown config key {key!r}" if not matches
                                  else f"ambiguous config key {key!r}")
            path = matches[0]
        node = data
        for part in path[:-1]:
            node = node[part]
        node[path[-1]] = parse_value(raw)
    return data


def load_config(path) -> TrainConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return TrainConfig.from_dict(data)


def save_config(config: TrainConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
