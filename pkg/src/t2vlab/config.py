"""The single JSON run-configuration document.

Sections: model, schedule, train, sampler, data. Every field defaults to the
package defaults; unknown keys anywhere are rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .data import DEFAULT_VOCAB
from .errors import ConfigError
from .model import ModelConfig
from .sampler import SamplerConfig
from .training import TrainConfig


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.012

    def __post_init__(self):
        if not isinstance(self.T, int) or self.T < 2:
            raise ConfigError(f"schedule.T must be an integer >= 2, got {self.T!r}")
        if not 0.0 < self.beta_start <= self.beta_end < 1.0:
            raise ConfigError(
                f"need 0 < beta_start <= beta_end < 1, got ({self.beta_start}, {self.beta_end})"
            )


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    manifest: Optional[str] = None
    num_clips: int = 4
    speed: float = 2.0
    background: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.source not in ("synthetic", "manifest"):
            raise ConfigError(f"data.source must be 'synthetic' or 'manifest', got {self.source!r}")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    schedule: ScheduleConfig
    train: TrainConfig
    sampler: SamplerConfig
    data: DataConfig


_SECTIONS = {
    "model": ModelConfig,
    "schedule": ScheduleConfig,
    "train": TrainConfig,
    "sampler": SamplerConfig,
    "data": DataConfig,
}
_TUPLE_FIELDS = {"channels": int, "vocab": str}


def _build_section(cls, payload: dict, section: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - fields
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in section {section!r}")
    kwargs = {}
    for key, value in payload.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(_TUPLE_FIELDS[key](v) for v in value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section {section!r}: {exc}") from exc


def config_from_dict(document: dict) -> RunConfig:
    if not isinstance(document, dict):
        raise ConfigError("config document must be a JSON object")
    unknown = set(document) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s) {sorted(unknown)}")
    sections = {
        name: _build_section(cls, document.get(name, {}), name)
        for name, cls in _SECTIONS.items()
    }
    return RunConfig(**sections)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(document)


def config_to_dict(cfg: RunConfig) -> dict:
    out = {}
    for name in _SECTIONS:
        section = dataclasses.asdict(getattr(cfg, name))
        for key in _TUPLE_FIELDS:
            if key in section and isinstance(section[key], tuple):
                section[key] = list(section[key])
        out[name] = section
    return out


def default_config() -> RunConfig:
    return config_from_dict({})


# Vocab defaulting happens inside ModelConfig; re-export for config authors.
__all__ = [
    "RunConfig",
    "ScheduleConfig",
    "DataConfig",
    "config_from_dict",
    "config_to_dict",
    "load_config",
    "default_config",
    "DEFAULT_VOCAB",
]
