"""One JSON file holding every component's settings under namespaced keys.

Example::

    {
      "broker": {"listen": "0.0.0.0:1883", "tokens": ["s3cret"]},
      "ingest": {"broker": "127.0.0.1:1883", "broker_token": "s3cret",
                 "api_tokens": ["api-key"], "data_dir": "data",
                 "profiles": [{"sensor": "house1", "v_max": 140}]},
      "forecast": {"step_s": 600, "train": {"epochs": 100, "hidden_size": 64}},
      "simdevice": {"sensor": "house1", "interval_s": 600, "profile": {"seed": 3}}
    }

Sections are validated for unknown keys only; each command builds its typed
config after merging command-line flags over the section.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from .core import SensorProfile
from .forecast.train import TrainConfig
from .ingestd.daemon import ConfigError, IngestConfig
from .simdevice import LoadProfile


def _names(cls: type) -> frozenset[str]:
    return frozenset(f.name for f in fields(cls))


# nested dicts describe sub-objects; "[]" marks a list of such objects
SCHEMA: dict[str, Any] = {
    "broker": {"listen": None, "tokens": None, "max_frame_bytes": None},
    "ingest": {**{k: None for k in _names(IngestConfig)}, "profiles": {"[]": _names(SensorProfile)}},
    "forecast": {"data_dir": None, "sensors": None, "step_s": None, "repeats": None,
                 "train": {k: None for k in _names(TrainConfig)}},
    "simdevice": {"sensor": None, "broker": None, "token": None, "interval_s": None, "start": None,
                  "count": None, "speedup": None, "supply_voltage": None,
                  "profile": {k: None for k in _names(LoadProfile)}},
}


def check_keys(d: Any, schema: Any, path: str) -> None:
    """Raise :class:`ConfigError` naming the first unknown key's dotted path."""
    if schema is None:
        return
    if isinstance(schema, frozenset):
        schema = {k: None for k in schema}
    if "[]" in schema:
        if not isinstance(d, list):
            raise ConfigError(f"{path}: expected a list")
        for n, item in enumerate(d):
            check_keys(item, schema["[]"], f"{path}[{n}]")
        return
    if not isinstance(d, Mapping):
        raise ConfigError(f"{path}: expected an object")
    for key, value in d.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {path}.{key}" if path else f"unknown config key {key}")
        check_keys(value, schema[key], f"{path}.{key}" if path else key)


@dataclass(frozen=True)
class GlobalConfig:
    broker: dict = field(default_factory=dict)
    ingest: dict = field(default_factory=dict)
    forecast: dict = field(default_factory=dict)
    simdevice: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GlobalConfig":
        check_keys(d, SCHEMA, "")
        return cls(**{k: dict(v) for k, v in d.items()})

    @classmethod
    def load(cls, path: Optional[Union[str, Path]]) -> "GlobalConfig":
        if path is None:
            return cls()
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(raw)
