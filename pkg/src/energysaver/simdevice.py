"""Synthetic power sensor standing in for the metering hardware.

Load follows a weekday/weekend level, a diurnal cosine peaking mid-afternoon,
rare multiplicative spikes and gaussian noise. Every reading is a pure
function of ``(profile, timestamp)``.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timedelta, timezone
from typing import Any, Callable, Iterator, Mapping, Optional

import numpy as np

from .core import PowerReading, SensorId, instantaneous_power, interval_energy, ms_to_datetime
from .tsstore import canonical_json
from .wirebus import Backoff, Client, ConnectionLost, reading_topic
from .wirebus.client import connect_with_backoff

log = logging.getLogger(__name__)

DEFAULT_SUPPLY_V = 127.0


@dataclass(frozen=True)
class LoadProfile:
    base_power_w: float = 1000.0
    weekday_factor: float = 1.0
    weekend_factor: float = 0.45
    diurnal_amplitude: float = 0.3
    peak_hour: float = 14.0
    spike_probability: float = 0.002
    spike_multiplier: float = 3.0
    noise_sigma: float = 0.05
    utc_offset_h: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name != "seed" and not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite")
        if not 0.0 <= self.spike_probability <= 1.0:
            raise ValueError("spike_probability must lie in [0, 1]")
        if self.weekday_factor < 0 or self.weekend_factor < 0:
            raise ValueError("day factors must be >= 0")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LoadProfile":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown profile keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def expected_power(profile: LoadProfile, ts_ms: int, spike: bool = False) -> float:
    """Noise-free power at ``ts_ms`` (with or without a spike)."""
    local = ms_to_datetime(ts_ms) + timedelta(hours=profile.utc_offset_h)
    factor = profile.weekend_factor if local.weekday() >= 5 else profile.weekday_factor
    hour = local.hour + local.minute / 60 + local.second / 3600
    diurnal = 1.0 + profile.diurnal_amplitude * math.cos(2 * math.pi * (hour - profile.peak_hour) / 24)
    return profile.base_power_w * factor * diurnal * (profile.spike_multiplier if spike else 1.0)


def generate_reading(profile: LoadProfile, ts_ms: int, supply_voltage: float = DEFAULT_SUPPLY_V,
                     sensor: str = "sim", interval_s: float = 600.0) -> PowerReading:
    rng = np.random.default_rng([profile.seed & 0xFFFFFFFF, ts_ms])
    spike = bool(rng.random() < profile.spike_probability)
    noise = float(rng.normal(0.0, 1.0)) * profile.noise_sigma * profile.base_power_w
    power = max(0.0, expected_power(profile, ts_ms, spike) + noise)
    current = power / supply_voltage
    p = instantaneous_power(supply_voltage, current)
    return PowerReading(SensorId(sensor), int(ts_ms), float(supply_voltage), current, p,
                        float(interval_s), interval_energy(p, interval_s))


def generate_stream(profile: LoadProfile, start: datetime, interval_s: float, count: int,
                    sensor: str = "sim", supply_voltage: float = DEFAULT_SUPPLY_V) -> Iterator[PowerReading]:
    start_ms = int(start.replace(tzinfo=start.tzinfo or timezone.utc).timestamp() * 1000)
    step_ms = int(round(interval_s * 1000))
    for k in range(count):
        yield generate_reading(profile, start_ms + k * step_ms, supply_voltage, sensor, interval_s)


def count_for_span(start: datetime, end: datetime, interval_s: float) -> int:
    return int((end - start).total_seconds() // interval_s)


def publish_loop(profile: LoadProfile, address, token: str, sensor_id: str, interval_s: float,
                 start: datetime, count: Optional[int] = None, duration_s: Optional[float] = None,
                 speedup: float = 0.0, supply_voltage: float = DEFAULT_SUPPLY_V,
                 max_connect_attempts: Optional[int] = 5, backoff: Optional[Backoff] = None,
                 sleep: Callable[[float], None] = time.sleep) -> int:
    """Publish readings on ``energysaver/<sensor_id>/reading``; returns how many were sent.

    ``speedup`` compresses simulated time: a reading is sent every
    ``interval_s / speedup`` wall seconds; ``0`` sends as fast as possible.
    Exactly one of ``count`` / ``duration_s`` (simulated seconds) bounds the run.

    Raises:
        ConnectionLost: if the broker could never be reached.
    """
    if (count is None) == (duration_s is None):
        raise ValueError("give exactly one of count or duration_s")
    if count is None:
        count = int(duration_s // interval_s)  # type: ignore[operator]
    topic = reading_topic(SensorId(sensor_id))
    backoff = backoff or Backoff()
    client: Optional[Client] = None
    sent = 0
    try:
        client = connect_with_backoff(address, f"sim-{sensor_id}", token, backoff,
                                      max_attempts=max_connect_attempts, sleep=sleep)
        for reading in generate_stream(profile, start, interval_s, count, sensor_id, supply_voltage):
            payload = canonical_json(reading.to_document()).encode("utf-8")
            while True:
                try:
                    client.publish(topic, payload)
                    break
                except ConnectionLost:
                    log.warning("lost broker after %d readings; reconnecting", sent)
                    client = connect_with_backoff(address, f"sim-{sensor_id}", token, backoff,
                                                  max_attempts=max_connect_attempts, sleep=sleep)
            sent += 1
            if speedup > 0:
                sleep(interval_s / speedup)
    finally:
        if client is not None:
            client.close()
    return sent


def profile_from_json(text: str) -> LoadProfile:
    return LoadProfile.from_dict(json.loads(text))
