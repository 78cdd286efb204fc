"""Domain types and electrical math shared by every component.

Quantities are kept in V, A, W, Wh and seconds. Timestamps are integer epoch
milliseconds (UTC) everywhere on the wire and on disk.
"""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, Mapping, Optional

_SENSOR_RE = re.compile(r"^[A-Za-z0-9_-]{1,64}$")

# relative tolerance for the reading's stated power against V*I
POWER_TOLERANCE = 1e-6

DEFAULT_V_RANGE = (90.0, 260.0)
DEFAULT_I_RANGE = (0.0, 40.0)
DEFAULT_MAX_GAP_S = 3600.0


class DomainError(ValueError):
    """An input lies outside the domain of an electrical quantity."""


class UsageError(ValueError):
    """The caller combined otherwise valid arguments incorrectly."""


class SensorId(str):
    """Device identifier: 1 to 64 characters from ``[A-Za-z0-9_-]``."""

    def __new__(cls, value: str) -> "SensorId":
        if isinstance(value, SensorId):
            return value
        if not isinstance(value, str) or not _SENSOR_RE.match(value):
            raise DomainError(f"invalid sensor id {value!r}")
        return super().__new__(cls, value)


def _check_finite(name: str, x: float, non_negative: bool = False) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise DomainError(f"{name} must be a number, got {type(x).__name__}")
    if not math.isfinite(x):
        raise DomainError(f"{name} must be finite, got {x}")
    if non_negative and x < 0:
        raise DomainError(f"{name} must be >= 0, got {x}")
    return float(x)


def instantaneous_power(voltage_rms: float, current_rms: float) -> float:
    """Return P = V * I in watts."""
    v = _check_finite("voltage_rms", voltage_rms, non_negative=True)
    i = _check_finite("current_rms", current_rms, non_negative=True)
    return v * i


def interval_energy(power_w: float, interval_s: float) -> float:
    """Return the energy in watt-hours drawn at ``power_w`` for ``interval_s``."""
    p = _check_finite("power_w", power_w, non_negative=True)
    dt = _check_finite("interval_s", interval_s)
    if dt <= 0:
        raise DomainError(f"interval_s must be > 0, got {interval_s}")
    return p * dt / 3600.0


def ms_to_datetime(ts_ms: int) -> datetime:
    return datetime.fromtimestamp(ts_ms / 1000.0, tz=timezone.utc)


def datetime_to_ms(dt: datetime) -> int:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    delta = dt - datetime(1970, 1, 1, tzinfo=timezone.utc)
    return (delta.days * 86_400 + delta.seconds) * 1000 + delta.microseconds // 1000


def iso_ms(ts_ms: int) -> str:
    """Format epoch milliseconds as ``YYYY-MM-DDTHH:MM:SS.mmmZ``."""
    dt = ms_to_datetime(ts_ms - ts_ms % 1000)
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + f".{ts_ms % 1000:03d}Z"


def parse_iso(text: str) -> datetime:
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


@dataclass(frozen=True)
class PowerReading:
    """One timestamped sample from a sensor.

    Direct construction only checks that each field is in its own domain.
    ``power_w`` is not forced to equal V*I here, because readings coming off
    the wire may disagree and that is what validation reports. Build
    consistent readings with :meth:`measure`.
    """

    sensor: SensorId
    ts_ms: int
    voltage_rms: float
    current_rms: float
    power_w: float
    interval_s: float
    energy_wh: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "sensor", SensorId(self.sensor))
        if isinstance(self.ts_ms, bool) or not isinstance(self.ts_ms, int) or self.ts_ms < 0:
            raise DomainError(f"ts_ms must be a non-negative integer, got {self.ts_ms!r}")
        for name, non_negative in (("voltage_rms", True), ("current_rms", True),
                                   ("power_w", False), ("energy_wh", False), ("interval_s", False)):
            # JSON integers arrive as int; store every quantity as float
            object.__setattr__(self, name, _check_finite(name, getattr(self, name), non_negative))
        if self.interval_s <= 0:
            raise DomainError(f"interval_s must be > 0, got {self.interval_s}")

    @classmethod
    def measure(cls, sensor: str, ts_ms: int, voltage_rms: float,
                current_rms: float, interval_s: float) -> "PowerReading":
        """Derive power and energy from the two measured quantities."""
        p = instantaneous_power(voltage_rms, current_rms)
        return cls(SensorId(sensor), ts_ms, float(voltage_rms), float(current_rms),
                   p, float(interval_s), interval_energy(p, interval_s))

    @property
    def timestamp(self) -> datetime:
        return ms_to_datetime(self.ts_ms)

    def to_document(self) -> dict[str, Any]:
        return {
            "sensor_id": str(self.sensor),
            "ts_ms": self.ts_ms,
            "voltage": self.voltage_rms,
            "current": self.current_rms,
            "power": self.power_w,
            "interval_s": int(self.interval_s) if self.interval_s.is_integer() else self.interval_s,
            "energy_wh": self.energy_wh,
        }

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> "PowerReading":
        """Parse a payload/document, deriving power and energy when absent.

        Raises:
            DomainError: on a missing or ill-typed field.
        """
        try:
            sensor = doc["sensor_id"]
            ts_ms = doc["ts_ms"]
            v = doc["voltage"]
            i = doc["current"]
            interval = doc["interval_s"]
        except (KeyError, TypeError) as exc:
            raise DomainError(f"missing field {exc}") from None
        if isinstance(ts_ms, float) and ts_ms.is_integer():
            ts_ms = int(ts_ms)
        power = doc.get("power")
        if power is None:
            power = instantaneous_power(v, i)
        energy = doc.get("energy_wh")
        if energy is None:
            energy = interval_energy(_check_finite("power", power, non_negative=True), interval)
        return cls(SensorId(sensor), ts_ms, v, i, power, interval, energy)


@dataclass(frozen=True)
class SensorProfile:
    """Plausibility bounds for one sensor."""

    sensor: SensorId
    v_min: float = DEFAULT_V_RANGE[0]
    v_max: float = DEFAULT_V_RANGE[1]
    i_min: float = DEFAULT_I_RANGE[0]
    i_max: float = DEFAULT_I_RANGE[1]
    max_gap_s: float = DEFAULT_MAX_GAP_S

    def __post_init__(self) -> None:
        object.__setattr__(self, "sensor", SensorId(self.sensor))
        if not self.v_min < self.v_max:
            raise DomainError("v_min must be < v_max")
        if not self.i_min < self.i_max:
            raise DomainError("i_min must be < i_max")
        if not self.max_gap_s > 0:
            raise DomainError("max_gap_s must be > 0")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SensorProfile":
        d = dict(d)
        return cls(SensorId(d.pop("sensor")), **{k: float(v) for k, v in d.items()})


class Reason(str, enum.Enum):
    OK = "Ok"
    VOLTAGE_OUT_OF_RANGE = "VoltageOutOfRange"
    CURRENT_OUT_OF_RANGE = "CurrentOutOfRange"
    NON_MONOTONIC_TIMESTAMP = "NonMonotonicTimestamp"
    POWER_MISMATCH = "PowerMismatch"


@dataclass(frozen=True)
class ValidationVerdict:
    reason: Reason

    @property
    def accepted(self) -> bool:
        return self.reason is Reason.OK


def validate_reading(reading: PowerReading, profile: SensorProfile,
                     previous_ts_ms: Optional[int] = None) -> ValidationVerdict:
    """Check a reading against its sensor profile.

    Checks run in a fixed order (voltage, current, power consistency,
    timestamp ordering) and the first failure names the verdict.

    Raises:
        UsageError: if the profile belongs to a different sensor.
    """
    if profile.sensor != reading.sensor:
        raise UsageError(f"profile for {profile.sensor!r} applied to reading from {reading.sensor!r}")
    if not profile.v_min <= reading.voltage_rms <= profile.v_max:
        return ValidationVerdict(Reason.VOLTAGE_OUT_OF_RANGE)
    if not profile.i_min <= reading.current_rms <= profile.i_max:
        return ValidationVerdict(Reason.CURRENT_OUT_OF_RANGE)
    expected = reading.voltage_rms * reading.current_rms
    if abs(reading.power_w - expected) > POWER_TOLERANCE * max(abs(expected), abs(reading.power_w)):
        return ValidationVerdict(Reason.POWER_MISMATCH)
    if previous_ts_ms is not None and reading.ts_ms <= previous_ts_ms:
        return ValidationVerdict(Reason.NON_MONOTONIC_TIMESTAMP)
    return ValidationVerdict(Reason.OK)
