"""Series preparation: aggregation, fixed-base indexing, min-max scaling,
sliding windows and the calendar train/test split."""
from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Mapping, Optional

import numpy as np

from ..core import DomainError, datetime_to_ms, ms_to_datetime


class DatasetError(ValueError):
    pass


class SplitError(DatasetError):
    pass


class DegenerateScaler(DatasetError):
    pass


@dataclass(frozen=True)
class Series:
    sensor: str
    timestamps: np.ndarray  # int64 epoch ms, strictly increasing
    values: np.ndarray      # float64

    def __post_init__(self) -> None:
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vs = np.asarray(self.values, dtype=np.float64)
        if ts.ndim != 1 or ts.shape != vs.shape:
            raise DatasetError(f"timestamps {ts.shape} and values {vs.shape} differ")
        if ts.size > 1 and not np.all(np.diff(ts) > 0):
            raise DatasetError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(vs)):
            raise DatasetError("values must be finite")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vs)

    def __len__(self) -> int:
        return int(self.values.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Series):
            return NotImplemented
        return (self.sensor == other.sensor and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.values, other.values))


def aggregate(docs: Iterable[Mapping], step_s: float, field: str = "energy_wh",
              sensor: str = "") -> Series:
    """Sum ``field`` over fixed steps aligned to the epoch.

    Each bucket is stamped with its start time. Buckets without readings are
    omitted, not zero-filled.
    """
    step_ms = int(round(step_s * 1000))
    if step_ms <= 0:
        raise DatasetError("aggregation step must be positive")
    buckets: dict[int, float] = {}
    for d in docs:
        v = d.get(field)
        if v is None:
            continue
        key = (int(d["ts_ms"]) // step_ms) * step_ms
        buckets[key] = buckets.get(key, 0.0) + float(v)
        sensor = sensor or str(d.get("sensor_id", ""))
    keys = sorted(buckets)
    return Series(sensor, np.array(keys, dtype=np.int64),
                  np.array([buckets[k] for k in keys], dtype=np.float64))


def fixed_base_index(series: Series, base_value: float) -> Series:
    """Rescale to an index where ``base_value`` maps to 100."""
    if not np.isfinite(base_value) or base_value <= 0:
        raise DomainError(f"index base must be > 0, got {base_value}")
    return Series(series.sensor, series.timestamps, 100.0 * series.values / base_value)


def month_start(ts_ms: int) -> datetime:
    dt = ms_to_datetime(ts_ms)
    return datetime(dt.year, dt.month, 1, tzinfo=timezone.utc)


def add_months(dt: datetime, n: int) -> datetime:
    m = dt.month - 1 + n
    return dt.replace(year=dt.year + m // 12, month=m % 12 + 1, day=1)


def first_full_month(series: Series) -> Optional[tuple[int, int]]:
    """``[start, end)`` in ms of the first calendar month the series fully
    covers, judged at the series' median step; ``None`` if there is none."""
    if len(series) < 2:
        return None
    ts = series.timestamps
    step = int(np.median(np.diff(ts)))
    start = month_start(int(ts[0]))
    if datetime_to_ms(start) < int(ts[0]):
        start = add_months(start, 1)
    end = datetime_to_ms(add_months(start, 1))
    if int(ts[-1]) + step < end:
        return None
    return datetime_to_ms(start), end


def index_base(train: Series) -> float:
    """Mean of the first full calendar month of the training side, or of the
    whole training side when no month is complete."""
    span = first_full_month(train)
    if span is not None:
        mask = (train.timestamps >= span[0]) & (train.timestamps < span[1])
        if mask.any():
            base = float(train.values[mask].mean())
            if base > 0:
                return base
    return float(train.values.mean())


@dataclass(frozen=True)
class Scaler:
    x_min: float
    x_max: float

    def __post_init__(self) -> None:
        if not self.x_min < self.x_max:
            raise DegenerateScaler(f"x_min {self.x_min} must be < x_max {self.x_max}")

    def normalize(self, v):
        return (np.asarray(v, dtype=np.float64) - self.x_min) / (self.x_max - self.x_min)

    def denormalize(self, u):
        return np.asarray(u, dtype=np.float64) * (self.x_max - self.x_min) + self.x_min


def fit_scaler(values) -> Scaler:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2 or arr.min() == arr.max():
        raise DegenerateScaler("scaler needs at least two distinct values")
    return Scaler(float(arr.min()), float(arr.max()))


def normalize(scaler: Scaler, v):
    return scaler.normalize(v)


def denormalize(scaler: Scaler, u):
    return scaler.denormalize(u)


@dataclass(frozen=True)
class WindowedDataset:
    window_len: int
    inputs: np.ndarray   # (n, window_len), normalized
    targets: np.ndarray  # (n,), normalized

    def __len__(self) -> int:
        return int(self.targets.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WindowedDataset):
            return NotImplemented
        return (self.window_len == other.window_len and np.array_equal(self.inputs, other.inputs)
                and np.array_equal(self.targets, other.targets))


def sliding_windows(values: np.ndarray, window_len: int) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=np.float64)
    if window_len < 1:
        raise DatasetError("window_len must be >= 1")
    if values.size <= window_len:
        raise DatasetError(f"series of length {values.size} too short: need at least {window_len + 1} points")
    view = np.lib.stride_tricks.sliding_window_view(values, window_len)[:-1]
    return np.ascontiguousarray(view), values[window_len:].copy()


def make_windows(series: Series, scaler: Scaler, window_len: int) -> WindowedDataset:
    """Normalize ``series`` and cut it into (window, next value) pairs."""
    x, y = sliding_windows(scaler.normalize(series.values), window_len)
    return WindowedDataset(window_len, x, y)


def split_by_boundary(series: Series, boundary_ms: int) -> tuple[Series, Series]:
    """Points strictly before ``boundary_ms`` train; the rest test."""
    k = int(np.searchsorted(series.timestamps, boundary_ms, side="left"))
    if k == 0 or k == len(series):
        raise SplitError(f"boundary leaves an empty side ({k} of {len(series)} points before it)")
    return (Series(series.sensor, series.timestamps[:k], series.values[:k]),
            Series(series.sensor, series.timestamps[k:], series.values[k:]))
