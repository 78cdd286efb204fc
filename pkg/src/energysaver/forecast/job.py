"""End-to-end forecast job over the store, and the report it produces."""
from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Any, Optional

import numpy as np

from ..core import datetime_to_ms, iso_ms
from ..tsstore import TsStore, canonical_json
from .data import (DatasetError, Series, aggregate, fit_scaler, fixed_base_index, index_base,
                   make_windows, month_start, split_by_boundary)
from .metrics import Metrics, evaluate, persistence
from .train import TrainConfig, one_step_predictions, predict_horizon, train

log = logging.getLogger(__name__)

FORECAST_NS = "__forecast__"


class JobError(RuntimeError):
    pass


class InsufficientData(JobError):
    pass


@dataclass(frozen=True)
class ForecastConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    step_s: float = 600.0
    repeats: int = 1

    def __post_init__(self) -> None:
        if not self.step_s > 0:
            raise ValueError("step_s must be > 0")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    def to_dict(self) -> dict:
        return {"train": self.train.to_dict(), "step_s": self.step_s, "repeats": self.repeats}

    @classmethod
    def from_dict(cls, d: dict) -> "ForecastConfig":
        d = dict(d)
        tc = TrainConfig(**d.pop("train", {}))
        return cls(train=tc, **d)


def _metrics(m: Metrics) -> dict:
    return m.to_dict()


@dataclass
class ForecastReport:
    sensor: str
    trained_at_ms: int
    train_range: tuple[int, int]
    test_range: tuple[int, int]
    base_value: float
    x_min: float
    x_max: float
    one_step: Metrics
    recursive: Metrics
    persistence: Metrics
    predictions: list[tuple[int, float]]
    recursive_predictions: list[tuple[int, float]]
    loss_history: list[float]
    config: dict
    n_train: int
    n_test: int
    repeats_mean: Optional[dict] = None

    @property
    def mse(self) -> float:
        return self.one_step.mse

    @property
    def rmse(self) -> float:
        return self.one_step.rmse

    @property
    def mae(self) -> float:
        return self.one_step.mae

    def to_dict(self) -> dict[str, Any]:
        d = {
            "sensor": self.sensor,
            "trained_at": iso_ms(self.trained_at_ms),
            "trained_at_ms": self.trained_at_ms,
            "train_range": list(self.train_range),
            "test_range": list(self.test_range),
            "base_value": self.base_value,
            "scaler": {"x_min": self.x_min, "x_max": self.x_max},
            "mse": self.mse, "rmse": self.rmse, "mae": self.mae,
            "one_step": _metrics(self.one_step),
            "recursive": _metrics(self.recursive),
            "persistence": _metrics(self.persistence),
            "predictions": [[t, v] for t, v in self.predictions],
            "recursive_predictions": [[t, v] for t, v in self.recursive_predictions],
            "loss_history": list(self.loss_history),
            "config": self.config,
            "n_train": self.n_train,
            "n_test": self.n_test,
        }
        if self.repeats_mean is not None:
            d["repeats_mean"] = self.repeats_mean
        return d

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ForecastReport":
        return cls(
            sensor=d["sensor"], trained_at_ms=d["trained_at_ms"],
            train_range=tuple(d["train_range"]), test_range=tuple(d["test_range"]),
            base_value=d["base_value"], x_min=d["scaler"]["x_min"], x_max=d["scaler"]["x_max"],
            one_step=Metrics(**d["one_step"]), recursive=Metrics(**d["recursive"]),
            persistence=Metrics(**d["persistence"]),
            predictions=[(int(t), float(v)) for t, v in d["predictions"]],
            recursive_predictions=[(int(t), float(v)) for t, v in d["recursive_predictions"]],
            loss_history=list(d["loss_history"]), config=d["config"],
            n_train=d["n_train"], n_test=d["n_test"], repeats_mean=d.get("repeats_mean"),
        )

    def summary(self) -> str:
        lines = [
            f"sensor            {self.sensor}",
            f"trained_at        {iso_ms(self.trained_at_ms)}",
            f"train             {iso_ms(self.train_range[0])} .. {iso_ms(self.train_range[1])} ({self.n_train} points)",
            f"test              {iso_ms(self.test_range[0])} .. {iso_ms(self.test_range[1])} ({self.n_test} points)",
            f"one_step          mse={self.one_step.mse:.6f} rmse={self.one_step.rmse:.6f} mae={self.one_step.mae:.6f}",
            f"recursive         mse={self.recursive.mse:.6f} rmse={self.recursive.rmse:.6f} mae={self.recursive.mae:.6f}",
            f"persistence       mse={self.persistence.mse:.6f} rmse={self.persistence.rmse:.6f} mae={self.persistence.mae:.6f}",
            f"final_train_loss  {self.loss_history[-1]:.6f}",
        ]
        if self.repeats_mean is not None:
            m = self.repeats_mean["one_step"]
            lines.append(f"mean_one_step     mse={m['mse']:.6f} rmse={m['rmse']:.6f} mae={m['mae']:.6f}"
                         f" over {self.repeats_mean['repeats']} runs")
        return "\n".join(lines)


class ForecastRegistry:
    """Latest report per sensor, shared between the job runner and the HTTP API.

    Falls back to the persisted report documents when a store is attached.
    """

    def __init__(self, store: Optional[TsStore] = None) -> None:
        self.store = store
        self._lock = threading.Lock()
        self._latest: dict[str, ForecastReport] = {}

    def register(self, report: ForecastReport) -> None:
        with self._lock:
            self._latest[report.sensor] = report

    def latest(self, sensor: str) -> Optional[ForecastReport]:
        with self._lock:
            rep = self._latest.get(sensor)
        if rep is None and self.store is not None:
            doc = self.store.latest(f"{FORECAST_NS}/{sensor}")
            if doc is not None:
                rep = ForecastReport.from_dict(json.loads(doc["report"]))
        return rep


def load_series(store: TsStore, sensor: str, step_s: float) -> Series:
    return aggregate(store.all(sensor), step_s, "energy_wh", sensor)


def build_report(series: Series, config: ForecastConfig, trained_at_ms: int) -> ForecastReport:
    """Train and evaluate on an already aggregated raw series.

    Raises:
        InsufficientData: when either side of the split is too short.
    """
    w = config.train.window_len
    if len(series) <= w:
        raise InsufficientData(f"{series.sensor}: {len(series)} points, need more than {w}")
    boundary = datetime_to_ms(month_start(int(series.timestamps[-1])))
    try:
        raw_train, _ = split_by_boundary(series, boundary)
    except DatasetError as exc:
        raise InsufficientData(f"{series.sensor}: cannot split at month boundary: {exc}") from exc
    base = index_base(raw_train)
    if not base > 0:
        raise InsufficientData(f"{series.sensor}: training consumption never positive")
    indexed = fixed_base_index(series, base)
    train_s, test_s = split_by_boundary(indexed, boundary)
    if len(train_s) <= w:
        raise InsufficientData(f"{series.sensor}: {len(train_s)} training points, need more than {w}")
    try:
        scaler = fit_scaler(train_s.values)
    except DatasetError as exc:
        raise InsufficientData(f"{series.sensor}: {exc}") from exc
    dataset = make_windows(train_s, scaler, w)
    u = scaler.normalize(indexed.values)
    k = len(train_s)
    actual = u[k:]
    step_ms = int(round(config.step_s * 1000))

    runs = []
    for r in range(config.repeats):
        tc = replace(config.train, seed=config.train.seed + r)
        result = train(dataset, tc)
        one = one_step_predictions(result.model, u, k, w)
        rec = predict_horizon(result.model, scaler, train_s.values[-w:], len(test_s), w)
        runs.append((result, one, np.asarray(rec)))
    result, one, rec = runs[0]

    report = ForecastReport(
        sensor=series.sensor,
        trained_at_ms=trained_at_ms,
        train_range=(int(train_s.timestamps[0]), int(train_s.timestamps[-1]) + step_ms),
        test_range=(int(test_s.timestamps[0]), int(test_s.timestamps[-1]) + step_ms),
        base_value=base,
        x_min=scaler.x_min, x_max=scaler.x_max,
        one_step=evaluate(one, actual),
        recursive=evaluate(scaler.normalize(rec), actual),
        persistence=evaluate(persistence(u, k), actual),
        predictions=[(int(t), float(v)) for t, v in zip(test_s.timestamps, scaler.denormalize(one))],
        recursive_predictions=[(int(t), float(v)) for t, v in zip(test_s.timestamps, rec)],
        loss_history=[float(x) for x in result.losses],
        config=config.to_dict(),
        n_train=len(train_s),
        n_test=len(test_s),
    )
    if config.repeats > 1:
        ones = [evaluate(o, actual) for _, o, _ in runs]
        recs = [evaluate(scaler.normalize(rr), actual) for _, _, rr in runs]
        report.repeats_mean = {
            "repeats": config.repeats,
            "one_step": {k_: float(np.mean([getattr(m, k_) for m in ones])) for k_ in Metrics._fields},
            "recursive": {k_: float(np.mean([getattr(m, k_) for m in recs])) for k_ in Metrics._fields},
        }
    return report


def run_forecast_job(store: TsStore, sensor: str, config: ForecastConfig,
                     registry: Optional[ForecastRegistry] = None,
                     now: Optional[datetime] = None) -> ForecastReport:
    """Forecast one sensor from its stored history, persist and register the report.

    ``now`` stamps the report; it defaults to the wall clock and is passed
    explicitly where reports must be reproducible.
    """
    series = load_series(store, sensor, config.step_s)
    now = now or datetime.now(timezone.utc)
    report = build_report(series, config, datetime_to_ms(now))
    key = f"{FORECAST_NS}/{sensor}"
    last = store.last_ts(key)
    slot = report.trained_at_ms if last is None else max(report.trained_at_ms, last + 1)
    store.append({"sensor_id": key, "ts_ms": slot, "report": report.to_json()})
    if registry is not None:
        registry.register(report)
    log.info("forecast for %s: one-step rmse %.4f (persistence %.4f)",
             sensor, report.rmse, report.persistence.rmse)
    return report
