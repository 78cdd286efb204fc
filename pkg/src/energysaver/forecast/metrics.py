"""Forecast error metrics."""
from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from ..core import UsageError


class Metrics(NamedTuple):
    mse: float
    rmse: float
    mae: float

    def to_dict(self) -> dict:
        return {"mse": self.mse, "rmse": self.rmse, "mae": self.mae}


def evaluate(predictions: Sequence[float], actuals: Sequence[float]) -> Metrics:
    p = np.asarray(predictions, dtype=np.float64).ravel()
    a = np.asarray(actuals, dtype=np.float64).ravel()
    if p.size == 0 or p.size != a.size:
        raise UsageError(f"need equal non-zero lengths, got {p.size} and {a.size}")
    err = p - a
    mse = float(np.mean(err * err))
    return Metrics(mse, math.sqrt(mse), float(np.mean(np.abs(err))))


def persistence(normalized: np.ndarray, start: int) -> np.ndarray:
    """Naive forecast: each value at position ``>= start`` predicted by its predecessor."""
    if start < 1:
        raise UsageError("persistence needs one point of history")
    return np.asarray(normalized, dtype=np.float64)[start - 1:-1]
