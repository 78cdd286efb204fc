"""Mini-batch training loop, optimizers and multi-step prediction."""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..core import UsageError
from .data import Scaler, WindowedDataset
from .lstm import LstmModel, NumericError, backward_batch, forward_batch, predict

log = logging.getLogger(__name__)


class Optimizer(str, enum.Enum):
    ADAM = "adam"
    SGD = "sgd"


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int) -> None:
        super().__init__(message)
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    window_len: int = 90
    hidden_size: int = 64
    learning_rate: float = 1e-3
    optimizer: Optimizer = Optimizer.ADAM
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    init_scale: float = 0.08

    def __post_init__(self) -> None:
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        for name in ("epochs", "batch_size", "window_len", "hidden_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"] = self.optimizer.value
        return d


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class SGD:
    lr: float

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return theta - self.lr * grad


def make_optimizer(config: TrainConfig):
    if config.optimizer is Optimizer.ADAM:
        return Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
    return SGD(config.learning_rate)


@dataclass
class TrainResult:
    model: LstmModel
    losses: list[float] = field(default_factory=list)


def train(train_set: WindowedDataset, config: TrainConfig) -> TrainResult:
    """Fit an LSTM to ``train_set``.

    Weights start uniform in ``[-init_scale, init_scale]``; every epoch draws a
    fresh permutation from the same seeded generator. Each mini-batch step
    follows the gradient of ``0.5 * mean squared error``. The reported epoch
    loss is the plain mean squared error over the epoch's samples, measured
    before each batch's update.

    Raises:
        TrainingError: when a loss or activation stops being finite.
    """
    n = len(train_set)
    if n == 0:
        raise ValueError("empty training set")
    if train_set.window_len != config.window_len:
        raise ValueError(f"dataset window {train_set.window_len} != config window {config.window_len}")
    rng = np.random.default_rng(config.seed)
    model = LstmModel.init_uniform(config.hidden_size, rng, config.init_scale)
    opt = make_optimizer(config)
    with np.errstate(over="ignore", invalid="ignore"):
        # overflow is caught below as a non-finite loss, so numpy need not warn
        return _fit(model, rng, opt, train_set, config)


def _fit(model: LstmModel, rng: np.random.Generator, opt, train_set: WindowedDataset,
         config: TrainConfig) -> TrainResult:
    n, H = len(train_set), config.hidden_size
    theta = model.flat()
    X, Y = train_set.inputs, train_set.targets
    losses: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sq_sum = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            try:
                pred, cache = forward_batch(model, X[idx])
            except NumericError as exc:
                raise TrainingError(f"epoch {epoch}: {exc}", epoch) from exc
            sq_sum += float(np.sum((pred - Y[idx]) ** 2))
            if not math.isfinite(sq_sum):
                raise TrainingError(f"loss diverged at epoch {epoch}", epoch)
            grad = backward_batch(model, cache, Y[idx])
            theta = opt.step(theta, grad.flat())
            model = LstmModel.from_flat(theta, H)
        loss = sq_sum / n
        if not math.isfinite(loss):
            raise TrainingError(f"loss diverged at epoch {epoch}", epoch)
        losses.append(loss)
        log.debug("epoch %d loss %.6g", epoch, loss)
    return TrainResult(model, losses)


def predict_horizon(model: LstmModel, scaler: Scaler, seed_window, steps: int,
                    window_len: Optional[int] = None) -> list[float]:
    """Recursive multi-step forecast; ``seed_window`` is in series units.

    Each prediction is appended to the window and the oldest value dropped.
    """
    if steps < 1:
        raise UsageError("steps must be >= 1")
    window = list(scaler.normalize(np.asarray(seed_window, dtype=np.float64)))
    if window_len is not None and len(window) != window_len:
        raise UsageError(f"seed window has {len(window)} values, expected {window_len}")
    out = []
    for _ in range(steps):
        p, _ = forward_batch(model, np.array([window]))
        out.append(float(p[0]))
        window = window[1:] + [float(p[0])]
    return [float(v) for v in scaler.denormalize(np.array(out))]


def one_step_predictions(model: LstmModel, normalized: np.ndarray, start: int, window_len: int) -> np.ndarray:
    """Normalized predictions for positions ``start..`` using true history."""
    if start < window_len:
        raise ValueError(f"need {window_len} points of history before position {start}")
    windows = np.lib.stride_tricks.sliding_window_view(normalized, window_len)[start - window_len:-1]
    return predict(model, windows)
