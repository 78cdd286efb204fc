"""Single-layer LSTM regressor in numpy with hand-written BPTT.

Gate pre-activations are stacked in the order input, forget, output,
candidate: ``z = W @ [h_prev; x_t] + b`` with ``W`` of shape ``(4H, H+1)``.
The last column of ``W`` holds the input weights (one input feature).
Prediction is ``w_out . h_T + b_out``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from ..core import UsageError

GATES = ("input", "forget", "output", "candidate")


class NumericError(ArithmeticError):
    def __init__(self, message: str, step: Optional[int] = None) -> None:
        super().__init__(message)
        self.step = step


class ShapeError(UsageError):
    pass


@dataclass
class LstmModel:
    W: np.ndarray      # (4H, H+1)
    b: np.ndarray      # (4H,)
    w_out: np.ndarray  # (H,)
    b_out: float

    @property
    def hidden_size(self) -> int:
        return int(self.w_out.shape[0])

    @classmethod
    def zeros(cls, hidden_size: int) -> "LstmModel":
        H = hidden_size
        return cls(np.zeros((4 * H, H + 1)), np.zeros(4 * H), np.zeros(H), 0.0)

    @classmethod
    def init_uniform(cls, hidden_size: int, rng: np.random.Generator, scale: float = 0.08) -> "LstmModel":
        H = hidden_size
        return cls(rng.uniform(-scale, scale, (4 * H, H + 1)),
                   rng.uniform(-scale, scale, 4 * H),
                   rng.uniform(-scale, scale, H),
                   float(rng.uniform(-scale, scale)))

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """``(weights (H, H+1), bias (H,))`` view for one gate."""
        k, H = GATES.index(name), self.hidden_size
        return self.W[k * H:(k + 1) * H], self.b[k * H:(k + 1) * H]

    def parameter_count(self) -> int:
        return self.W.size + self.b.size + self.w_out.size + 1

    def copy(self) -> "LstmModel":
        return LstmModel(self.W.copy(), self.b.copy(), self.w_out.copy(), float(self.b_out))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.b, self.w_out, [self.b_out]])

    @classmethod
    def from_flat(cls, theta: np.ndarray, hidden_size: int) -> "LstmModel":
        H = hidden_size
        n_w = 4 * H * (H + 1)
        W = theta[:n_w].reshape(4 * H, H + 1).copy()
        b = theta[n_w:n_w + 4 * H].copy()
        w_out = theta[n_w + 4 * H:n_w + 5 * H].copy()
        return cls(W, b, w_out, float(theta[-1]))

    def arrays(self) -> Iterator[np.ndarray]:
        yield self.W
        yield self.b
        yield self.w_out

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays()) and np.isfinite(self.b_out)

    def to_dict(self) -> dict:
        return {"hidden_size": self.hidden_size, "W": self.W.tolist(), "b": self.b.tolist(),
                "w_out": self.w_out.tolist(), "b_out": self.b_out}

    @classmethod
    def from_dict(cls, d: dict) -> "LstmModel":
        return cls(np.array(d["W"], dtype=float), np.array(d["b"], dtype=float),
                   np.array(d["w_out"], dtype=float), float(d["b_out"]))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class Cache:
    """Activations saved by :func:`forward_batch`.

    Arrays are unit-major, ``(units, batch)``, so each gate block is a
    contiguous row range. ``hx[:, t]`` stacks ``[h_t; x_{t+1}; 1]``, which
    makes one matmul produce every gate pre-activation, and keeping time as
    the middle axis lets ``hx[:, :T]`` flatten to ``(H+2, T*B)`` without a copy.
    """

    x: np.ndarray        # (B, T)
    hx: np.ndarray       # (H+2, T+1, B); hx[:H, t] = h_t, h_0 = 0
    cs: np.ndarray       # (T+1, H, B); cs[0] = c_0 = 0
    gates: np.ndarray    # (T, 4H, B) post-activation i, f, o, g
    tanh_c: np.ndarray   # (T, H, B)
    pred: np.ndarray     # (B,)

    @property
    def h_final(self) -> np.ndarray:
        return self.hx[:-2, -1]


def forward_batch(model: LstmModel, x: np.ndarray) -> tuple[np.ndarray, Cache]:
    """Run a batch of windows ``x`` of shape ``(B, T)``; returns ``(pred (B,), cache)``.

    Raises:
        NumericError: if an activation becomes non-finite (names the step).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"expected (batch, window>=1) input, got shape {x.shape}")
    B, T = x.shape
    H = model.hidden_size
    if model.W.shape != (4 * H, H + 1) or model.b.shape != (4 * H,):
        raise ShapeError("model arrays inconsistent with hidden size")
    # sigmoid(z) = 0.5 * (1 + tanh(z / 2)); the /2 is folded into the gate
    # weights so a single tanh covers all four gates per step
    scale = np.full((4 * H, 1), 0.5)
    scale[3 * H:] = 1.0
    Wa = np.concatenate([model.W, model.b[:, None]], axis=1) * scale  # (4H, H+2)
    hx = np.empty((H + 2, T + 1, B))
    hx[:H, 0] = 0.0
    hx[H, :T] = x.T
    hx[H, T] = 0.0
    hx[H + 1] = 1.0
    cs = np.empty((T + 1, H, B))
    cs[0] = 0.0
    gates = np.empty((T, 4 * H, B))
    tanh_c = np.empty((T, H, B))
    for t in range(T):
        a = gates[t]
        np.matmul(Wa, hx[:, t], out=a)
        np.tanh(a, out=a)
        sig = a[:3 * H]
        sig *= 0.5
        sig += 0.5
        c = cs[t + 1]
        np.multiply(a[H:2 * H], cs[t], out=c)
        c += a[:H] * a[3 * H:]
        np.tanh(c, out=tanh_c[t])
        np.multiply(a[2 * H:3 * H], tanh_c[t], out=hx[:H, t + 1])
    pred = model.w_out @ hx[:H, T] + model.b_out
    if not np.isfinite(pred).all():
        ok = np.isfinite(cs.reshape(T + 1, -1)).all(axis=1)
        bad = np.nonzero(~ok)[0]
        step = int(bad[0]) - 1 if bad.size else T - 1
        raise NumericError(f"non-finite activation at step {step}", step)
    return pred, Cache(x, hx, cs, gates, tanh_c, pred)


def backward_batch(model: LstmModel, cache: Cache, target: np.ndarray) -> LstmModel:
    """Gradient of ``mean_b 0.5 * (pred_b - target_b)**2`` w.r.t. every parameter.

    The result is returned as an :class:`LstmModel` holding gradients.
    """
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    B, T = cache.x.shape
    H = model.hidden_size
    if target.shape != (B,) or cache.hx.shape[0] != H + 2:
        raise ShapeError(f"target shape {target.shape} / cache do not match batch of {B}, H={H}")
    dpred = (cache.pred - target) / B
    grad = LstmModel.zeros(H)
    grad.w_out = cache.h_final @ dpred
    grad.b_out = float(dpred.sum())
    U_T = np.ascontiguousarray(model.W[:, :H].T)  # (H, 4H)
    dh = np.outer(model.w_out, dpred)
    dc = np.zeros((H, B))
    dzs = np.empty((4 * H, T, B))
    dz = np.empty((4 * H, B))
    for t in range(T - 1, -1, -1):
        a = cache.gates[t]
        i, f, o, g = a[:H], a[H:2 * H], a[2 * H:3 * H], a[3 * H:]
        tc = cache.tanh_c[t]
        dc += dh * o * (1.0 - tc * tc)
        np.multiply(dc, g, out=dz[:H])
        np.multiply(dc, cache.cs[t], out=dz[H:2 * H])
        np.multiply(dh, tc, out=dz[2 * H:3 * H])
        sig = a[:3 * H]
        dz[:3 * H] *= sig * (1.0 - sig)
        np.multiply(dc * i, 1.0 - g * g, out=dz[3 * H:])
        dzs[:, t] = dz
        dh = U_T @ dz
        dc *= f
    # columns: recurrent weights, input weight, bias
    dWa = dzs.reshape(4 * H, T * B) @ cache.hx[:, :T].reshape(H + 2, T * B).T  # (4H, H+2)
    grad.W = np.ascontiguousarray(dWa[:, :H + 1])
    grad.b = dWa[:, H + 1].copy()
    return grad


def lstm_forward(model: LstmModel, window) -> tuple[float, Cache]:
    """Predict the value following one normalized window."""
    pred, cache = forward_batch(model, np.asarray(window, dtype=np.float64).reshape(1, -1))
    return float(pred[0]), cache


def lstm_backward(model: LstmModel, cache: Cache, target: float) -> LstmModel:
    """Gradient of ``0.5 * (pred - target)**2`` for a single-window cache."""
    if cache.x.shape[0] != 1:
        raise ShapeError("lstm_backward expects a single-window cache; use backward_batch")
    return backward_batch(model, cache, np.array([target]))


def predict(model: LstmModel, windows: np.ndarray, batch_size: int = 512) -> np.ndarray:
    windows = np.asarray(windows, dtype=np.float64)
    out = [forward_batch(model, windows[s:s + batch_size])[0] for s in range(0, len(windows), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)
