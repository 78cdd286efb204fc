import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from energysaver.core import UsageError
from energysaver.forecast.lstm import (LstmModel, NumericError, backward_batch, forward_batch, lstm_backward,
                                       lstm_forward, predict)

from oracles import numeric_gradient, relative_error, scalar_lstm_step


def test_parameter_count_formula():
    for H in (1, 4, 64):
        m = LstmModel.zeros(H)
        assert m.parameter_count() == 4 * (H * (H + 1 + 1)) + H + 1
        assert m.flat().size == m.parameter_count()


def test_zero_network_predicts_zero():
    m = LstmModel.zeros(5)
    for w in ([0.3], [1.0, -2.0, 7.0], np.linspace(0, 1, 90)):
        assert lstm_forward(m, w)[0] == 0.0


def test_single_unit_matches_scalar_arithmetic():
    w = {"i": (0.5, -0.3, 0.1), "f": (0.2, 0.4, -0.2), "o": (-0.6, 0.7, 0.05), "g": (0.9, -1.1, 0.3)}
    m = LstmModel.zeros(1)
    for k, name in enumerate("ifog"):
        u, v, b = w[name]
        m.W[k] = [u, v]
        m.b[k] = b
    m.w_out[:] = 1.7
    m.b_out = -0.25
    h, c, _ = scalar_lstm_step(w, 1.0, 0.0, 0.0)
    pred, cache = lstm_forward(m, [1.0])
    assert pred == pytest.approx(1.7 * h - 0.25, rel=1e-13)
    assert cache.cs[1, 0, 0] == pytest.approx(c, rel=1e-13)
    # and a longer window against the same recurrence
    xs = [1.0, -0.5, 0.25, 2.0]
    h = c = 0.0
    for x in xs:
        h, c, _ = scalar_lstm_step(w, x, h, c)
    assert lstm_forward(m, xs)[0] == pytest.approx(1.7 * h - 0.25, rel=1e-12)


def test_forward_is_pure():
    m = LstmModel.init_uniform(6, np.random.default_rng(3), 0.5)
    w = np.random.default_rng(4).random(12)
    assert lstm_forward(m, w)[0] == lstm_forward(m, w)[0]


def test_batch_agrees_with_single():
    rng = np.random.default_rng(0)
    m = LstmModel.init_uniform(5, rng, 0.4)
    X = rng.random((7, 11))
    y = rng.random(7)
    preds, cache = forward_batch(m, X)
    for b in range(7):
        assert preds[b] == pytest.approx(lstm_forward(m, X[b])[0], rel=1e-12)
    g = backward_batch(m, cache, y)
    singles = [lstm_backward(m, lstm_forward(m, X[b])[1], y[b]).flat() for b in range(7)]
    np.testing.assert_allclose(g.flat(), np.mean(singles, axis=0), rtol=1e-10, atol=1e-15)
    np.testing.assert_allclose(predict(m, X, batch_size=3), preds, rtol=1e-12)


def test_zero_loss_zero_gradient():
    m = LstmModel.init_uniform(3, np.random.default_rng(1), 0.3)
    w = [0.1, 0.5, 0.9]
    p, cache = lstm_forward(m, w)
    assert not np.any(lstm_backward(m, cache, p).flat())


def test_head_bias_gradient_is_residual():
    m = LstmModel.init_uniform(4, np.random.default_rng(2), 0.3)
    p, cache = lstm_forward(m, [0.2, 0.4])
    assert lstm_backward(m, cache, 1.5).b_out == pytest.approx(p - 1.5, rel=1e-14)


@settings(max_examples=25, deadline=None)
@given(H=st.integers(1, 4), T=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
def test_gradients_match_finite_differences(H, T, seed):
    rng = np.random.default_rng(seed)
    m = LstmModel.init_uniform(H, rng, 1.0)
    window = rng.uniform(-1, 1, T)
    target = float(rng.uniform(-1, 1))
    _, cache = lstm_forward(m, window)
    analytic = lstm_backward(m, cache, target).flat()
    assert relative_error(analytic, numeric_gradient(m, window, target)).max() < 1e-4


def test_shape_errors_are_usage_errors():
    m = LstmModel.zeros(2)
    _, cache = forward_batch(m, np.zeros((3, 4)))
    with pytest.raises(UsageError):
        backward_batch(m, cache, np.zeros(2))
    with pytest.raises(UsageError):
        lstm_backward(m, cache, 0.0)
    with pytest.raises(UsageError):
        forward_batch(m, np.zeros(4))
    with pytest.raises(UsageError):
        forward_batch(LstmModel.zeros(3), np.zeros((1, 0)))


def test_non_finite_activation_names_step():
    m = LstmModel.zeros(2)
    with pytest.raises(NumericError) as err:
        lstm_forward(m, [0.0, 0.0, np.nan, 0.0])
    assert err.value.step == 2


def test_serialization_round_trip():
    m = LstmModel.init_uniform(3, np.random.default_rng(9))
    back = LstmModel.from_dict(m.to_dict())
    assert np.array_equal(back.flat(), m.flat())
    assert np.array_equal(LstmModel.from_flat(m.flat(), 3).flat(), m.flat())
    W, b = m.gate("forget")
    assert W.shape == (3, 4) and b.shape == (3,)
    assert np.array_equal(W, m.W[3:6])
