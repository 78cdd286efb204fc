import json
import math
from datetime import datetime, timezone

import numpy as np
import pytest

from energysaver.core import datetime_to_ms
from energysaver.forecast import (FORECAST_NS, ForecastConfig, ForecastRegistry, ForecastReport,
                                  InsufficientData, TrainConfig, build_report, load_series,
                                  run_forecast_job)
from energysaver.forecast.data import fit_scaler
from energysaver.simdevice import LoadProfile, generate_stream
from energysaver.tsstore import TsStore

UTC = timezone.utc
NOW = datetime(2019, 3, 20, tzinfo=UTC)
SMALL = ForecastConfig(TrainConfig(epochs=2, window_len=24, hidden_size=4, seed=3), step_s=3600)


def fill(store, start, count, sensor="m1", step=3600, seed=5):
    for r in generate_stream(LoadProfile(seed=seed), start, step, count, sensor):
        store.append(r.to_document())


@pytest.fixture(scope="module")
def store(tmp_path_factory):
    s = TsStore(tmp_path_factory.mktemp("job"))
    fill(s, datetime(2019, 1, 1, tzinfo=UTC), 24 * 73)  # through mid-March
    yield s
    s.close()


@pytest.fixture(scope="module")
def report(store):
    return build_report(load_series(store, "m1", 3600), SMALL, datetime_to_ms(NOW))


def test_split_at_month_start_of_last_point(report):
    boundary = datetime_to_ms(datetime(2019, 3, 1, tzinfo=UTC))
    assert report.train_range[1] == boundary
    assert report.test_range[0] == boundary
    assert report.n_train == 24 * 59 and report.n_test == 24 * 14
    assert len(report.predictions) == len(report.recursive_predictions) == report.n_test


def test_metric_consistency(report):
    for m in (report.one_step, report.recursive, report.persistence):
        assert m.rmse == pytest.approx(math.sqrt(m.mse), rel=1e-12)
        assert m.mae <= m.rmse + 1e-12
    assert report.rmse == report.one_step.rmse
    assert len(report.loss_history) == 2


def test_scaler_fitted_on_training_side(store, report):
    series = load_series(store, "m1", 3600)
    indexed = series.values / report.base_value * 100
    train = indexed[:report.n_train]
    sc = fit_scaler(train)
    assert (sc.x_min, sc.x_max) == pytest.approx((report.x_min, report.x_max), rel=1e-12)
    assert float(sc.normalize(train).max()) == 1.0


def test_base_is_mean_of_january(store, report):
    series = load_series(store, "m1", 3600)
    assert report.base_value == pytest.approx(series.values[:24 * 31].mean(), rel=1e-12)


def test_report_round_trips(report):
    again = ForecastReport.from_dict(json.loads(report.to_json()))
    assert again.to_json() == report.to_json()
    assert "one_step" in report.summary()


def test_frozen_store_is_deterministic(store, report):
    again = build_report(load_series(store, "m1", 3600), SMALL, datetime_to_ms(NOW))
    assert again.to_json() == report.to_json()


def test_insufficient_data(tmp_path):
    s = TsStore(tmp_path)
    with pytest.raises(InsufficientData):
        run_forecast_job(s, "nobody", SMALL, now=NOW)
    fill(s, datetime(2019, 2, 1, tzinfo=UTC), 24 * 10, sensor="one_month")
    with pytest.raises(InsufficientData):
        run_forecast_job(s, "one_month", SMALL, now=NOW)
    fill(s, datetime(2019, 2, 28, 12, tzinfo=UTC), 24 * 5, sensor="short_train")  # 12 training points
    with pytest.raises(InsufficientData):
        run_forecast_job(s, "short_train", SMALL, now=NOW)
    s.close()


def test_job_persists_and_registers(tmp_path):
    s = TsStore(tmp_path)
    fill(s, datetime(2019, 1, 1, tzinfo=UTC), 24 * 65)
    reg = ForecastRegistry(s)
    rep = run_forecast_job(s, "m1", SMALL, registry=reg, now=NOW)
    assert reg.latest("m1") is rep
    rep2 = run_forecast_job(s, "m1", SMALL, registry=reg, now=NOW)
    assert s.count(f"{FORECAST_NS}/m1") == 2  # same stamp twice still appends
    assert "m1" in s.sensors() and s.count("m1") == 24 * 65
    s.close()

    reopened = TsStore(tmp_path)
    fresh = ForecastRegistry(reopened)
    assert fresh.latest("m1").to_json() == rep2.to_json()
    assert fresh.latest("nobody") is None
    reopened.close()


def test_repeats_reports_first_run_and_mean(store, report):
    cfg = ForecastConfig(SMALL.train, step_s=3600, repeats=2)
    rep = build_report(load_series(store, "m1", 3600), cfg, datetime_to_ms(NOW))
    assert rep.one_step == report.one_step
    mean = rep.repeats_mean
    assert mean["repeats"] == 2
    other = build_report(load_series(store, "m1", 3600),
                         ForecastConfig(TrainConfig(epochs=2, window_len=24, hidden_size=4, seed=4), step_s=3600),
                         datetime_to_ms(NOW))
    assert mean["one_step"]["mse"] == pytest.approx((report.mse + other.mse) / 2, rel=1e-12)


def test_config_round_trip_and_invariants():
    assert ForecastConfig.from_dict(SMALL.to_dict()) == SMALL
    with pytest.raises(ValueError):
        ForecastConfig(step_s=0)
    with pytest.raises(ValueError):
        ForecastConfig(repeats=0)


def test_persistence_metric_matches_hand_computation(store, report):
    series = load_series(store, "m1", 3600)
    u = (series.values / report.base_value * 100 - report.x_min) / (report.x_max - report.x_min)
    k = report.n_train
    err = u[k - 1:-1] - u[k:]
    assert report.persistence.mse == pytest.approx(float(np.mean(err ** 2)), rel=1e-9)
