"""Forecast quality on synthetic data across simulator seeds.

Generates ``--months`` of hourly readings per seed, trains at the full
default settings (window 90, 100 epochs, batch 32, H=64) and prints one-step
and persistence RMSE on the normalized scale. One seed takes about three
minutes on a single core.

    python3 scripts/forecast_quality.py --seeds 7 8 9 --json results.json
"""
import argparse
import json
import time
from datetime import datetime, timezone

from energysaver.core import datetime_to_ms
from energysaver.forecast import ForecastConfig, TrainConfig, aggregate, build_report
from energysaver.forecast.data import add_months
from energysaver.simdevice import LoadProfile, generate_stream

START = datetime(2019, 1, 1, tzinfo=timezone.utc)


def run(seed, months, epochs, hidden, train_seed):
    hours = (datetime_to_ms(add_months(START, months)) - datetime_to_ms(START)) // 3_600_000
    docs = [r.to_document() for r in generate_stream(LoadProfile(seed=seed), START, 3600, hours, "q")]
    series = aggregate(docs, 3600)
    cfg = ForecastConfig(TrainConfig(epochs=epochs, hidden_size=hidden, seed=train_seed), step_s=3600)
    t0 = time.perf_counter()
    rep = build_report(series, cfg, datetime_to_ms(add_months(START, months)))
    return {
        "seed": seed,
        "rmse": rep.rmse,
        "recursive_rmse": rep.recursive.rmse,
        "persistence_rmse": rep.persistence.rmse,
        "ratio": rep.rmse / rep.persistence.rmse,
        "n_train": rep.n_train,
        "n_test": rep.n_test,
        "seconds": round(time.perf_counter() - t0, 1),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[7])
    p.add_argument("--months", type=int, default=6)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--train-seed", type=int, default=1)
    p.add_argument("--json", help="also write the rows to this file")
    a = p.parse_args(argv)
    rows = []
    print(f"{'seed':>5} {'rmse':>8} {'recursive':>10} {'persist':>8} {'ratio':>6} {'secs':>6}")
    for s in a.seeds:
        r = run(s, a.months, a.epochs, a.hidden, a.train_seed)
        rows.append(r)
        print(f"{s:5d} {r['rmse']:8.4f} {r['recursive_rmse']:10.4f} {r['persistence_rmse']:8.4f} "
              f"{r['ratio']:6.3f} {r['seconds']:6.0f}", flush=True)
    if a.json:
        with open(a.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
