"""``energysaver`` command line: broker, ingest daemon, simulator, forecasts, demo.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
configuration error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import signal
import sys
import tempfile
import threading
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from .config import GlobalConfig
from .core import DomainError, UsageError, iso_ms, parse_iso
from .forecast.data import add_months
from .forecast.job import ForecastConfig, ForecastRegistry, InsufficientData, load_series, run_forecast_job
from .forecast.schedule import MonthlyScheduler
from .forecast.train import TrainConfig
from .ingestd import TOKEN_ENV, ApiServer, ConfigError, IngestConfig, IngestStats, http_serve, ingest_loop
from .simdevice import LoadProfile, count_for_span, profile_from_json, publish_loop
from .tsstore import TsStore, format_number
from .wirebus import Broker, BrokerStartupError, ClientError, parse_address

log = logging.getLogger("energysaver")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class ComponentError(RuntimeError):
    """A component failed to start or run; ``component`` names it."""

    def __init__(self, component: str, message: str) -> None:
        super().__init__(f"{component}: {message}")
        self.component = component


def _setup_logging(verbose: int) -> None:
    level = logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING
    logging.basicConfig(stream=sys.stderr, level=level, force=True,
                        format="%(levelname)s %(name)s: %(message)s")


def _wait_for_signal(should_stop: Callable[[], bool] = lambda: False) -> None:
    stop = threading.Event()

    def handler(signum: int, frame: Any) -> None:
        stop.set()

    if threading.current_thread() is threading.main_thread():
        signal.signal(signal.SIGTERM, handler)
    try:
        while not stop.wait(0.5) and not should_stop():
            pass
    except KeyboardInterrupt:
        pass


def _parse_start(text: str) -> datetime:
    try:
        return parse_iso(text)
    except ValueError as exc:
        raise UsageError(f"--start: {exc}") from None


# --- broker -----------------------------------------------------------------

def cmd_broker(args: argparse.Namespace, cfg: GlobalConfig) -> int:
    section = cfg.broker
    listen = parse_address(args.listen or section.get("listen", "127.0.0.1:1883"))
    tokens = args.token or section.get("tokens", [])
    if not tokens:
        raise UsageError("broker needs at least one --token")
    kw = {}
    if "max_frame_bytes" in section:
        kw["max_frame_bytes"] = int(section["max_frame_bytes"])
    try:
        broker = Broker(listen, tokens, **kw).start()
    except BrokerStartupError as exc:
        raise ComponentError("broker", str(exc)) from exc
    log.info("broker listening on %s:%d", *broker.address)
    try:
        _wait_for_signal()
    finally:
        broker.stop()
    return EXIT_OK


# --- ingest -----------------------------------------------------------------

def _ingest_config(args: argparse.Namespace, cfg: GlobalConfig) -> IngestConfig:
    d = dict(cfg.ingest)
    if args.broker:
        d["broker"] = args.broker
    if args.broker_token:
        d["broker_token"] = args.broker_token
    if args.http_listen:
        d["http_listen"] = args.http_listen
    if args.data_dir:
        d["data_dir"] = args.data_dir
    if args.api_token:
        d["api_tokens"] = args.api_token
    if args.no_auth:
        d["auth_enabled"] = False
    return IngestConfig.from_dict(d)


def cmd_ingest(args: argparse.Namespace, cfg: GlobalConfig) -> int:
    config = _ingest_config(args, cfg)
    try:
        store = TsStore(config.data_dir, fsync=config.fsync)
    except OSError as exc:
        raise ComponentError("store", str(exc)) from exc
    stats = IngestStats()
    registry = ForecastRegistry(store)
    try:
        api = http_serve(config, store, stats, registry)
    except OSError as exc:
        raise ComponentError("http", f"cannot bind {config.http_listen}: {exc}") from exc
    handle = ingest_loop(config, store, stats)
    try:
        _wait_for_signal(lambda: not handle.running)
    finally:
        handle.stop()
        api.stop()
        store.close()
    if handle.error is not None:
        raise ComponentError("ingest", str(handle.error))
    return EXIT_OK


# --- simdevice --------------------------------------------------------------

def cmd_simdevice(args: argparse.Namespace, cfg: GlobalConfig) -> int:
    section = cfg.simdevice
    try:
        profile = LoadProfile.from_dict(section.get("profile", {}))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"simdevice.profile: {exc}") from None
    if args.profile:
        try:
            profile = profile_from_json(Path(args.profile).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"--profile: {exc}") from None
        except ValueError as exc:
            raise UsageError(f"--profile: {exc}") from None
    if args.seed is not None:
        profile = LoadProfile.from_dict({**profile.to_dict(), "seed": args.seed})
    token = args.token or section.get("token") or os.environ.get(TOKEN_ENV, "")
    start = _parse_start(args.start or section.get("start", "2019-01-01T00:00:00Z"))
    count = args.count if args.count is not None else section.get("count")
    duration = args.duration
    if count is None and duration is None:
        count = 144
    try:
        sent = publish_loop(profile, args.broker or section.get("broker", "127.0.0.1:1883"), token,
                            args.sensor or section.get("sensor", "sim"),
                            args.interval or section.get("interval_s", 600.0), start,
                            count=count, duration_s=duration if count is None else None,
                            speedup=args.speedup if args.speedup is not None else section.get("speedup", 0.0),
                            supply_voltage=section.get("supply_voltage", 127.0))
    except ClientError as exc:
        raise ComponentError("simdevice", str(exc)) from exc
    log.info("simdevice sent %d readings", sent)
    print(sent)
    return EXIT_OK


# --- forecast ---------------------------------------------------------------

def _forecast_config(args: argparse.Namespace, cfg: GlobalConfig) -> ForecastConfig:
    section = dict(cfg.forecast)
    train = dict(section.get("train", {}))
    for flag, key in (("window", "window_len"), ("epochs", "epochs"), ("batch", "batch_size"),
                      ("hidden", "hidden_size"), ("seed", "seed"), ("lr", "learning_rate"),
                      ("optimizer", "optimizer")):
        value = getattr(args, flag, None)
        if value is not None:
            train[key] = value
    step = args.step if getattr(args, "step", None) is not None else section.get("step_s", 600.0)
    repeats = args.repeats if getattr(args, "repeats", None) is not None else section.get("repeats", 1)
    try:
        return ForecastConfig(TrainConfig(**train), float(step), int(repeats))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _data_dir(args: argparse.Namespace, cfg: GlobalConfig) -> str:
    return args.data_dir or cfg.forecast.get("data_dir") or cfg.ingest.get("data_dir", "data")


def cmd_forecast_run(args: argparse.Namespace, cfg: GlobalConfig) -> int:
    config = _forecast_config(args, cfg)
    store = TsStore(_data_dir(args, cfg))
    try:
        report = run_forecast_job(store, args.sensor, config)
    finally:
        store.close()
    print(report.to_json() if args.json else report.summary())
    return EXIT_OK


def cmd_forecast_schedule(args: argparse.Namespace, cfg: GlobalConfig) -> int:
    config = _forecast_config(args, cfg)
    store = TsStore(_data_dir(args, cfg))
    sensors = args.sensor or cfg.forecast.get("sensors")

    def job() -> None:
        for s in sensors or store.sensors():
            try:
                run_forecast_job(store, s, config)
            except InsufficientData as exc:
                log.warning("forecast skipped: %s", exc)

    sched = MonthlyScheduler(job)
    log.info("next forecast run at %s", sched.next_fire(datetime.now()).isoformat())
    sched.start()
    try:
        _wait_for_signal()
    finally:
        sched.stop()
        store.close()
    return EXIT_OK


def cmd_forecast_export(args: argparse.Namespace, cfg: GlobalConfig) -> int:
    """Write the aggregated series (the job's input before indexing) as CSV."""
    step = args.step if args.step is not None else cfg.forecast.get("step_s", 600.0)
    store = TsStore(_data_dir(args, cfg))
    try:
        series = load_series(store, args.sensor, float(step))
    finally:
        store.close()
    if len(series) == 0:
        raise InsufficientData(f"{args.sensor}: no readings")
    out = open(args.csv, "w", newline="", encoding="utf-8") if args.csv != "-" else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["timestamp", "value"])
        for t, v in zip(series.timestamps, series.values):
            w.writerow([iso_ms(int(t)), format_number(float(v))])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


# --- demo -------------------------------------------------------------------

DEMO_START = datetime(2019, 1, 1, tzinfo=timezone.utc)


def run_demo(months: int, interval_s: float, seed: int, config: ForecastConfig,
             data_dir: Optional[str] = None, sensor: str = "demo",
             settle_timeout_s: float = 120.0):
    """Broker, ingest and HTTP in-process; simulate ``months``; forecast once.

    Returns the :class:`ForecastReport`. Components are stopped in reverse
    start order.
    """
    if months < 2:
        raise UsageError("--months must be >= 2 so a full month precedes the test month")
    end = add_months(DEMO_START, months)
    count = count_for_span(DEMO_START, end, interval_s)
    tmp = tempfile.TemporaryDirectory(prefix="energysaver-demo-") if data_dir is None else None
    directory = tmp.name if tmp is not None else data_dir
    broker_token, api_token = "demo-broker-token", "demo-api-token"
    stack: list[Callable[[], None]] = []
    try:
        try:
            broker = Broker(("127.0.0.1", 0), [broker_token]).start()
        except BrokerStartupError as exc:
            raise ComponentError("broker", str(exc)) from exc
        stack.append(broker.stop)
        host, port = broker.address
        icfg = IngestConfig(broker=f"{host}:{port}", broker_token=broker_token, data_dir=directory,
                            api_tokens=(api_token,))
        store = TsStore(directory)
        stack.append(store.close)
        stats = IngestStats()
        registry = ForecastRegistry(store)
        try:
            api = ApiServer(("127.0.0.1", 0), store, stats, registry, icfg.api_tokens).start()
        except OSError as exc:
            raise ComponentError("http", str(exc)) from exc
        stack.append(api.stop)
        handle = ingest_loop(icfg, store, stats)
        stack.append(handle.stop)
        if not handle.wait_subscribed(10):
            raise ComponentError("ingest", f"not subscribed to broker: {handle.error}")
        try:
            sent = publish_loop(LoadProfile(seed=seed), broker.address, broker_token, sensor,
                                interval_s, DEMO_START, count=count)
        except ClientError as exc:
            raise ComponentError("simdevice", str(exc)) from exc
        deadline = time.monotonic() + settle_timeout_s
        while stats.snapshot()["received"] < sent:
            if not handle.running:
                raise ComponentError("ingest", f"daemon stopped: {handle.error}")
            if time.monotonic() > deadline:
                raise ComponentError("ingest", f"received {stats.snapshot()['received']} of {sent} readings")
            time.sleep(0.02)
        snap = stats.snapshot()
        log.info("demo ingested %d readings (%d accepted)", snap["received"], snap["accepted"])
        return run_forecast_job(store, sensor, config, registry, now=end)
    finally:
        for stop in reversed(stack):
            stop()
        if tmp is not None:
            tmp.cleanup()


def cmd_demo(args: argparse.Namespace, cfg: GlobalConfig) -> int:
    config = _forecast_config(args, cfg)
    report = run_demo(args.months, args.interval, args.seed, config, args.data_dir)
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.summary())
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser, demo: bool = False) -> None:
    # the demo is a smoke test, so its defaults are lighter than a real run
    p.add_argument("--window", type=int, default=90 if demo else None, help="window length (points)")
    p.add_argument("--epochs", type=int, default=10 if demo else None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--hidden", type=int, default=32 if demo else None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default=None)
    p.add_argument("--step", type=float, default=3600.0 if demo else None,
                   help="aggregation step in seconds")
    p.add_argument("--repeats", type=int, default=None, help="train this many seeds and report the mean")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="energysaver", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON config file with broker/ingest/forecast/simdevice sections")
    parser.add_argument("-v", "--verbose", action="count", default=1,
                        help="more logging (repeat for debug)")
    parser.add_argument("-q", "--quiet", action="store_const", const=0, dest="verbose")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("broker", help="run the message broker")
    p.add_argument("--listen", help="host:port (default 127.0.0.1:1883)")
    p.add_argument("--token", action="append", help="accepted client token (repeatable)")
    p.set_defaults(func=cmd_broker)

    p = sub.add_parser("ingest", help="run the ingest daemon and HTTP API")
    p.add_argument("--broker", help="broker host:port")
    p.add_argument("--broker-token", help="broker token (falls back to $ENERGYSAVER_TOKEN)")
    p.add_argument("--http-listen", help="API host:port (default 127.0.0.1:5000)")
    p.add_argument("--data-dir")
    p.add_argument("--api-token", action="append", help="accepted API bearer token (repeatable)")
    p.add_argument("--no-auth", action="store_true", help="serve the API without authentication")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("simdevice", help="publish simulated readings")
    p.add_argument("--sensor")
    p.add_argument("--broker")
    p.add_argument("--token", help="broker token (falls back to $ENERGYSAVER_TOKEN)")
    p.add_argument("--interval", type=float, help="seconds between readings")
    p.add_argument("--start", help="ISO timestamp of the first reading")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--count", type=int)
    g.add_argument("--duration", type=float, help="simulated seconds to cover")
    p.add_argument("--speedup", type=float, help="simulated/wall time ratio; 0 sends as fast as possible")
    p.add_argument("--profile", help="LoadProfile JSON file")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simdevice)

    fc = sub.add_parser("forecast", help="forecast jobs").add_subparsers(dest="forecast_cmd", required=True)
    p = fc.add_parser("run", help="train and evaluate once for one sensor")
    p.add_argument("--sensor", required=True)
    p.add_argument("--data-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--json", action="store_true", help="print the full report as JSON")
    _add_train_flags(p)
    p.set_defaults(func=cmd_forecast_run)

    p = fc.add_parser("schedule", help="run forecasts on the first business day of each month")
    p.add_argument("--sensor", action="append", help="sensor to forecast (default: all)")
    p.add_argument("--data-dir")
    p.add_argument("--seed", type=int)
    _add_train_flags(p)
    p.set_defaults(func=cmd_forecast_schedule)

    ds = fc.add_parser("dataset", help="dataset utilities").add_subparsers(dest="dataset_cmd", required=True)
    p = ds.add_parser("export", help="write the aggregated series as timestamp,value CSV")
    p.add_argument("--sensor", required=True)
    p.add_argument("--data-dir")
    p.add_argument("--step", type=float)
    p.add_argument("--csv", required=True, help="output path, or - for stdout")
    p.set_defaults(func=cmd_forecast_export)

    p = sub.add_parser("demo", help="end-to-end run on simulated data")
    p.add_argument("--months", type=int, default=3)
    p.add_argument("--interval", type=float, default=600.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-dir", help="keep the demo store here instead of a temp dir")
    p.add_argument("--report", help="also write the full report JSON to this path")
    _add_train_flags(p, demo=True)
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        cfg = GlobalConfig.load(args.config)
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except ComponentError as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    except (InsufficientData, DomainError, OSError, RuntimeError, ValueError) as exc:
        log.error("%s: %s", args.command, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
