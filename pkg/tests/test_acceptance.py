"""System-level acceptance checks, one test per criterion.

Each test prints a ``criterion N PASS|FAIL`` line; the lines are repeated in
the terminal summary. Criterion 7 trains the full-size model and dominates
the runtime of the suite.
"""
import math
import random
import socket
import struct
import time
import urllib.error
import urllib.request
from datetime import date, datetime, timezone

import numpy as np
import pytest

from energysaver.cli import main
from energysaver.core import datetime_to_ms
from energysaver.forecast import (ForecastConfig, ForecastRegistry, TrainConfig, build_report, evaluate,
                                  first_business_day, load_series, make_windows, split_by_boundary)
from energysaver.forecast.data import aggregate, fit_scaler
from energysaver.forecast.lstm import LstmModel, lstm_backward, lstm_forward
from energysaver.ingestd import ApiServer, IngestConfig, IngestStats, ingest_loop
from energysaver.simdevice import LoadProfile, generate_stream, publish_loop
from energysaver.tsstore import TsStore
from energysaver.wirebus import Broker, ConnAck, Connect, encode_frame
from energysaver.wirebus.codec import (MalformedFrame, PingReq, PingResp, Disconnect, Publish, SubAck,
                                       Subscribe, decode_frame)

from oracles import first_weekday_scan, numeric_gradient, relative_error

UTC = timezone.utc


# --- 1. codec soundness ----------------------------------------------------

_ALPHABET = "abcxyz019_-. é€日ÿ\U0001f600"


def _segment(rng):
    return "".join(rng.choice(_ALPHABET) for _ in range(rng.randint(1, 10)))


def _topic(rng):
    while True:
        t = "/".join(_segment(rng) for _ in range(rng.randint(1, 6)))
        if len(t.encode()) <= 256:
            return t


def _text(rng, n=30):
    return "".join(rng.choice(_ALPHABET + "/#") for _ in range(rng.randint(0, n)))


def random_frame(rng):
    k = rng.randrange(8)
    if k == 0:
        return Connect(_text(rng), _text(rng))
    if k == 1:
        return ConnAck(rng.randrange(256))
    if k == 2:
        return Publish(_topic(rng), rng.randbytes(rng.choice((0, 1, 16, 300, 4096))))
    if k == 3:
        t = _topic(rng)
        return Subscribe(t if rng.random() < 0.5 else (t.rsplit("/", 1)[0] + "/#" if "/" in t else "#"))
    if k == 4:
        return SubAck(rng.randrange(256))
    return (PingReq(), PingResp(), Disconnect())[k - 5]


def fuzz_input(rng, valid):
    mode = rng.randrange(4)
    if mode == 0:  # pure noise, mostly short, occasionally up to 64 KiB
        n = rng.choice((rng.randint(0, 16), rng.randint(0, 512), rng.randint(0, 65536)))
        return rng.randbytes(n)
    base = bytearray(rng.choice(valid))
    if mode == 1:  # flip bytes of a valid frame
        for _ in range(rng.randint(1, 8)):
            if base:
                base[rng.randrange(len(base))] = rng.randrange(256)
        return bytes(base)
    if mode == 2:  # truncate or extend
        cut = rng.randint(0, len(base))
        return bytes(base[:cut]) + rng.randbytes(rng.randint(0, 8))
    # plausible header with a lying length
    kind = rng.randint(0, 9)
    return struct.pack(">BI", kind, rng.choice((0, 1, 5, 2 ** 20, 2 ** 32 - 1, rng.randrange(2 ** 32)))) \
        + bytes(base[5:])


def test_criterion_1_codec_soundness(criterion):
    with criterion(1, "codec round-trip and fuzz") as note:
        t0 = time.perf_counter()
        rng = random.Random(1)
        valid = []
        for _ in range(10_000):
            f = random_frame(rng)
            data = encode_frame(f)
            back = decode_frame(data)
            assert back == f
            assert encode_frame(back) == data
            valid.append(data)
        crashes = 0
        for _ in range(10_000):
            data = fuzz_input(rng, valid)
            assert len(data) <= 65536 + 8
            try:
                f = decode_frame(data)
            except MalformedFrame:
                continue
            except Exception:  # anything else is a decoder crash
                crashes += 1
                continue
            assert encode_frame(f) == data  # accepted input is canonical
        elapsed = time.perf_counter() - t0
        note(f"0 mismatches, {crashes} crashes, {elapsed:.2f}s")
        assert crashes == 0
        assert elapsed < 10


# --- 2. end-to-end conservation ------------------------------------------

def test_criterion_2_end_to_end_conservation(criterion, tmp_path):
    with criterion(2, "5000 readings broker -> ingest -> store -> csv") as note:
        t0 = time.perf_counter()
        broker = Broker(("127.0.0.1", 0), tokens=["t"]).start()
        store = TsStore(tmp_path)
        stats = IngestStats()
        cfg = IngestConfig(broker=f"127.0.0.1:{broker.address[1]}", broker_token="t", api_tokens=("a",))
        api = ApiServer(("127.0.0.1", 0), store, stats, ForecastRegistry(store), ("a",)).start()
        handle = ingest_loop(cfg, store, stats)
        try:
            assert handle.wait_subscribed(10)
            sent = publish_loop(LoadProfile(seed=2), broker.address, "t", "e2e", 600,
                                datetime(2019, 1, 1, tzinfo=UTC), count=5000)
            deadline = time.monotonic() + 25
            while stats.snapshot()["received"] < 5000 and time.monotonic() < deadline:
                time.sleep(0.01)
            req = urllib.request.Request(f"http://127.0.0.1:{api.address[1]}/api/v1/sensors/e2e/export.csv",
                                         headers={"Authorization": "Bearer a"})
            with urllib.request.urlopen(req, timeout=10) as resp:
                body = resp.read()
        finally:
            handle.stop()
            api.stop()
            broker.stop()
        elapsed = time.perf_counter() - t0
        snap = stats.snapshot()
        lines = body.decode().splitlines()
        note(f"sent {sent}, received {snap['received']}, stored {store.count('e2e')}, csv lines {len(lines)}")
        assert sent == 5000
        assert snap["received"] == 5000 and snap["accepted"] == 5000
        assert store.count("e2e") == 5000
        assert len(lines) == 5001 and body.endswith(b"\n")
        assert elapsed < 30
        store.close()


# --- 3. authentication gates ---------------------------------------------

def _read_exact(sock, n):
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            break
        buf += chunk
    return buf


def test_criterion_3_authentication_gates(criterion, tmp_path):
    with criterion(3, "wrong bus token -> ConnAck(1)+close; no bearer -> 401") as note:
        broker = Broker(("127.0.0.1", 0), tokens=["right"]).start()
        try:
            with socket.create_connection(broker.address, timeout=5) as s:
                s.sendall(encode_frame(Connect("intruder", "wrong")))
                reply = decode_frame(_read_exact(s, 6))
                rest = s.recv(1)
        finally:
            broker.stop()
        assert reply == ConnAck(1)
        assert rest == b""  # connection closed by the broker

        store = TsStore(tmp_path)
        api = ApiServer(("127.0.0.1", 0), store, IngestStats(), None, ("secret",)).start()
        try:
            with pytest.raises(urllib.error.HTTPError) as err:
                urllib.request.urlopen(f"http://127.0.0.1:{api.address[1]}/api/v1/sensors", timeout=5)
        finally:
            api.stop()
            store.close()
        note(f"broker replied {reply}, http {err.value.code}")
        assert err.value.code == 401


# --- 4. store oracle equivalence -----------------------------------------

def test_criterion_4_store_oracle(criterion, tmp_path):
    with criterion(4, "1000 range queries over 10000 docs match oracle, before and after reopen") as note:
        rng = np.random.default_rng(4)
        ts = np.cumsum(rng.integers(1, 50, 10_000)).tolist()
        docs = [{"sensor_id": "s", "ts_ms": t, "value": float(rng.normal()), "k": i} for i, t in enumerate(ts)]
        store = TsStore(tmp_path)
        for d in docs:
            store.append(d)
        hi_ts = ts[-1] + 100
        queries = []
        for _ in range(1000):
            a, b = sorted(int(x) for x in rng.integers(-50, hi_ts, 2))
            queries.append((max(a, 0), b))
        queries += [(0, 0), (ts[0], ts[0] + 1), (ts[-1], ts[-1] + 1), (0, 2 ** 63 - 1)]
        ts_arr = np.array(ts)
        # naive filter: test every document against the bounds, no ordering assumed
        expected = [[docs[i] for i in np.flatnonzero((ts_arr >= lo) & (ts_arr < hi))] for lo, hi in queries]
        before = [store.query_range("s", lo, hi) for lo, hi in queries]
        store.close()
        store = TsStore(tmp_path)
        after = [store.query_range("s", lo, hi) for lo, hi in queries]
        store.close()
        note(f"{len(queries)} queries, {sum(map(len, expected))} rows compared")
        assert before == expected
        assert after == expected


# --- 5. gradient check ---------------------------------------------------

def test_criterion_5_gradient_check(criterion):
    with criterion(5, "100 LSTM gradchecks within 1e-4") as note:
        t0 = time.perf_counter()
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(100):
            H, T = int(rng.integers(1, 5)), int(rng.integers(1, 6))
            m = LstmModel.init_uniform(H, rng, 1.0)
            window = rng.uniform(-1, 1, T)
            target = float(rng.uniform(-1, 1))
            _, cache = lstm_forward(m, window)
            analytic = lstm_backward(m, cache, target).flat()
            worst = max(worst, float(relative_error(analytic, numeric_gradient(m, window, target)).max()))
        elapsed = time.perf_counter() - t0
        note(f"worst relative error {worst:.2e}, {elapsed:.1f}s")
        assert worst < 1e-4
        assert elapsed < 60


# --- 6. metric identities ------------------------------------------------

def test_criterion_6_metric_identities(criterion):
    with criterion(6, "rmse == sqrt(mse), mae <= rmse, zero on identity") as note:
        rng = np.random.default_rng(6)
        worst = 0.0
        for _ in range(1000):
            n = int(rng.integers(1, 200))
            scale = 10.0 ** rng.uniform(-6, 3)
            p, a = rng.normal(size=n) * scale, rng.normal(size=n) * scale
            m = evaluate(p, a)
            worst = max(worst, abs(m.rmse - math.sqrt(m.mse)))
            assert m.mae <= m.rmse * (1 + 1e-12)
            assert tuple(evaluate(p, p)) == (0.0, 0.0, 0.0)
        spot = math.sqrt(0.0017)
        note(f"max |rmse - sqrt(mse)| {worst:.1e}; sqrt(0.0017) = {spot:.5f}")
        assert worst <= 1e-12
        assert spot == pytest.approx(0.04123, abs=5e-6)
        assert round(spot, 3) == 0.041


# --- 7. forecasting quality ----------------------------------------------

def test_criterion_7_forecast_quality(criterion, tmp_path):
    with criterion(7, "6 months hourly, w90 e100 b32: rmse < 0.15 and <= 0.9 x persistence") as note:
        t0 = time.perf_counter()
        store = TsStore(tmp_path)
        start = datetime(2019, 1, 1, tzinfo=UTC)
        for r in generate_stream(LoadProfile(seed=7), start, 3600, 24 * 181, "house"):
            store.append(r.to_document())
        series = load_series(store, "house", 3600)
        store.close()
        cfg = ForecastConfig(TrainConfig(window_len=90, epochs=100, batch_size=32, seed=1), step_s=3600)
        rep = build_report(series, cfg, datetime_to_ms(datetime(2019, 7, 1, tzinfo=UTC)))
        elapsed = time.perf_counter() - t0
        ratio = rep.rmse / rep.persistence.rmse
        note(f"rmse {rep.rmse:.4f}, persistence {rep.persistence.rmse:.4f}, ratio {ratio:.3f}, {elapsed:.0f}s")
        assert rep.test_range[0] == datetime_to_ms(datetime(2019, 6, 1, tzinfo=UTC))
        assert rep.rmse < 0.15
        assert ratio <= 0.9
        assert elapsed < 300


# --- 8. dataset construction ---------------------------------------------

def test_criterion_8_dataset_construction(criterion):
    with criterion(8, "Jan-Aug 2019 at 10 min: train fraction 0.87 +- 0.01, windows == len - 90") as note:
        start = datetime(2019, 1, 1, tzinfo=UTC)
        docs = [r.to_document() for r in generate_stream(LoadProfile(seed=8), start, 600, 243 * 144, "d")]
        series = aggregate(docs, 600)
        train, test = split_by_boundary(series, datetime_to_ms(datetime(2019, 8, 1, tzinfo=UTC)))
        frac = len(train) / len(series)
        sc = fit_scaler(train.values)
        full = make_windows(series, sc, 90)
        tr = make_windows(train, sc, 90)
        note(f"{len(series)} points, train {len(train)}, fraction {frac:.4f}")
        assert frac == pytest.approx(0.87, abs=0.01)
        assert len(full) == len(series) - 90
        assert len(tr) == len(train) - 90


# --- 9. scheduler --------------------------------------------------------

def test_criterion_9_first_business_day(criterion):
    with criterion(9, "first business day vs calendar scan 2015-2030") as note:
        months = [(y, m) for y in range(2015, 2031) for m in range(1, 13)]
        mismatches = [(y, m) for y, m in months if first_business_day(y, m) != first_weekday_scan(y, m)]
        note(f"{len(months)} months, {len(mismatches)} mismatches")
        assert not mismatches
        assert first_business_day(2019, 6) == date(2019, 6, 3)
        assert first_business_day(2019, 9) == date(2019, 9, 2)


# --- 10. determinism -----------------------------------------------------

def test_criterion_10_demo_determinism(criterion, tmp_path, capsys):
    with criterion(10, "demo --seed 42 twice gives byte-identical reports") as note:
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["-q", "demo", "--seed", "42", "--report", str(a)]) == 0
        assert main(["-q", "demo", "--seed", "42", "--report", str(b)]) == 0
        capsys.readouterr()
        note(f"{a.stat().st_size} bytes each")
        assert a.read_bytes() == b.read_bytes()
