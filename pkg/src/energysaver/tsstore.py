"""Append-only JSON-lines document store with a per-sensor time index.

Layout: ``<data_dir>/<sensor_id>.jsonl``, one canonical JSON document per
line. System documents live under a reserved namespace directory, e.g.
``__forecast__/s1`` is stored at ``<data_dir>/__forecast__/s1.jsonl``.
"""
from __future__ import annotations

import bisect
import csv
import json
import logging
import math
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, TextIO, Union

from .core import DomainError, SensorId, iso_ms

log = logging.getLogger(__name__)

Scalar = Union[str, int, float, bool]
Document = dict[str, Scalar]

RESERVED_NAMESPACES = ("__forecast__",)
CSV_COLUMNS = ("timestamp", "sensor_id", "voltage", "current", "power", "interval_s", "energy_wh")


class StoreError(Exception):
    pass


class SchemaError(StoreError):
    pass


class NonMonotonicAppend(StoreError):
    pass


def check_key(key: str) -> str:
    """Validate a store key: a sensor id, or ``<namespace>/<sensor id>``."""
    ns, sep, rest = str(key).partition("/")
    try:
        if sep:
            if ns not in RESERVED_NAMESPACES:
                raise DomainError(f"unknown namespace {ns!r}")
            SensorId(rest)
        else:
            SensorId(ns)
    except DomainError as exc:
        raise SchemaError(str(exc)) from None
    return str(key)


def check_document(doc: Mapping[str, Any]) -> Document:
    for k in ("sensor_id", "ts_ms"):
        if k not in doc:
            raise SchemaError(f"document lacks required key {k!r}")
    ts = doc["ts_ms"]
    if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0:
        raise SchemaError(f"ts_ms must be a non-negative integer, got {ts!r}")
    if not isinstance(doc["sensor_id"], str):
        raise SchemaError("sensor_id must be a string")
    check_key(doc["sensor_id"])
    out: Document = {}
    for k, v in doc.items():
        if not isinstance(k, str):
            raise SchemaError(f"non-string key {k!r}")
        if not isinstance(v, (str, int, float, bool)):
            raise SchemaError(f"field {k!r} is not a scalar ({type(v).__name__})")
        if isinstance(v, float) and not math.isfinite(v):
            raise SchemaError(f"field {k!r} is not finite")
        out[k] = v
    return out


def canonical_json(doc: Mapping[str, Any]) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def format_number(x: Scalar) -> str:
    """Render a cell for CSV export.

    Integers print as integers. Floats keep at most six decimals with
    trailing zeros trimmed (but at least one), and switch to exponent
    notation outside ``1e-3 <= |x| < 1e7``.
    """
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, str):
        return x
    if x == 0:
        return "0.0"
    if 1e-3 <= abs(x) < 1e7:
        s = f"{x:.6f}".rstrip("0")
        return s + "0" if s.endswith(".") else s
    mant, exp = f"{x:.6e}".split("e")
    mant = mant.rstrip("0")
    if mant.endswith("."):
        mant += "0"
    return f"{mant}e{exp}"


@dataclass
class _Log:
    path: Path
    ts: list[int] = field(default_factory=list)
    offsets: list[int] = field(default_factory=list)
    end: int = 0
    fh: Optional[Any] = None


class TsStore:
    """Handle over a data directory.

    Appends are serialized by an internal lock; readers take an index
    snapshot under the same lock and then read only bytes that were already
    written, so they always see whole documents.
    """

    def __init__(self, data_dir: Union[str, os.PathLike], fsync: bool = False) -> None:
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.fsync = fsync
        self._lock = threading.RLock()
        self._logs: dict[str, _Log] = {}
        self._rebuild()

    # -- index -------------------------------------------------------------

    def _path(self, key: str) -> Path:
        return self.data_dir.joinpath(*key.split("/")).with_suffix(".jsonl")

    def _rebuild(self) -> None:
        paths = list(self.data_dir.glob("*.jsonl"))
        for ns in RESERVED_NAMESPACES:
            paths += list((self.data_dir / ns).glob("*.jsonl"))
        for p in sorted(paths):
            rel = p.relative_to(self.data_dir).with_suffix("")
            key = "/".join(rel.parts)
            try:
                check_key(key)
            except SchemaError:
                log.warning("ignoring foreign file %s", p)
                continue
            self._logs[key] = self._scan(p)

    def _scan(self, path: Path) -> _Log:
        lg = _Log(path)
        with open(path, "rb") as fh:
            data = fh.read()
        pos = 0
        while pos < len(data):
            nl = data.find(b"\n", pos)
            if nl < 0:
                break
            try:
                doc = json.loads(data[pos:nl])
                ts = doc["ts_ms"]
            except (ValueError, KeyError, TypeError):
                break
            if lg.ts and ts <= lg.ts[-1]:
                break
            lg.ts.append(ts)
            lg.offsets.append(pos)
            pos = nl + 1
        if pos < len(data):
            log.warning("truncating torn tail of %s at byte %d", path, pos)
            with open(path, "r+b") as fh:
                fh.truncate(pos)
        lg.end = pos
        return lg

    # -- writes ------------------------------------------------------------

    def append(self, doc: Mapping[str, Any]) -> None:
        """Persist one document.

        Raises:
            SchemaError: missing/ill-typed required keys or non-scalar values.
            NonMonotonicAppend: ``ts_ms`` not above the sensor's last stored one.
        """
        d = check_document(doc)
        key = d["sensor_id"]
        line = (canonical_json(d) + "\n").encode("utf-8")
        with self._lock:
            lg = self._logs.get(key)  # type: ignore[arg-type]
            if lg is not None and lg.ts and d["ts_ms"] <= lg.ts[-1]:  # type: ignore[operator]
                raise NonMonotonicAppend(
                    f"{key}: ts_ms {d['ts_ms']} not after last stored {lg.ts[-1]}")
            if lg is None:
                lg = _Log(self._path(key))  # type: ignore[arg-type]
                lg.path.parent.mkdir(parents=True, exist_ok=True)
                self._logs[key] = lg  # type: ignore[index]
            if lg.fh is None:
                lg.fh = open(lg.path, "ab")
            lg.fh.write(line)
            lg.fh.flush()
            if self.fsync:
                os.fsync(lg.fh.fileno())
            lg.offsets.append(lg.end)
            lg.ts.append(d["ts_ms"])  # type: ignore[arg-type]
            lg.end += len(line)

    def close(self) -> None:
        with self._lock:
            for lg in self._logs.values():
                if lg.fh is not None:
                    lg.fh.close()
                    lg.fh = None

    def __enter__(self) -> "TsStore":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    # -- reads -------------------------------------------------------------

    def sensors(self) -> list[str]:
        """Plain sensor keys (reserved namespaces excluded), sorted."""
        with self._lock:
            return sorted(k for k, lg in self._logs.items() if "/" not in k and lg.ts)

    def query_range(self, sensor: str, from_ms: int, to_ms: int) -> list[Document]:
        if from_ms > to_ms:
            raise ValueError(f"from_ms {from_ms} > to_ms {to_ms}")
        with self._lock:
            lg = self._logs.get(str(sensor))
            if lg is None:
                return []
            lo = bisect.bisect_left(lg.ts, from_ms)
            hi = bisect.bisect_left(lg.ts, to_ms)
            if lo >= hi:
                return []
            start = lg.offsets[lo]
            stop = lg.offsets[hi] if hi < len(lg.offsets) else lg.end
            path = lg.path
        with open(path, "rb") as fh:
            fh.seek(start)
            chunk = fh.read(stop - start)
        return [json.loads(line) for line in chunk.splitlines()]

    def all(self, sensor: str) -> list[Document]:
        with self._lock:
            lg = self._logs.get(str(sensor))
            if lg is None or not lg.ts:
                return []
            last = lg.ts[-1]
        return self.query_range(sensor, 0, last + 1)

    def count(self, sensor: str) -> int:
        with self._lock:
            lg = self._logs.get(str(sensor))
            return len(lg.ts) if lg else 0

    def last_ts(self, sensor: str) -> Optional[int]:
        with self._lock:
            lg = self._logs.get(str(sensor))
            return lg.ts[-1] if lg and lg.ts else None

    def latest(self, sensor: str) -> Optional[Document]:
        last = self.last_ts(sensor)
        if last is None:
            return None
        docs = self.query_range(sensor, last, last + 1)
        return docs[0] if docs else None

    def export_csv(self, sensor: str, from_ms: int, to_ms: int, sink: TextIO) -> int:
        """Write the range as CSV to ``sink`` and return the row count (header excluded)."""
        docs = self.query_range(sensor, from_ms, to_ms)
        return write_csv(docs, sink)


def write_csv(docs: Iterable[Mapping[str, Any]], sink: TextIO) -> int:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    n = 0
    for d in docs:
        row = [iso_ms(d["ts_ms"]), d["sensor_id"]]
        for col in CSV_COLUMNS[2:]:
            v = d.get(col)
            row.append("" if v is None else format_number(v))
        w.writerow(row)
        n += 1
    return n


def open_store(data_dir: Union[str, os.PathLike], fsync: bool = False) -> TsStore:
    return TsStore(data_dir, fsync=fsync)
