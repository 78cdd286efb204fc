"""Broker subscriber that validates readings and appends them to the store."""
from __future__ import annotations

import json
import logging
import os
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

from ..core import DomainError, PowerReading, Reason, SensorProfile, validate_reading
from ..tsstore import StoreError, TsStore
from ..wirebus import AuthRejected, Backoff, Client, ClientError, connect_with_backoff, parse_address
from ..wirebus.topics import check_filter

log = logging.getLogger(__name__)

DEFAULT_HTTP_PORT = 5000
DEFAULT_FILTER = "energysaver/#"
TOKEN_ENV = "ENERGYSAVER_TOKEN"

MALFORMED = "malformed"
STORE_REJECTED = "StoreRejected"
INTERNAL = "InternalError"


class ConfigError(ValueError):
    pass


def _check_port(addr: str, what: str) -> str:
    try:
        _, port = parse_address(addr)
    except ValueError:
        raise ConfigError(f"{what}: bad address {addr!r}") from None
    if not 1 <= port <= 65535:
        raise ConfigError(f"{what}: port {port} outside 1..65535")
    return addr


@dataclass(frozen=True)
class IngestConfig:
    broker: str = "127.0.0.1:1883"
    broker_token: str = ""
    topic_filter: str = DEFAULT_FILTER
    data_dir: str = "data"
    http_listen: str = f"127.0.0.1:{DEFAULT_HTTP_PORT}"
    api_tokens: tuple[str, ...] = ()
    auth_enabled: bool = True
    profiles: tuple[SensorProfile, ...] = ()
    fsync: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "api_tokens", tuple(self.api_tokens))
        object.__setattr__(self, "profiles", tuple(self.profiles))
        _check_port(self.broker, "broker")
        _check_port(self.http_listen, "http_listen")
        check_filter(self.topic_filter)
        if self.auth_enabled and not self.api_tokens:
            raise ConfigError("api_tokens: at least one token is required when auth is enabled")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], path: str = "ingest") -> "IngestConfig":
        """Build from a JSON object; unknown keys are rejected by dotted path."""
        known = set(cls.__dataclass_fields__)
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown config key {path}.{key}")
        kw = dict(d)
        if "profiles" in kw:
            kw["profiles"] = tuple(SensorProfile.from_dict(p) for p in kw["profiles"])
        if "api_tokens" in kw:
            kw["api_tokens"] = tuple(kw["api_tokens"])
        return cls(**kw)

    def resolved_broker_token(self) -> str:
        return self.broker_token or os.environ.get(TOKEN_ENV, "")

    def profile_for(self, sensor: str) -> SensorProfile:
        for p in self.profiles:
            if p.sensor == sensor:
                return p
        return SensorProfile(sensor)


class IngestStats:
    """Thread-safe ingestion counters."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.received = 0
        self.accepted = 0
        self.rejected: Counter[str] = Counter()
        self.last_error: Optional[str] = None

    def accept(self) -> None:
        with self._lock:
            self.received += 1
            self.accepted += 1

    def reject(self, reason: str, error: Optional[str] = None) -> None:
        with self._lock:
            self.received += 1
            self.rejected[reason] += 1
            if error is not None:
                self.last_error = error

    def note_error(self, error: str) -> None:
        with self._lock:
            self.last_error = error

    def snapshot(self) -> dict[str, Any]:
        with self._lock:
            return {"received": self.received, "accepted": self.accepted,
                    "rejected": dict(sorted(self.rejected.items())), "last_error": self.last_error}


class Ingestor:
    """Parse, validate and store one payload at a time.

    Kept separate from the network loop so it can be driven directly.
    """

    def __init__(self, config: IngestConfig, store: TsStore, stats: IngestStats) -> None:
        self.config = config
        self.store = store
        self.stats = stats
        self._last: dict[str, Optional[int]] = {}

    def handle(self, topic: str, payload: bytes) -> Reason | str:
        try:
            return self._handle(topic, payload)
        except Exception as exc:
            # one bad message must not take the daemon down
            log.exception("unexpected failure ingesting from %s", topic)
            self.stats.reject(INTERNAL, f"{topic}: {type(exc).__name__}: {exc}")
            return INTERNAL

    def _handle(self, topic: str, payload: bytes) -> Reason | str:
        try:
            doc = json.loads(payload.decode("utf-8"))
            if not isinstance(doc, dict):
                raise DomainError("payload is not a JSON object")
            reading = PowerReading.from_document(doc)
        except (UnicodeDecodeError, ValueError, TypeError) as exc:
            # DomainError and JSONDecodeError are both ValueErrors
            self.stats.reject(MALFORMED, f"{topic}: {exc}")
            return MALFORMED
        sensor = str(reading.sensor)
        if sensor not in self._last:
            self._last[sensor] = self.store.last_ts(sensor)
        verdict = validate_reading(reading, self.config.profile_for(sensor), self._last[sensor])
        if not verdict.accepted:
            self.stats.reject(verdict.reason.value)
            return verdict.reason
        try:
            self.store.append(reading.to_document())
        except StoreError as exc:
            log.error("store rejected reading from %s: %s", sensor, exc)
            self.stats.reject(STORE_REJECTED, str(exc))
            return STORE_REJECTED
        self._last[sensor] = reading.ts_ms
        self.stats.accept()
        return Reason.OK


class IngestHandle:
    """Running ingest daemon. :meth:`stop` drains queued messages before returning."""

    def __init__(self, config: IngestConfig, store: TsStore, stats: IngestStats,
                 backoff: Optional[Backoff] = None, poll_s: float = 0.1) -> None:
        self.config = config
        self.store = store
        self.stats = stats
        self.ingestor = Ingestor(config, store, stats)
        self.backoff = backoff or Backoff()
        self.poll_s = poll_s
        self.subscribed = threading.Event()
        self.error: Optional[BaseException] = None
        self._stop = threading.Event()
        self._client: Optional[Client] = None
        self._thread = threading.Thread(target=self._run, name="ingest", daemon=True)

    def start(self) -> "IngestHandle":
        self._thread.start()
        return self

    def wait_subscribed(self, timeout: Optional[float] = None) -> bool:
        return self.subscribed.wait(timeout)

    def _connect(self) -> Client:
        client = connect_with_backoff(self.config.broker, "ingestd", self.config.resolved_broker_token(),
                                      self.backoff, should_stop=self._stop.is_set,
                                      sleep=self._stop.wait)
        try:
            client.subscribe(self.config.topic_filter)
        except ClientError:
            client.close()
            raise
        log.info("ingest subscribed to %s on %s", self.config.topic_filter, self.config.broker)
        return client

    def _drain(self, client: Client) -> None:
        try:
            while (msg := client.get_message(timeout=0)) is not None:
                self.ingestor.handle(*msg)
        except ClientError:
            pass

    def _run(self) -> None:
        try:
            while not self._stop.is_set():
                try:
                    client = self._client = self._connect()
                except AuthRejected as exc:
                    log.error("ingest: %s", exc)
                    self.error = exc
                    self.stats.note_error(str(exc))
                    return
                except ClientError as exc:
                    if self._stop.is_set():
                        return
                    self.stats.note_error(str(exc))
                    continue
                self.subscribed.set()
                try:
                    while not self._stop.is_set():
                        msg = client.get_message(timeout=self.poll_s)
                        if msg is not None:
                            self.ingestor.handle(*msg)
                    self._drain(client)
                except ClientError as exc:
                    log.warning("ingest lost broker: %s; reconnecting", exc)
                    self.stats.note_error(f"broker connection lost: {exc}")
                finally:
                    self.subscribed.clear()
                    client.close()
                    self._client = None
        except BaseException as exc:  # pragma: no cover - last resort logging
            log.exception("ingest loop crashed")
            self.error = exc
            raise

    def stop(self, timeout: float = 10.0) -> None:
        self._stop.set()
        self._thread.join(timeout)

    @property
    def running(self) -> bool:
        return self._thread.is_alive()


def ingest_loop(config: IngestConfig, store: Optional[TsStore] = None,
                stats: Optional[IngestStats] = None, backoff: Optional[Backoff] = None) -> IngestHandle:
    """Start the ingest daemon thread; opens the store from ``config.data_dir`` if not given."""
    store = store if store is not None else TsStore(config.data_dir, fsync=config.fsync)
    return IngestHandle(config, store, stats or IngestStats(), backoff).start()
