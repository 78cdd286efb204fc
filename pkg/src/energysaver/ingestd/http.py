"""Read-only JSON/CSV API over the store, ingest stats and forecast reports."""
from __future__ import annotations

import hmac
import io
import json
import logging
import re
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Optional
from urllib.parse import parse_qs, urlsplit

from ..forecast.job import ForecastRegistry
from ..tsstore import TsStore
from ..wirebus import parse_address
from .daemon import DEFAULT_HTTP_PORT, IngestConfig, IngestStats

log = logging.getLogger(__name__)

PREFIX = "/api/v1"
_SENSOR_ROUTE = re.compile(r"^/api/v1/sensors/([A-Za-z0-9_-]{1,64})/(latest|readings|export\.csv|forecast/latest)$")
MAX_TS = 2 ** 63 - 1


class BadRequest(ValueError):
    pass


def _int_param(query: dict[str, list[str]], name: str, default: int) -> int:
    values = query.get(name)
    if not values:
        return default
    if len(values) > 1:
        raise BadRequest(f"{name} given more than once")
    try:
        value = int(values[0])
    except ValueError:
        raise BadRequest(f"{name} must be an integer, got {values[0]!r}") from None
    if value < 0:
        raise BadRequest(f"{name} must be non-negative")
    return value


def _range(query: dict[str, list[str]]) -> tuple[int, int]:
    lo = _int_param(query, "from_ms", 0)
    hi = _int_param(query, "to_ms", MAX_TS)
    if lo > hi:
        raise BadRequest("from_ms must not exceed to_ms")
    return lo, hi


class ApiServer:
    """Threaded HTTP server handle; :meth:`stop` shuts it down."""

    def __init__(self, listen: tuple[str, int], store: TsStore, stats: IngestStats,
                 registry: Optional[ForecastRegistry], tokens: tuple[str, ...],
                 auth_enabled: bool = True) -> None:
        self.store = store
        self.stats = stats
        self.registry = registry
        self.tokens = tokens
        self.auth_enabled = auth_enabled
        self._httpd = ThreadingHTTPServer(listen, _make_handler(self))
        self._httpd.daemon_threads = True
        self._thread = threading.Thread(target=self._httpd.serve_forever, name="http", daemon=True)

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]  # type: ignore[return-value]

    def start(self) -> "ApiServer":
        self._thread.start()
        log.info("http api listening on %s:%d", *self.address)
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)

    def __enter__(self) -> "ApiServer":
        return self

    def __exit__(self, *exc: object) -> None:
        self.stop()

    def authorized(self, header: Optional[str]) -> bool:
        if not self.auth_enabled:
            return True
        if not header or not header.startswith("Bearer "):
            return False
        given = header[len("Bearer "):].strip().encode()
        # check every token so timing does not reveal which one is close
        ok = False
        for tok in self.tokens:
            ok |= hmac.compare_digest(given, tok.encode())
        return ok

    def route(self, path: str, query: dict[str, list[str]]) -> tuple[int, str, bytes]:
        """Resolve one GET to ``(status, content type, body)``."""
        if path == f"{PREFIX}/sensors":
            body = [{"sensor_id": s, "count": self.store.count(s)} for s in self.store.sensors()]
            return _json(HTTPStatus.OK, body)
        if path == f"{PREFIX}/stats":
            return _json(HTTPStatus.OK, self.stats.snapshot())
        m = _SENSOR_ROUTE.match(path)
        if m is None:
            return _error(HTTPStatus.NOT_FOUND, f"no route for {path}")
        sensor, what = m.groups()
        if what == "forecast/latest":
            report = self.registry.latest(sensor) if self.registry is not None else None
            if report is None:
                return _error(HTTPStatus.NOT_FOUND, f"no forecast for sensor {sensor}")
            return _json(HTTPStatus.OK, report.to_dict())
        if sensor not in self.store.sensors():
            return _error(HTTPStatus.NOT_FOUND, f"unknown sensor {sensor}")
        if what == "latest":
            return _json(HTTPStatus.OK, self.store.latest(sensor))
        lo, hi = _range(query)
        if what == "readings":
            return _json(HTTPStatus.OK, self.store.query_range(sensor, lo, hi))
        buf = io.StringIO(newline="")
        self.store.export_csv(sensor, lo, hi, buf)
        return HTTPStatus.OK, "text/csv; charset=utf-8", buf.getvalue().encode("utf-8")


def _json(status: int, body: Any) -> tuple[int, str, bytes]:
    return status, "application/json", json.dumps(body, separators=(",", ":")).encode("utf-8")


def _error(status: int, reason: str) -> tuple[int, str, bytes]:
    return _json(status, {"error": reason})


def _make_handler(server: ApiServer) -> type:
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def do_GET(self) -> None:  # noqa: N802
            if not server.authorized(self.headers.get("Authorization")):
                status, ctype, body = _error(HTTPStatus.UNAUTHORIZED, "missing or invalid bearer token")
                extra = {"WWW-Authenticate": "Bearer"}
            else:
                extra = {}
                url = urlsplit(self.path)
                try:
                    status, ctype, body = server.route(url.path.rstrip("/") or "/",
                                                       parse_qs(url.query, keep_blank_values=True))
                except BadRequest as exc:
                    status, ctype, body = _error(HTTPStatus.BAD_REQUEST, str(exc))
                except Exception as exc:  # keep the server up, report the failure
                    log.exception("http handler failed for %s", self.path)
                    status, ctype, body = _error(HTTPStatus.INTERNAL_SERVER_ERROR, type(exc).__name__)
            self.send_response(status)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            for k, v in extra.items():
                self.send_header(k, v)
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, fmt: str, *args: Any) -> None:
            log.debug("http %s " + fmt, self.address_string(), *args)

    return Handler


def http_serve(config: IngestConfig, store: TsStore, stats: IngestStats,
               forecast_registry: Optional[ForecastRegistry] = None) -> ApiServer:
    """Start the API on ``config.http_listen``.

    Raises:
        OSError: if the address cannot be bound.
    """
    listen = parse_address(config.http_listen, DEFAULT_HTTP_PORT)
    return ApiServer(listen, store, stats, forecast_registry, config.api_tokens,
                     config.auth_enabled).start()
