"""Threaded TCP broker: token-gated sessions, ``#`` filters, QoS 0 fan-out."""
from __future__ import annotations

import itertools
import logging
import queue
import socket
import threading
from dataclasses import dataclass, field
from typing import Iterable, Optional

from . import codec
from .codec import ConnAck, Connect, Disconnect, PingReq, PingResp, Publish, SubAck, Subscribe
from .topics import InvalidTopic, check_filter, check_topic, topic_matches

log = logging.getLogger(__name__)

DEFAULT_PORT = 1883


class BrokerStartupError(RuntimeError):
    pass


def parse_address(text: str, default_port: int = DEFAULT_PORT) -> tuple[str, int]:
    """Parse ``host:port`` (or bare ``host``) into a socket address."""
    host, sep, port = text.rpartition(":")
    if not sep:
        return text or "127.0.0.1", default_port
    return host or "127.0.0.1", int(port)


def recv_exact(sock: socket.socket, n: int) -> bytes:
    """Read exactly ``n`` bytes; returns fewer only at EOF."""
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(min(remaining, 1 << 16))
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket, max_frame_bytes: int = codec.MAX_FRAME_BYTES) -> Optional[codec.Frame]:
    """Read one frame from a stream socket. ``None`` means clean EOF."""
    header = recv_exact(sock, codec.HEADER.size)
    if not header:
        return None
    kind, length = codec.decode_header(header, max_frame_bytes)
    body = recv_exact(sock, length)
    if len(body) < length:
        raise codec.Truncated(f"connection closed mid-frame ({len(body)}/{length} bytes)")
    return codec.decode_body(kind, body)


_STOP = object()


class _Session:
    def __init__(self, sock: socket.socket, client_id: str) -> None:
        self.sock = sock
        self.client_id = client_id
        self.outbox: "queue.SimpleQueue[object]" = queue.SimpleQueue()
        self.filters: list[str] = []
        self.writer = threading.Thread(target=self._drain, name=f"broker-tx-{client_id}", daemon=True)

    def send(self, data: bytes) -> None:
        self.outbox.put(data)

    def close(self) -> None:
        self.outbox.put(_STOP)

    def _drain(self) -> None:
        while True:
            item = self.outbox.get()
            if item is _STOP:
                break
            try:
                self.sock.sendall(item)  # type: ignore[arg-type]
            except OSError:
                break
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


@dataclass
class BrokerState:
    """Live sessions and their filters. Mutated only under ``lock``."""

    sessions: dict[str, _Session] = field(default_factory=dict)
    subscriptions: dict[str, set[str]] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def add(self, session: _Session) -> Optional[_Session]:
        with self.lock:
            old = self.sessions.get(session.client_id)
            if old is not None:
                self._drop_locked(old)
            self.sessions[session.client_id] = session
            return old

    def remove(self, session: _Session) -> None:
        with self.lock:
            if self.sessions.get(session.client_id) is session:
                self._drop_locked(session)

    def _drop_locked(self, session: _Session) -> None:
        del self.sessions[session.client_id]
        for f in session.filters:
            subs = self.subscriptions.get(f)
            if subs is not None:
                subs.discard(session.client_id)
                if not subs:
                    del self.subscriptions[f]

    def subscribe(self, session: _Session, filt: str, ack: bytes) -> None:
        # ack is queued under the lock so it precedes any message routed by the new filter
        with self.lock:
            if self.sessions.get(session.client_id) is not session:
                return
            if filt not in session.filters:
                session.filters.append(filt)
            self.subscriptions.setdefault(filt, set()).add(session.client_id)
            session.send(ack)

    def targets(self, topic: str) -> list[_Session]:
        with self.lock:
            ids: set[str] = set()
            for filt, subs in self.subscriptions.items():
                if topic_matches(filt, topic):
                    ids |= subs
            return [self.sessions[i] for i in ids]


class Broker:
    """Accepts authenticated clients and forwards each publish to every
    matching live session, in arrival order per publisher connection."""

    def __init__(self, listen: tuple[str, int] = ("127.0.0.1", DEFAULT_PORT),
                 tokens: Iterable[str] = (), max_frame_bytes: int = codec.MAX_FRAME_BYTES) -> None:
        self.listen = listen
        self.tokens = frozenset(tokens)
        self.max_frame_bytes = max_frame_bytes
        self.state = BrokerState()
        self._sock: Optional[socket.socket] = None
        self._address: Optional[tuple[str, int]] = None
        self._accept_thread: Optional[threading.Thread] = None
        self._conns: set[socket.socket] = set()
        self._conns_lock = threading.Lock()
        self._stopping = threading.Event()
        self._anon = itertools.count()

    @property
    def address(self) -> tuple[str, int]:
        assert self._address is not None, "broker not started"
        return self._address

    def start(self) -> "Broker":
        try:
            sock = socket.create_server(self.listen, reuse_port=False)
        except OSError as exc:
            raise BrokerStartupError(f"cannot bind {self.listen}: {exc}") from exc
        self._sock = sock
        self._address = sock.getsockname()[:2]
        self._accept_thread = threading.Thread(target=self._accept, name="broker-accept", daemon=True)
        self._accept_thread.start()
        log.info("broker listening on %s:%d", *self.address)
        return self

    def stop(self) -> None:
        self._stopping.set()
        if self._sock is not None:
            try:
                # close() alone does not wake a blocked accept() on Linux
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                self._sock.close()
            except OSError:
                pass
        with self._conns_lock:
            conns = list(self._conns)
        for c in conns:
            try:
                c.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=5)

    def __enter__(self) -> "Broker":
        return self.start() if self._sock is None else self

    def __exit__(self, *exc: object) -> None:
        self.stop()

    def _accept(self) -> None:
        assert self._sock is not None
        while not self._stopping.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                break
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._conns_lock:
                self._conns.add(conn)
            threading.Thread(target=self._serve, args=(conn,), name="broker-rx", daemon=True).start()

    def _reject(self, conn: socket.socket, status: int) -> None:
        try:
            conn.sendall(codec.encode_frame(ConnAck(status)))
            conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass

    def _serve(self, conn: socket.socket) -> None:
        session: Optional[_Session] = None
        try:
            try:
                first = read_frame(conn, self.max_frame_bytes)
            except codec.MalformedFrame as exc:
                log.warning("malformed frame before connect: %s", exc)
                self._reject(conn, codec.STATUS_MALFORMED)
                return
            if first is None:
                return
            if not isinstance(first, Connect):
                # nothing is read or forwarded from a connection that skipped Connect
                log.warning("first frame was %s, not Connect", type(first).__name__)
                self._reject(conn, codec.STATUS_MALFORMED)
                return
            if first.auth_token not in self.tokens:
                log.warning("auth failure for client %r", first.client_id)
                self._reject(conn, codec.STATUS_AUTH_FAILED)
                return
            client_id = first.client_id or f"anon-{next(self._anon)}"
            session = _Session(conn, client_id)
            old = self.state.add(session)
            if old is not None:
                old.close()
            session.writer.start()
            session.send(codec.encode_frame(ConnAck(codec.STATUS_OK)))
            self._loop(session)
        except OSError:
            pass
        finally:
            if session is not None:
                self.state.remove(session)
                session.close()
            else:
                try:
                    conn.close()
                except OSError:
                    pass
            with self._conns_lock:
                self._conns.discard(conn)

    def _loop(self, session: _Session) -> None:
        conn = session.sock
        while True:
            try:
                frame = read_frame(conn, self.max_frame_bytes)
            except codec.MalformedFrame as exc:
                log.warning("client %r sent malformed frame: %s", session.client_id, exc)
                session.send(codec.encode_frame(ConnAck(codec.STATUS_MALFORMED)))
                return
            if frame is None or isinstance(frame, Disconnect):
                return
            if isinstance(frame, Publish):
                try:
                    check_topic(frame.topic)
                except InvalidTopic as exc:
                    log.warning("client %r bad publish topic: %s", session.client_id, exc)
                    session.send(codec.encode_frame(ConnAck(codec.STATUS_MALFORMED)))
                    return
                data = codec.encode_frame(frame, self.max_frame_bytes)
                for target in self.state.targets(frame.topic):
                    target.send(data)
            elif isinstance(frame, Subscribe):
                try:
                    check_filter(frame.filter)
                except InvalidTopic:
                    session.send(codec.encode_frame(SubAck(codec.STATUS_MALFORMED)))
                    continue
                self.state.subscribe(session, frame.filter, codec.encode_frame(SubAck(codec.STATUS_OK)))
            elif isinstance(frame, PingReq):
                session.send(codec.encode_frame(PingResp()))
            else:
                log.warning("client %r sent unexpected %s", session.client_id, type(frame).__name__)
                session.send(codec.encode_frame(ConnAck(codec.STATUS_MALFORMED)))
                return


def broker_serve(listen: tuple[str, int], auth_tokens: Iterable[str],
                 max_frame_bytes: int = codec.MAX_FRAME_BYTES) -> Broker:
    """Bind and start a broker in background threads."""
    return Broker(listen, auth_tokens, max_frame_bytes).start()
