"""Blocking client for the broker.

A background reader thread decodes incoming frames; acknowledgements are
handed to the waiting call and publishes are queued for :meth:`Client.messages`.
"""
from __future__ import annotations

import logging
import queue
import random
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

from . import codec
from .broker import parse_address, read_frame
from .codec import ConnAck, Connect, Disconnect, PingReq, PingResp, Publish, SubAck, Subscribe
from .topics import check_filter, check_topic

log = logging.getLogger(__name__)


class ClientError(Exception):
    pass


class AuthRejected(ClientError):
    pass


class ConnectionLost(ClientError):
    pass


class ServerProtocolError(ClientError):
    """The server sent a frame this client cannot interpret."""


@dataclass
class Backoff:
    """Exponential reconnect delays: ``base * 2**attempt`` capped, with
    multiplicative jitter drawn from ``[1 - jitter, 1 + jitter]``."""

    base: float = 1.0
    cap: float = 60.0
    jitter: float = 0.2
    rng: random.Random = field(default_factory=random.Random)
    attempt: int = 0

    def next_delay(self) -> float:
        raw = min(self.cap, self.base * (2 ** self.attempt))
        self.attempt += 1
        return raw * self.rng.uniform(1 - self.jitter, 1 + self.jitter)

    def reset(self) -> None:
        self.attempt = 0


_CLOSED = object()


class Client:
    def __init__(self, sock: socket.socket, client_id: str) -> None:
        self._sock = sock
        self.client_id = client_id
        self._send_lock = threading.Lock()
        self._ack_lock = threading.Lock()
        self._acks: "queue.SimpleQueue[object]" = queue.SimpleQueue()
        self._messages: "queue.SimpleQueue[object]" = queue.SimpleQueue()
        self._closed = threading.Event()
        self.error: Optional[ClientError] = None
        self._reader = threading.Thread(target=self._read_loop, name=f"client-rx-{client_id}", daemon=True)

    @classmethod
    def connect(cls, address: "tuple[str, int] | str", client_id: str, token: str,
                timeout: float = 10.0) -> "Client":
        """Open a session.

        Raises:
            AuthRejected: the broker refused the token.
            ConnectionLost: the broker is unreachable or hung up.
            ServerProtocolError: the handshake reply was not a ConnAck.
        """
        if isinstance(address, str):
            address = parse_address(address)
        try:
            sock = socket.create_connection(address, timeout=timeout)
        except OSError as exc:
            raise ConnectionLost(f"cannot reach broker at {address}: {exc}") from exc
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            sock.sendall(codec.encode_frame(Connect(client_id, token)))
            reply = read_frame(sock)
        except codec.MalformedFrame as exc:
            sock.close()
            raise ServerProtocolError(str(exc)) from exc
        except OSError as exc:
            sock.close()
            raise ConnectionLost(str(exc)) from exc
        if reply is None:
            sock.close()
            raise ConnectionLost("broker closed connection during handshake")
        if not isinstance(reply, ConnAck):
            sock.close()
            raise ServerProtocolError(f"expected ConnAck, got {type(reply).__name__}")
        if reply.status != codec.STATUS_OK:
            sock.close()
            if reply.status == codec.STATUS_AUTH_FAILED:
                raise AuthRejected(f"broker rejected token for {client_id!r}")
            raise ServerProtocolError(f"ConnAck status {reply.status}")
        sock.settimeout(None)
        client = cls(sock, client_id)
        client._reader.start()
        return client

    @property
    def closed(self) -> bool:
        return self._closed.is_set()

    def wait_closed(self, timeout: Optional[float] = None) -> bool:
        return self._closed.wait(timeout)

    def _fail(self, err: ClientError) -> None:
        if self.error is None:
            self.error = err
        self._closed.set()
        self._acks.put(_CLOSED)
        self._messages.put(_CLOSED)

    def _read_loop(self) -> None:
        try:
            while True:
                frame = read_frame(self._sock)
                if frame is None:
                    self._fail(ConnectionLost("broker closed the connection"))
                    return
                if isinstance(frame, Publish):
                    self._messages.put((frame.topic, frame.payload))
                elif isinstance(frame, (SubAck, PingResp)):
                    self._acks.put(frame)
                elif isinstance(frame, ConnAck) and frame.status != codec.STATUS_OK:
                    self._fail(ServerProtocolError(f"broker closed session with status {frame.status}"))
                    return
                else:
                    self._fail(ServerProtocolError(f"unexpected {type(frame).__name__} from broker"))
                    return
        except codec.MalformedFrame as exc:
            self._fail(ServerProtocolError(f"malformed frame from broker: {exc}"))
        except OSError as exc:
            self._fail(ConnectionLost(str(exc)))

    def _send(self, frame: codec.Frame) -> None:
        if self._closed.is_set():
            raise self.error or ConnectionLost("connection closed")
        data = codec.encode_frame(frame)
        try:
            with self._send_lock:
                self._sock.sendall(data)
        except OSError as exc:
            self._fail(ConnectionLost(str(exc)))
            raise self.error from exc  # type: ignore[misc]

    def _await_ack(self, kind: type, timeout: float) -> codec.Frame:
        try:
            item = self._acks.get(timeout=timeout)
        except queue.Empty:
            raise ConnectionLost(f"no {kind.__name__} within {timeout}s") from None
        if item is _CLOSED:
            self._acks.put(_CLOSED)
            raise self.error or ConnectionLost("connection closed")
        if not isinstance(item, kind):
            raise ServerProtocolError(f"expected {kind.__name__}, got {type(item).__name__}")
        return item  # type: ignore[return-value]

    def publish(self, topic: str, payload: bytes) -> None:
        check_topic(topic)
        self._send(Publish(topic, bytes(payload)))

    def subscribe(self, filt: str, timeout: float = 10.0) -> Iterator[tuple[str, bytes]]:
        """Register a filter and return the message stream.

        The SubAck is awaited before returning, so no matching message can
        precede it. All subscriptions on one client share a single stream.
        """
        check_filter(filt)
        with self._ack_lock:
            self._send(Subscribe(filt))
            ack = self._await_ack(SubAck, timeout)
        if ack.status != codec.STATUS_OK:  # type: ignore[union-attr]
            raise ServerProtocolError(f"SubAck status {ack.status}")  # type: ignore[union-attr]
        return self.messages()

    def ping(self, timeout: float = 10.0) -> None:
        with self._ack_lock:
            self._send(PingReq())
            self._await_ack(PingResp, timeout)

    def get_message(self, timeout: Optional[float] = None) -> Optional[tuple[str, bytes]]:
        """Next ``(topic, payload)``; ``None`` on timeout.

        Raises:
            ClientError: once the connection has ended and the queue is drained.
        """
        try:
            item = self._messages.get(timeout=timeout)
        except queue.Empty:
            return None
        if item is _CLOSED:
            self._messages.put(_CLOSED)
            raise self.error or ConnectionLost("connection closed")
        return item  # type: ignore[return-value]

    def messages(self, timeout: Optional[float] = None) -> Iterator[tuple[str, bytes]]:
        """Yield messages in arrival order; ends on timeout, raises on loss."""
        while True:
            msg = self.get_message(timeout)
            if msg is None:
                return
            yield msg

    def close(self) -> None:
        if not self._closed.is_set():
            try:
                with self._send_lock:
                    self._sock.sendall(codec.encode_frame(Disconnect()))
            except OSError:
                pass
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._reader.join(timeout=5)
        self._sock.close()

    def __enter__(self) -> "Client":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def client_connect(address: "tuple[str, int] | str", client_id: str, token: str) -> Client:
    return Client.connect(address, client_id, token)


def connect_with_backoff(address: "tuple[str, int] | str", client_id: str, token: str,
                         backoff: Optional[Backoff] = None, max_attempts: Optional[int] = None,
                         should_stop: Callable[[], bool] = lambda: False,
                         sleep: Callable[[float], None] = time.sleep) -> Client:
    """Retry :meth:`Client.connect` on connection loss. Auth rejection is final."""
    backoff = backoff or Backoff()
    attempts = 0
    while True:
        try:
            client = Client.connect(address, client_id, token)
            backoff.reset()
            return client
        except ConnectionLost as exc:
            attempts += 1
            if should_stop() or (max_attempts is not None and attempts >= max_attempts):
                raise
            delay = backoff.next_delay()
            log.warning("connect to %s failed (%s); retrying in %.1fs", address, exc, delay)
            sleep(delay)
