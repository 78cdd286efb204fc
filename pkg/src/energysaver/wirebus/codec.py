"""Frame codec for the pub/sub wire protocol.

Every frame is ``kind:u8 | body_len:u32be | body``. Strings inside a body are
``len:u16be | utf-8``. The publish payload is the remainder of the body after
the topic string. Acknowledgement bodies are one status byte.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Union

MAX_FRAME_BYTES = 1 << 20
MAX_TOPIC_BYTES = 256
HEADER = struct.Struct(">BI")

STATUS_OK = 0
STATUS_AUTH_FAILED = 1
STATUS_MALFORMED = 2


class Kind(enum.IntEnum):
    CONNECT = 1
    CONNACK = 2
    PUBLISH = 3
    SUBSCRIBE = 4
    SUBACK = 5
    PINGREQ = 6
    PINGRESP = 7
    DISCONNECT = 8


class FrameError(Exception):
    """Base class for codec failures."""


class EncodeError(FrameError):
    pass


class MalformedFrame(FrameError):
    pass


class UnknownKind(MalformedFrame):
    pass


class Truncated(MalformedFrame):
    pass


class InvalidUtf8(MalformedFrame):
    pass


class LengthOverflow(MalformedFrame):
    pass


@dataclass(frozen=True)
class Connect:
    client_id: str
    auth_token: str


@dataclass(frozen=True)
class ConnAck:
    status: int = STATUS_OK


@dataclass(frozen=True)
class Publish:
    topic: str
    payload: bytes


@dataclass(frozen=True)
class Subscribe:
    filter: str


@dataclass(frozen=True)
class SubAck:
    status: int = STATUS_OK


@dataclass(frozen=True)
class PingReq:
    pass


@dataclass(frozen=True)
class PingResp:
    pass


@dataclass(frozen=True)
class Disconnect:
    pass


Frame = Union[Connect, ConnAck, Publish, Subscribe, SubAck, PingReq, PingResp, Disconnect]

_KIND_OF = {
    Connect: Kind.CONNECT, ConnAck: Kind.CONNACK, Publish: Kind.PUBLISH,
    Subscribe: Kind.SUBSCRIBE, SubAck: Kind.SUBACK, PingReq: Kind.PINGREQ,
    PingResp: Kind.PINGRESP, Disconnect: Kind.DISCONNECT,
}


def _enc_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise EncodeError(f"string of {len(raw)} bytes exceeds u16 length prefix")
    return struct.pack(">H", len(raw)) + raw


def _status(s: int) -> bytes:
    if not 0 <= s <= 255:
        raise EncodeError(f"status {s} does not fit in a byte")
    return bytes([s])


def encode_body(frame: Frame) -> bytes:
    if isinstance(frame, Connect):
        return _enc_str(frame.client_id) + _enc_str(frame.auth_token)
    if isinstance(frame, (ConnAck, SubAck)):
        return _status(frame.status)
    if isinstance(frame, Publish):
        if len(frame.topic.encode("utf-8")) > MAX_TOPIC_BYTES:
            raise EncodeError("topic exceeds 256 bytes")
        return _enc_str(frame.topic) + bytes(frame.payload)
    if isinstance(frame, Subscribe):
        if len(frame.filter.encode("utf-8")) > MAX_TOPIC_BYTES:
            raise EncodeError("filter exceeds 256 bytes")
        return _enc_str(frame.filter)
    if isinstance(frame, (PingReq, PingResp, Disconnect)):
        return b""
    raise EncodeError(f"not a frame: {frame!r}")


def encode_frame(frame: Frame, max_frame_bytes: int = MAX_FRAME_BYTES) -> bytes:
    """Serialize a frame.

    Raises:
        EncodeError: if the encoded frame would exceed ``max_frame_bytes``.
    """
    body = encode_body(frame)
    if HEADER.size + len(body) > max_frame_bytes:
        raise EncodeError(f"frame of {HEADER.size + len(body)} bytes exceeds {max_frame_bytes}")
    return HEADER.pack(_KIND_OF[type(frame)], len(body)) + body


class _Reader:
    def __init__(self, buf: bytes) -> None:
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise Truncated(f"need {n} bytes at offset {self.pos}, have {len(self.buf) - self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def string(self) -> str:
        (n,) = struct.unpack(">H", self.take(2))
        raw = self.take(n)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InvalidUtf8(str(exc)) from None

    def rest(self) -> bytes:
        out = self.buf[self.pos:]
        self.pos = len(self.buf)
        return out

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise MalformedFrame(f"{len(self.buf) - self.pos} trailing bytes in body")


def decode_header(header: bytes, max_frame_bytes: int = MAX_FRAME_BYTES) -> tuple[Kind, int]:
    """Validate a 5-byte header and return ``(kind, body_len)``."""
    if len(header) < HEADER.size:
        raise Truncated(f"header needs {HEADER.size} bytes, have {len(header)}")
    code, length = HEADER.unpack(header[:HEADER.size])
    try:
        kind = Kind(code)
    except ValueError:
        raise UnknownKind(f"unknown frame kind {code}") from None
    if HEADER.size + length > max_frame_bytes:
        raise LengthOverflow(f"declared body length {length} exceeds frame limit")
    return kind, length


def decode_body(kind: Kind, body: bytes) -> Frame:
    r = _Reader(body)
    frame: Frame
    if kind is Kind.CONNECT:
        frame = Connect(r.string(), r.string())
    elif kind is Kind.CONNACK:
        frame = ConnAck(r.take(1)[0])
    elif kind is Kind.SUBACK:
        frame = SubAck(r.take(1)[0])
    elif kind is Kind.PUBLISH:
        topic = r.string()
        if len(topic.encode("utf-8")) > MAX_TOPIC_BYTES:
            raise LengthOverflow("topic exceeds 256 bytes")
        frame = Publish(topic, r.rest())
    elif kind is Kind.SUBSCRIBE:
        filt = r.string()
        if len(filt.encode("utf-8")) > MAX_TOPIC_BYTES:
            raise LengthOverflow("filter exceeds 256 bytes")
        frame = Subscribe(filt)
    elif kind is Kind.PINGREQ:
        frame = PingReq()
    elif kind is Kind.PINGRESP:
        frame = PingResp()
    else:
        frame = Disconnect()
    r.done()
    return frame


def decode_frame(data: bytes, max_frame_bytes: int = MAX_FRAME_BYTES) -> Frame:
    """Parse exactly one complete frame.

    Raises:
        MalformedFrame: one of its subclasses for unknown kinds, truncation,
            bad UTF-8 or declared lengths past the frame limit.
    """
    data = bytes(data)
    kind, length = decode_header(data, max_frame_bytes)
    body = data[HEADER.size:]
    if len(body) < length:
        raise Truncated(f"declared body length {length}, got {len(body)}")
    if len(body) > length:
        raise MalformedFrame(f"{len(body) - length} bytes after frame end")
    return decode_body(kind, body)
