import struct

import pytest
from hypothesis import given, settings, strategies as st

from energysaver.wirebus import codec
from energysaver.wirebus.codec import (ConnAck, Connect, Disconnect, EncodeError, InvalidUtf8,
                                       LengthOverflow, MalformedFrame, PingReq, PingResp, Publish,
                                       SubAck, Subscribe, Truncated, UnknownKind, decode_frame,
                                       encode_frame)

from strategies import frames


def test_pingreq_bytes():
    assert encode_frame(PingReq()) == bytes([0x06, 0, 0, 0, 0])


def test_connack_ok_bytes():
    assert encode_frame(ConnAck(0)) == bytes([0x02, 0, 0, 0, 1, 0])


def test_publish_bytes_hand_encoded():
    expected = bytes([0x03, 0, 0, 0, 7, 0, 3]) + b"a/b" + b"hi"
    assert encode_frame(Publish("a/b", b"hi")) == expected
    assert decode_frame(expected) == Publish("a/b", b"hi")


def test_connect_layout():
    raw = encode_frame(Connect("c1", "tok"))
    assert raw == bytes([0x01, 0, 0, 0, 9, 0, 2]) + b"c1" + bytes([0, 3]) + b"tok"


@pytest.mark.parametrize("frame", [Connect("id", "t"), ConnAck(1), Publish("x", b""), Subscribe("a/#"),
                                   SubAck(2), PingReq(), PingResp(), Disconnect()])
def test_round_trip_every_kind(frame):
    assert decode_frame(encode_frame(frame)) == frame


def test_unknown_kind():
    with pytest.raises(UnknownKind):
        decode_frame(bytes([0xFF, 0, 0, 0, 0]))
    with pytest.raises(UnknownKind):
        decode_frame(bytes([0x00, 0, 0, 0, 0]))


def test_truncated_publish_body():
    with pytest.raises(Truncated):
        decode_frame(bytes([0x03, 0, 0, 0, 3, 0, 1]))


def test_truncated_header():
    with pytest.raises(Truncated):
        decode_frame(b"\x06\x00")


def test_invalid_utf8():
    with pytest.raises(InvalidUtf8):
        decode_frame(bytes([0x04, 0, 0, 0, 3, 0, 1, 0xFF]))


def test_declared_length_over_limit():
    with pytest.raises(LengthOverflow):
        decode_frame(struct.pack(">BI", 3, codec.MAX_FRAME_BYTES))


def test_trailing_bytes_are_malformed():
    with pytest.raises(MalformedFrame):
        decode_frame(encode_frame(PingReq()) + b"\x00")
    with pytest.raises(MalformedFrame):
        decode_frame(bytes([0x02, 0, 0, 0, 2, 0, 0]))


def test_oversized_frame_refused_on_encode():
    payload = b"x" * (codec.MAX_FRAME_BYTES - 5 - 3)
    assert len(encode_frame(Publish("a", payload))) == codec.MAX_FRAME_BYTES
    with pytest.raises(EncodeError):
        encode_frame(Publish("a", payload + b"x"))


def test_long_topic_refused():
    with pytest.raises(EncodeError):
        encode_frame(Publish("a" * 257, b""))
    assert decode_frame(encode_frame(Subscribe("a" * 256))) == Subscribe("a" * 256)


def test_status_out_of_byte_range():
    with pytest.raises(EncodeError):
        encode_frame(ConnAck(256))


@given(frames)
def test_round_trip_property(frame):
    assert decode_frame(encode_frame(frame)) == frame


@given(frames)
def test_reencode_is_bit_exact(frame):
    raw = encode_frame(frame)
    assert encode_frame(decode_frame(raw)) == raw


@settings(max_examples=500)
@given(st.binary(max_size=2048))
def test_decoder_only_raises_malformed(data):
    try:
        decode_frame(data)
    except MalformedFrame:
        pass


@settings(max_examples=300)
@given(frames, st.data())
def test_mutated_frames_never_crash(frame, data):
    raw = bytearray(encode_frame(frame))
    i = data.draw(st.integers(0, len(raw) - 1))
    raw[i] = data.draw(st.integers(0, 255))
    cut = data.draw(st.integers(0, len(raw)))
    try:
        decode_frame(bytes(raw[:cut]))
    except MalformedFrame:
        pass
