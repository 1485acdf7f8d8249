import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tofscan.protocol import (BadMagicError, BadVersionError, Message, MessageKind,
                              TruncatedError, UnknownKindError, decode_message,
                              encode_message, frame_crc32, pack_frame_payload,
                              unpack_frame_payload)

KINDS = list(MessageKind)


def test_hello_wire_layout():
    buf = encode_message(Message(MessageKind.HELLO))
    assert buf == bytes([0x48, 0x53, 0x43, 0x4E, 0x01, 0x01, 0x00, 0x00, 0x00, 0x00])


def test_one_mib_frame_round_trip(rng):
    payload = rng.integers(0, 256, 1 << 20, dtype=np.uint8).tobytes()
    m = Message(MessageKind.FRAME, payload)
    out = decode_message(encode_message(m))
    assert out == m


def test_bad_magic():
    buf = b"XXXX" + encode_message(Message(MessageKind.HELLO))[4:]
    with pytest.raises(BadMagicError):
        decode_message(buf)


def test_bad_version():
    buf = bytearray(encode_message(Message(MessageKind.HELLO)))
    buf[4] = 9
    with pytest.raises(BadVersionError):
        decode_message(bytes(buf))


def test_unknown_kind():
    buf = bytearray(encode_message(Message(MessageKind.HELLO)))
    buf[5] = 200
    with pytest.raises(UnknownKindError):
        decode_message(bytes(buf))


def test_truncated_header_and_payload():
    with pytest.raises(TruncatedError):
        decode_message(b"HSCN\x01\x01\x00")
    full = encode_message(Message(MessageKind.STATUS_ACK, b"abcdef"))
    with pytest.raises(TruncatedError):
        decode_message(full[:-2])


def test_length_field_is_big_endian():
    m = Message(MessageKind.FRAME, b"x" * 0x0102)
    buf = encode_message(m)
    assert buf[6:10] == bytes([0x00, 0x00, 0x01, 0x02])


def test_round_trip_randomized_bulk(rng):
    """decode(encode(m)) == m over 10^4 randomized messages incl. length extremes."""
    for i in range(10_000):
        kind = KINDS[int(rng.integers(0, len(KINDS)))]
        if i == 0:
            payload = b""
        elif i == 1:
            payload = bytes(rng.integers(0, 256, 1 << 20, dtype=np.uint8))
        else:
            payload = bytes(rng.integers(0, 256, int(rng.integers(0, 2048)), dtype=np.uint8))
        m = Message(kind, payload)
        assert decode_message(encode_message(m)) == m


@settings(max_examples=300, deadline=None)
@given(kind=st.sampled_from(KINDS), payload=st.binary(max_size=4096))
def test_round_trip_property(kind, payload):
    m = Message(kind, payload)
    assert decode_message(encode_message(m)) == m


def test_frame_payload_pack_unpack(rng):
    depth = bytes(rng.integers(0, 256, 500, dtype=np.uint8))
    color = bytes(rng.integers(0, 256, 750, dtype=np.uint8))
    d, c = unpack_frame_payload(pack_frame_payload(depth, color))
    assert d == depth and c == color


def test_frame_payload_truncation():
    with pytest.raises(TruncatedError):
        unpack_frame_payload(b"\x00\x00")
    with pytest.raises(TruncatedError):
        unpack_frame_payload(b"\x00\x00\x00\x10abc")


def test_crc32_detects_flip():
    a = frame_crc32(b"hello", b"world")
    assert a == frame_crc32(b"hello", b"world")
    assert a != frame_crc32(b"hellp", b"world")
    # CRC-32 (IEEE) reference value
    import zlib
    assert frame_crc32(b"123456789", b"") == zlib.crc32(b"123456789")
