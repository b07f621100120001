"""Frame codec for the channel-access-style wire protocol.

Every frame is ``u32le length | u8 opcode | payload`` where ``length`` counts
the opcode byte plus the payload and never exceeds 65536.  Strings are
``u16le byte-length | UTF-8 bytes``; floats are little-endian float64.

=========  ====  ==========================================
opcode     code  payload
=========  ====  ==========================================
HELLO      0x01  u16 version, str ident
GET        0x02  str name
PUT        0x03  value
SUBSCRIBE  0x04  str name
EVENT      0x05  value
UNSUB      0x06  str name
ERROR      0x07  u8 code, str message
VALUE      0x08  value
=========  ====  ==========================================

``value`` is ``str name, f64 time_index, f64 raw, f64 calibrated`` with the
name written as ``DEVICE.DATA``.  Error codes: 1 NotFound, 2 ReadOnly,
3 Malformed.
"""

from __future__ import annotations

import struct
from typing import NamedTuple

from cryodaq.errors import ProtocolError

PROTOCOL_VERSION = 1
MAX_FRAME = 65536
HEADER = struct.Struct("<IB")

HELLO = 0x01
GET = 0x02
PUT = 0x03
SUBSCRIBE = 0x04
EVENT = 0x05
UNSUBSCRIBE = 0x06
ERROR = 0x07
VALUE = 0x08
OPCODES = {HELLO: "HELLO", GET: "GET", PUT: "PUT", SUBSCRIBE: "SUBSCRIBE", EVENT: "EVENT",
           UNSUBSCRIBE: "UNSUBSCRIBE", ERROR: "ERROR", VALUE: "VALUE"}

ERR_NOT_FOUND = 1
ERR_READ_ONLY = 2
ERR_MALFORMED = 3

_U16 = struct.Struct("<H")
_TRIPLE = struct.Struct("<ddd")


class WireValue(NamedTuple):
    name: str
    time_index: float
    raw: float
    calibrated: float

    @property
    def triple(self) -> tuple[float, float, float]:
        return (self.time_index, self.raw, self.calibrated)


def encode_frame(opcode: int, payload: bytes = b"") -> bytes:
    if opcode not in OPCODES:
        raise ProtocolError(f"unknown opcode {opcode:#04x}")
    if len(payload) + 1 > MAX_FRAME:
        raise ProtocolError(f"frame of {len(payload) + 1} bytes exceeds {MAX_FRAME}")
    return HEADER.pack(len(payload) + 1, opcode) + payload


def decode_frame(buf: bytes | bytearray | memoryview, offset: int = 0):
    """Return ``(opcode, payload, next_offset)`` or None if incomplete."""
    if len(buf) - offset < 4:
        return None
    (length,) = struct.unpack_from("<I", buf, offset)
    if length < 1 or length > MAX_FRAME:
        raise ProtocolError(f"bad frame length {length}")
    end = offset + 4 + length
    if len(buf) < end:
        return None
    opcode = buf[offset + 4]
    if opcode not in OPCODES:
        raise ProtocolError(f"unknown opcode {opcode:#04x}")
    return opcode, bytes(buf[offset + 5:end]), end


class FrameReader:
    """Incremental decoder for a byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[tuple[int, bytes]]:
        self._buf += data
        frames = []
        pos = 0
        while True:
            got = decode_frame(self._buf, pos)
            if got is None:
                break
            opcode, payload, pos = got
            frames.append((opcode, payload))
        del self._buf[:pos]
        return frames


def encode_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ProtocolError("string too long")
    return _U16.pack(len(raw)) + raw


def decode_str(payload: bytes, offset: int = 0) -> tuple[str, int]:
    if len(payload) - offset < 2:
        raise ProtocolError("truncated string length")
    (n,) = _U16.unpack_from(payload, offset)
    end = offset + 2 + n
    if len(payload) < end:
        raise ProtocolError("truncated string")
    try:
        return payload[offset + 2:end].decode("utf-8"), end
    except UnicodeDecodeError:
        raise ProtocolError("string is not UTF-8") from None


def _done(payload: bytes, offset: int) -> None:
    if offset != len(payload):
        raise ProtocolError(f"{len(payload) - offset} trailing payload bytes")


def encode_name(name: str) -> bytes:
    return encode_str(name)


def decode_name(payload: bytes) -> str:
    name, off = decode_str(payload)
    _done(payload, off)
    return name


def encode_value(value: WireValue) -> bytes:
    return encode_str(value.name) + _TRIPLE.pack(value.time_index, value.raw, value.calibrated)


def decode_value(payload: bytes) -> WireValue:
    name, off = decode_str(payload)
    if len(payload) - off != _TRIPLE.size:
        raise ProtocolError("value payload must carry exactly 24 value bytes")
    return WireValue(name, *_TRIPLE.unpack_from(payload, off))


def encode_error(code: int, message: str) -> bytes:
    return bytes([code]) + encode_str(message)


def decode_error(payload: bytes) -> tuple[int, str]:
    if not payload:
        raise ProtocolError("empty error payload")
    msg, off = decode_str(payload, 1)
    _done(payload, off)
    return payload[0], msg


def encode_hello(version: int, ident: str) -> bytes:
    return _U16.pack(version) + encode_str(ident)


def decode_hello(payload: bytes) -> tuple[int, str]:
    if len(payload) < 2:
        raise ProtocolError("truncated hello")
    (version,) = _U16.unpack_from(payload)
    ident, off = decode_str(payload, 2)
    _done(payload, off)
    return version, ident


PAYLOAD_CODECS = {
    HELLO: (lambda p: encode_hello(*p), decode_hello),
    GET: (encode_name, decode_name),
    PUT: (encode_value, decode_value),
    SUBSCRIBE: (encode_name, decode_name),
    EVENT: (encode_value, decode_value),
    UNSUBSCRIBE: (encode_name, decode_name),
    ERROR: (lambda p: encode_error(*p), decode_error),
    VALUE: (encode_value, decode_value),
}


def encode_message(opcode: int, body) -> bytes:
    return encode_frame(opcode, PAYLOAD_CODECS[opcode][0](body))


def decode_body(opcode: int, payload: bytes):
    return PAYLOAD_CODECS[opcode][1](payload)
