"""Canonical tagged, length-prefixed binary encoding.

Every value tree built from ``None``, ``bool``, ``int`` (signed 64-bit),
``float``, ``str``, ``bytes`` and ``list``/``tuple`` has exactly one
encoding, and :func:`decode` accepts only that encoding. Hashes of ledger
objects are taken over these bytes; see ``docs/encoding.md``.
"""

from __future__ import annotations

import struct
from typing import Any

T_NONE = 0x00
T_FALSE = 0x01
T_TRUE = 0x02
T_INT = 0x03
T_FLOAT = 0x04
T_STR = 0x05
T_BYTES = 0x06
T_LIST = 0x07

_I64 = struct.Struct(">q")
_F64 = struct.Struct(">d")
_U32 = struct.Struct(">I")


class DecodeError(ValueError):
    pass


def encode(value: Any) -> bytes:
    out = bytearray()
    _encode_into(value, out)
    return bytes(out)


def _encode_into(value: Any, out: bytearray) -> None:
    if value is None:
        out.append(T_NONE)
    elif value is True:
        out.append(T_TRUE)
    elif value is False:
        out.append(T_FALSE)
    elif isinstance(value, int):
        out.append(T_INT)
        out += _I64.pack(value)
    elif isinstance(value, float):
        out.append(T_FLOAT)
        out += _F64.pack(value)
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out.append(T_STR)
        out += _U32.pack(len(raw))
        out += raw
    elif isinstance(value, (bytes, bytearray)):
        out.append(T_BYTES)
        out += _U32.pack(len(value))
        out += value
    elif isinstance(value, (list, tuple)):
        out.append(T_LIST)
        out += _U32.pack(len(value))
        for item in value:
            _encode_into(item, out)
    else:
        raise TypeError(f"cannot encode {type(value).__name__}")


def decode(data: bytes) -> Any:
    """Decode one value; trailing bytes or any malformation raise DecodeError."""
    value, pos = _decode_at(memoryview(data), 0)
    if pos != len(data):
        raise DecodeError(f"{len(data) - pos} trailing bytes")
    if encode(value) != bytes(data):
        raise DecodeError("non-canonical encoding")
    return value


def _take(buf: memoryview, pos: int, n: int) -> tuple[bytes, int]:
    end = pos + n
    if end > len(buf):
        raise DecodeError(f"truncated at offset {pos}")
    return bytes(buf[pos:end]), end


def _decode_at(buf: memoryview, pos: int) -> tuple[Any, int]:
    tag, pos = _take(buf, pos, 1)
    t = tag[0]
    if t == T_NONE:
        return None, pos
    if t == T_FALSE:
        return False, pos
    if t == T_TRUE:
        return True, pos
    if t == T_INT:
        raw, pos = _take(buf, pos, 8)
        return _I64.unpack(raw)[0], pos
    if t == T_FLOAT:
        raw, pos = _take(buf, pos, 8)
        return _F64.unpack(raw)[0], pos
    if t in (T_STR, T_BYTES, T_LIST):
        raw, pos = _take(buf, pos, 4)
        (n,) = _U32.unpack(raw)
        if t == T_LIST:
            items = []
            for _ in range(n):
                item, pos = _decode_at(buf, pos)
                items.append(item)
            return items, pos
        raw, pos = _take(buf, pos, n)
        if t == T_BYTES:
            return raw, pos
        try:
            return raw.decode("utf-8"), pos
        except UnicodeDecodeError as exc:
            raise DecodeError(f"bad utf-8 at offset {pos - n}") from exc
    raise DecodeError(f"unknown tag 0x{t:02x} at offset {pos - 1}")


def expect_list(value: Any, n: int | None = None, what: str = "record") -> list:
    if not isinstance(value, list):
        raise DecodeError(f"{what}: expected list")
    if n is not None and len(value) != n:
        raise DecodeError(f"{what}: expected {n} fields, got {len(value)}")
    return value


def expect(value: Any, typ: type | tuple, what: str) -> Any:
    # bool is a subclass of int; keep the two apart
    if isinstance(value, bool) and typ is int:
        raise DecodeError(f"{what}: expected int")
    if not isinstance(value, typ):
        raise DecodeError(f"{what}: expected {typ}")
    return value
