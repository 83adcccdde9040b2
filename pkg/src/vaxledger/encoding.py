"""Canonical fixed-layout binary encoding.

Every record that is hashed or signed goes through this module so that two
processes always produce the same bytes for the same value.  Layout rules:

* all integers big-endian, fixed width (u8/u16/u32/u64, i64 two's complement)
* bool is a single byte, 0 or 1
* strings are u32 length-prefixed UTF-8
* byte strings are u32 length-prefixed raw bytes
* optionals are a presence byte (0/1) followed by the value when present
* lists are a u32 count followed by the items

Records open with the schema version byte SCHEMA_VERSION.
"""

from __future__ import annotations

import hashlib
import struct

from .errors import EncodingError

SCHEMA_VERSION = 0x01
DIGEST_SIZE = 32
ZERO_DIGEST = b"\x00" * DIGEST_SIZE

# Registered digest algorithms; the id is recorded in block headers and
# snapshot files so chains are self-describing.
HASH_ALGORITHMS = {
    1: ("sha256", hashlib.sha256),
    2: ("sha3-256", hashlib.sha3_256),
}
DEFAULT_HASH_ALG = 1

_U8_MAX = 0xFF
_U16_MAX = 0xFFFF
_U32_MAX = 0xFFFFFFFF
_U64_MAX = 0xFFFFFFFFFFFFFFFF
_I64_MIN = -(2**63)
_I64_MAX = 2**63 - 1


def digest(data: bytes, hash_alg: int = DEFAULT_HASH_ALG) -> bytes:
    """Hash `data` with the registered algorithm, returning 32 bytes."""
    try:
        _, fn = HASH_ALGORITHMS[hash_alg]
    except KeyError:
        raise EncodingError(f"unknown hash algorithm id {hash_alg}") from None
    return fn(data).digest()


class Writer:
    """Accumulates canonical bytes."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def getvalue(self) -> bytes:
        return bytes(self._buf)

    def raw(self, data: bytes) -> None:
        self._buf += data

    def u8(self, value: int) -> None:
        if not 0 <= value <= _U8_MAX:
            raise EncodingError(f"u8 out of range: {value}")
        self._buf.append(value)

    def u16(self, value: int) -> None:
        if not 0 <= value <= _U16_MAX:
            raise EncodingError(f"u16 out of range: {value}")
        self._buf += struct.pack(">H", value)

    def u32(self, value: int) -> None:
        if not 0 <= value <= _U32_MAX:
            raise EncodingError(f"u32 out of range: {value}")
        self._buf += struct.pack(">I", value)

    def u64(self, value: int) -> None:
        if not 0 <= value <= _U64_MAX:
            raise EncodingError(f"u64 out of range: {value}")
        self._buf += struct.pack(">Q", value)

    def i64(self, value: int) -> None:
        if not _I64_MIN <= value <= _I64_MAX:
            raise EncodingError(f"i64 out of range: {value}")
        self._buf += struct.pack(">q", value)

    def boolean(self, value: bool) -> None:
        self._buf.append(1 if value else 0)

    def string(self, value: str) -> None:
        data = value.encode("utf-8")
        self.u32(len(data))
        self._buf += data

    def bytes_(self, value: bytes) -> None:
        self.u32(len(value))
        self._buf += value

    def digest32(self, value: bytes) -> None:
        if len(value) != DIGEST_SIZE:
            raise EncodingError(f"digest must be {DIGEST_SIZE} bytes, got {len(value)}")
        self._buf += value

    def optional_u8(self, value: int | None) -> None:
        if value is None:
            self.boolean(False)
        else:
            self.boolean(True)
            self.u8(value)

    def optional_u32(self, value: int | None) -> None:
        if value is None:
            self.boolean(False)
        else:
            self.boolean(True)
            self.u32(value)

    def optional_u64(self, value: int | None) -> None:
        if value is None:
            self.boolean(False)
        else:
            self.boolean(True)
            self.u64(value)

    def optional_i64(self, value: int | None) -> None:
        if value is None:
            self.boolean(False)
        else:
            self.boolean(True)
            self.i64(value)

    def optional_string(self, value: str | None) -> None:
        if value is None:
            self.boolean(False)
        else:
            self.boolean(True)
            self.string(value)


class Reader:
    """Reads canonical bytes back; raises EncodingError on truncation."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

    def expect_end(self) -> None:
        if self.remaining != 0:
            raise EncodingError(f"{self.remaining} unexpected trailing bytes")

    def raw(self, size: int) -> bytes:
        if self.remaining < size:
            raise EncodingError("truncated record")
        out = self._data[self._pos : self._pos + size]
        self._pos += size
        return out

    def u8(self) -> int:
        return self.raw(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.raw(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.raw(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.raw(8))[0]

    def i64(self) -> int:
        return struct.unpack(">q", self.raw(8))[0]

    def boolean(self) -> bool:
        value = self.u8()
        if value not in (0, 1):
            raise EncodingError(f"invalid boolean byte {value}")
        return value == 1

    def string(self) -> str:
        size = self.u32()
        try:
            return self.raw(size).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise EncodingError("invalid UTF-8 in string field") from exc

    def bytes_(self) -> bytes:
        return self.raw(self.u32())

    def digest32(self) -> bytes:
        return self.raw(DIGEST_SIZE)

    def optional_u8(self) -> int | None:
        return self.u8() if self.boolean() else None

    def optional_u32(self) -> int | None:
        return self.u32() if self.boolean() else None

    def optional_u64(self) -> int | None:
        return self.u64() if self.boolean() else None

    def optional_i64(self) -> int | None:
        return self.i64() if self.boolean() else None

    def optional_string(self) -> str | None:
        return self.string() if self.boolean() else None
