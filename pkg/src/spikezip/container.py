"""Shared framing for the binary files: magic, u16 version, body, CRC32 trailer."""

from __future__ import annotations

import struct
import zlib


class FormatError(ValueError):
    """File is not a valid container of the expected kind."""


class ChecksumError(FormatError):
    pass


class VersionError(FormatError):
    pass


def frame(magic: bytes, version: int, body: bytes) -> bytes:
    head = magic + struct.pack("<H", version) + body
    return head + struct.pack("<I", zlib.crc32(head) & 0xFFFFFFFF)


def unframe(raw: bytes, magic: bytes, supported: tuple[int, ...]) -> tuple[int, bytes]:
    """Validate a framed blob and return (version, body)."""
    if len(raw) < len(magic) + 6:
        raise ChecksumError("file too short")
    if raw[: len(magic)] != magic:
        raise FormatError(f"bad magic {raw[:len(magic)]!r}, expected {magic!r}")
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != crc:
        raise ChecksumError("CRC32 mismatch (corrupt or truncated file)")
    (version,) = struct.unpack_from("<H", raw, len(magic))
    if version not in supported:
        raise VersionError(f"unsupported version {version}; known {supported}")
    return version, raw[len(magic) + 2 : -4]


class Reader:
    """Sequential little-endian reader over a bytes body."""

    def __init__(self, body: bytes):
        self.body = body
        self.pos = 0

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.body):
            raise FormatError("unexpected end of data")
        vals = struct.unpack_from(fmt, self.body, self.pos)
        self.pos += size
        return vals

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.body):
            raise FormatError("unexpected end of data")
        chunk = self.body[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def done(self) -> bool:
        return self.pos == len(self.body)

