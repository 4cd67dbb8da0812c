"""Small shared helpers: binary packing, atomic file writes, canonical JSON."""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib

import numpy as np

from .errors import FormatError


class ByteWriter:
    """Accumulates little-endian binary content for the on-disk containers."""

    def __init__(self):
        self._parts: list[bytes] = []

    def raw(self, b: bytes):
        self._parts.append(bytes(b))

    def u32(self, value: int):
        self._parts.append(struct.pack("<I", int(value)))

    def u8(self, value: int):
        self._parts.append(struct.pack("<B", int(value)))

    def f64(self, value: float):
        self._parts.append(struct.pack("<d", float(value)))

    def string(self, s: str):
        data = s.encode("utf-8")
        self.u32(len(data))
        self.raw(data)

    def array(self, arr: np.ndarray, dtype: str):
        a = np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<"))
        self.raw(a.tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class ByteReader:
    """Sequential reader mirroring ByteWriter; raises FormatError on truncation."""

    def __init__(self, data: bytes):
        self._data = data
        self._off = 0

    def _take(self, n: int) -> bytes:
        if self._off + n > len(self._data):
            raise FormatError(
                f"truncated container: wanted {n} bytes at offset {self._off}, "
                f"have {len(self._data) - self._off}"
            )
        out = self._data[self._off : self._off + n]
        self._off += n
        return out

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def string(self) -> str:
        n = self.u32()
        return self._take(n).decode("utf-8")

    def array(self, count: int, dtype: str) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        raw = self._take(count * dt.itemsize)
        return np.frombuffer(raw, dtype=dt).astype(np.dtype(dtype), copy=True)

    def expect_end(self):
        if self._off != len(self._data):
            raise FormatError(f"{len(self._data) - self._off} trailing bytes in container")


def with_checksum(magic: bytes, version: int, payload: bytes) -> bytes:
    """Frame a payload as magic | version | crc32(payload) | payload."""
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    return magic + struct.pack("<II", version, zlib.crc32(payload) & 0xFFFFFFFF) + payload


def open_checksummed(data: bytes, magic: bytes, version: int) -> bytes:
    """Validate the frame produced by `with_checksum` and return the payload."""
    if len(data) < 12:
        raise FormatError("container too short for header")
    if data[:4] != magic:
        raise FormatError(f"bad magic {data[:4]!r}, expected {magic!r}")
    got_version, crc = struct.unpack("<II", data[4:12])
    if got_version != version:
        raise FormatError(f"unsupported version {got_version}, expected {version}")
    payload = data[12:]
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise FormatError("checksum mismatch: container is corrupt")
    return payload


def atomic_write_bytes(path, data: bytes):
    """Write via temp file + rename so readers never see partial content."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, compact separators, trailing newline."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"
