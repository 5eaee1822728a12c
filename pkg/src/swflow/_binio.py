"""Little-endian reader/writer helpers for the SWSK, SWTM and SWMX formats."""

from __future__ import annotations

import struct

import numpy as np


class FormatError(ValueError):
    """A binary file is malformed; the message names the byte offset."""


class Reader:
    def __init__(self, buf: bytes, path=None):
        self.buf = memoryview(buf)
        self.pos = 0
        self.path = path

    def fail(self, msg, offset=None):
        where = f"{self.path}: " if self.path else ""
        raise FormatError(f"{where}{msg} at offset {self.pos if offset is None else offset}")

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.buf):
            self.fail(f"truncated file: wanted {n} bytes, {len(self.buf) - self.pos} left")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def magic(self, expected: bytes):
        got = bytes(self.take(len(expected)))
        if got != expected:
            self.fail(f"bad magic {got!r}, expected {expected!r}", offset=0)

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def f64(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)

    def u32(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<u4").astype(np.int64)

    def version(self, supported=1):
        (v,) = self.unpack("I")
        if v != supported:
            self.fail(f"unsupported version {v}", offset=self.pos - 4)
        return v

    def done(self):
        if self.pos != len(self.buf):
            self.fail(f"{len(self.buf) - self.pos} trailing bytes")


def f64_bytes(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def u32_bytes(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<u4").tobytes()
