"""Tiny versioned binary container for model checkpoints.

Layout: magic bytes, u64 count of header integers, the header integers,
u64 count of arrays, then per array a u64 rank, u64 dims and the raw
row-major float64 data. Everything is little-endian.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

_U64 = struct.Struct("<Q")


def dump(path, magic: bytes, header: list[int], arrays: list[np.ndarray]) -> None:
    parts = [magic, _U64.pack(len(header))]
    parts += [_U64.pack(int(h)) for h in header]
    parts.append(_U64.pack(len(arrays)))
    for arr in arrays:
        arr = np.asarray(arr, dtype="<f8", order="C")
        parts.append(_U64.pack(arr.ndim))
        parts += [_U64.pack(d) for d in arr.shape]
        parts.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]


def load(path, magic: bytes) -> tuple[list[int], list[np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint: {exc}") from exc
    r = _Reader(data)
    if r.take(len(magic)) != magic:
        raise FormatError(f"bad magic, expected {magic!r}")
    n_header = r.u64()
    if n_header > 1 << 16:
        raise FormatError("implausible header size")
    header = [r.u64() for _ in range(n_header)]
    arrays = []
    for _ in range(r.u64()):
        ndim = r.u64()
        if ndim > 8:
            raise FormatError("implausible array rank")
        shape = tuple(r.u64() for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if count > len(data):
            raise FormatError("truncated checkpoint")
        arrays.append(np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64))
    if r.pos != len(data):
        raise FormatError("trailing bytes after checkpoint payload")
    return header, arrays
