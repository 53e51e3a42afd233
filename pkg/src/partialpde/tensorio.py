"""Bit-exact binary tensor files (.rpl).

Layout: 4-byte magic "RPL1" | u32 LE rank | rank x u32 LE dims |
u8 dtype tag (0 = f32, 1 = f64) | payload, row-major little-endian.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import FormatError, ShapeError

MAGIC = b"RPL1"
_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
MAX_RANK = 4


def write_tensor(path, array) -> None:
    a = np.asarray(array)
    if a.ndim > MAX_RANK:
        raise ShapeError(f"rank {a.ndim} exceeds max {MAX_RANK}")
    if a.size and not np.all(np.isfinite(a)):
        raise ShapeError("refusing to write non-finite tensor")
    dt = np.dtype(a.dtype).newbyteorder("<")
    if dt not in _TAGS:
        # ints etc. are stored as f64
        a = a.astype("<f8")
        dt = np.dtype("<f8")
    a = np.ascontiguousarray(a, dtype=dt)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", a.ndim))
        for d in a.shape:
            f.write(struct.pack("<I", d))
        f.write(struct.pack("<B", _TAGS[dt]))
        f.write(a.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    if not os.path.exists(path):
        raise FormatError(f"no such tensor file: {path}")
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 9 or data[:4] != MAGIC:
        raise FormatError(f"bad magic in {path}")
    (rank,) = struct.unpack_from("<I", data, 4)
    if rank > MAX_RANK:
        raise FormatError(f"rank {rank} exceeds max {MAX_RANK} in {path}")
    off = 8
    if len(data) < off + 4 * rank + 1:
        raise FormatError(f"truncated header in {path}")
    shape = struct.unpack_from(f"<{rank}I", data, off) if rank else ()
    off += 4 * rank
    (tag,) = struct.unpack_from("<B", data, off)
    off += 1
    if tag not in _DTYPES:
        raise FormatError(f"unknown dtype tag {tag} in {path}")
    dt = _DTYPES[tag]
    n = int(np.prod(shape, dtype=np.int64)) if rank else 1
    expect = n * dt.itemsize
    if len(data) - off != expect:
        raise FormatError(f"payload size mismatch in {path}: "
                          f"got {len(data) - off} bytes, expected {expect}")
    arr = np.frombuffer(data, dtype=dt, count=n, offset=off).reshape(shape)
    return arr.astype(dt.newbyteorder("="))
