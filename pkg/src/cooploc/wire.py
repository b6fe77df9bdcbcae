"""Canonical little-endian binary layout shared by every inter-agent message.

Layout::

    u16 schema version | u16 sender | u16 counterpart | u32 step
    then zero or more arrays, each: u16 rows | u16 cols | rows*cols f64 (row-major)

Vectors are sent as ``n x 1`` arrays.  The message type is not encoded; the
envelope that carries the payload names it.
"""
from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

SCHEMA_VERSION = 1

_HEADER = struct.Struct("<HHHI")
_DIMS = struct.Struct("<HH")
HEADER_SIZE = _HEADER.size


class WireFormatError(ValueError):
    pass


def encode(sender: int, counterpart: int, step: int, arrays: Sequence[np.ndarray]) -> bytes:
    parts = [_HEADER.pack(SCHEMA_VERSION, sender, counterpart, step)]
    for a in arrays:
        a = np.asarray(a, dtype="<f8")
        if a.ndim == 1:
            a = a.reshape(-1, 1)
        if a.ndim != 2:
            raise WireFormatError(f"only 1-D and 2-D arrays can be encoded, got {a.ndim}-D")
        parts.append(_DIMS.pack(*a.shape))
        parts.append(np.ascontiguousarray(a).tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> tuple[int, int, int, list[np.ndarray]]:
    """Inverse of :func:`encode`: ``(sender, counterpart, step, arrays)``."""
    if len(buf) < HEADER_SIZE:
        raise WireFormatError("truncated header")
    version, sender, counterpart, step = _HEADER.unpack_from(buf, 0)
    if version != SCHEMA_VERSION:
        raise WireFormatError(f"unsupported schema version {version}")
    arrays = []
    off = HEADER_SIZE
    while off < len(buf):
        if off + _DIMS.size > len(buf):
            raise WireFormatError("truncated array header")
        rows, cols = _DIMS.unpack_from(buf, off)
        off += _DIMS.size
        n = rows * cols * 8
        if off + n > len(buf):
            raise WireFormatError("truncated array payload")
        arrays.append(np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=off)
                      .reshape(rows, cols).astype(float))
        off += n
    return sender, counterpart, step, arrays


def array_size(rows: int, cols: int) -> int:
    """Encoded byte count of one ``rows x cols`` array."""
    return _DIMS.size + 8 * rows * cols
