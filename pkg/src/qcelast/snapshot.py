"""ELDYN1 binary snapshots of a single periodic field.

Layout: 6-byte ASCII magic ``ELDYN1``, then little-endian u32 ``d``, ``n``,
rank code (0 scalar, 1 vector, 2 matrix), then the f64 little-endian payload,
row-major over the grid with the component index fastest.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .torus import Grid, PeriodicField

MAGIC = b"ELDYN1"
_HEADER = struct.Struct("<III")


class SnapshotError(ValueError):
    pass


def encode(field: PeriodicField) -> bytes:
    header = MAGIC + _HEADER.pack(field.grid.d, field.grid.n, field.rank)
    payload = np.ascontiguousarray(field.data, dtype="<f8").tobytes()
    return header + payload


def decode(buf: bytes, grid: Grid | None = None) -> PeriodicField:
    if len(buf) < len(MAGIC) + _HEADER.size or buf[: len(MAGIC)] != MAGIC:
        raise SnapshotError("not an ELDYN1 snapshot (bad magic)")
    d, n, rank = _HEADER.unpack_from(buf, len(MAGIC))
    if rank > 2:
        raise SnapshotError(f"bad rank code {rank}")
    if grid is None:
        grid = Grid(d=d, n=n)
    elif (grid.d, grid.n) != (d, n):
        raise SnapshotError(f"snapshot grid d={d}, n={n} does not match expected grid")
    count = n**d * d**rank
    body = buf[len(MAGIC) + _HEADER.size :]
    if len(body) != 8 * count:
        raise SnapshotError(f"payload has {len(body)} bytes, expected {8 * count}")
    data = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return PeriodicField(grid, rank, data.reshape(grid.shape + (d,) * rank))


def write_field(path, field: PeriodicField) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(field))
    os.replace(tmp, path)


def read_field(path, grid: Grid | None = None) -> PeriodicField:
    return decode(Path(path).read_bytes(), grid)
