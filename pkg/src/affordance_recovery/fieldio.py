"""Flat binary and CSV exports of scalar fields.

Binary layout (little-endian)::

    char[4]   magic "SAF1"
    float64*3 origin (m)
    float64   voxel_size (m)
    uint32    G
    float32*G^3 values, x index fastest, then y, then z
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .field import FieldError, ScalarField, WorkspaceGrid

MAGIC = b"SAF1"
_HEADER = struct.Struct("<4s3ddI")


def to_bytes(field: ScalarField) -> bytes:
    g = field.grid
    header = _HEADER.pack(MAGIC, *g.origin, g.voxel_size, g.resolution)
    body = np.asarray(field.values, dtype="<f4").ravel(order="F").tobytes()
    return header + body


def from_bytes(data: bytes) -> ScalarField:
    if len(data) < _HEADER.size:
        raise FieldError("truncated field dump")
    magic, ox, oy, oz, voxel, g = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FieldError("not a field dump")
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if body.size != g**3:
        raise FieldError(f"expected {g**3} values, found {body.size}")
    grid = WorkspaceGrid((ox, oy, oz), voxel, g)
    return ScalarField(grid, body.reshape((g, g, g), order="F").astype(float))


def write_field(field: ScalarField, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(field))
    return path


def read_field(path: str | Path) -> ScalarField:
    return from_bytes(Path(path).read_bytes())


def write_slice_csv(field: ScalarField, path: str | Path, axis: str = "z", index: int | None = None) -> Path:
    """One axis-aligned slice as long-form rows (x, y, z, value)."""
    axes = {"x": 0, "y": 1, "z": 2}
    if axis not in axes:
        raise FieldError(f"axis must be one of x, y, z (got {axis!r})")
    g = field.grid.resolution
    index = g // 2 if index is None else int(index)
    if not 0 <= index < g:
        raise FieldError(f"slice index {index} outside [0, {g})")
    a = axes[axis]
    centers = field.grid.centers()
    sl = [slice(None)] * 3
    sl[a] = index
    pts = centers[tuple(sl)].reshape(-1, 3)
    vals = field.values[tuple(sl)].reshape(-1)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "value"])
        for p, v in zip(pts, vals):
            w.writerow([f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}", f"{v:.6f}"])
    return path
