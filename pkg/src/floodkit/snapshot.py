"""Binary snapshot files.

Layout (all little-endian)::

    4s   magic  b"FCSN"
    u4   version
    u4   rows
    u4   cols
    f8   cell_size
    f8   t_seconds
    u4   n_fields
    n_fields x (u2 name length, utf-8 name)
    n_fields x rows x cols f8, row-major, field by field
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"FCSN"
VERSION = 1
_HEAD = struct.Struct("<4sIIIddI")


class SnapshotFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Snapshot:
    rows: int
    cols: int
    cell_size: float
    t_seconds: float
    fields: dict

    def __post_init__(self):
        for name, arr in self.fields.items():
            if np.shape(arr) != (self.rows, self.cols):
                raise ValueError(f"field {name!r} has shape {np.shape(arr)}, expected {(self.rows, self.cols)}")

    def __getitem__(self, name) -> np.ndarray:
        return self.fields[name]

    @property
    def names(self) -> tuple:
        return tuple(self.fields)


def encode(snap: Snapshot) -> bytes:
    parts = [_HEAD.pack(MAGIC, VERSION, snap.rows, snap.cols, snap.cell_size, snap.t_seconds, len(snap.fields))]
    for name in snap.fields:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    for arr in snap.fields.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def decode(data: bytes) -> Snapshot:
    if len(data) < _HEAD.size:
        raise SnapshotFormatError("file shorter than the snapshot header")
    magic, version, rows, cols, cell, t, nf = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotFormatError(f"unsupported snapshot version {version}")
    pos = _HEAD.size
    names = []
    for _ in range(nf):
        if pos + 2 > len(data):
            raise SnapshotFormatError("truncated field-name table")
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        names.append(data[pos:pos + n].decode("utf-8"))
        pos += n
    size = rows * cols * 8
    if len(data) - pos != nf * size:
        raise SnapshotFormatError(f"payload is {len(data) - pos} bytes, expected {nf * size}")
    fields = {}
    for name in names:
        fields[name] = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).astype(float)
        pos += size
    return Snapshot(rows, cols, cell, t, fields)


def write_snapshot(path, snap: Snapshot) -> None:
    Path(path).write_bytes(encode(snap))


def read_snapshot(path) -> Snapshot:
    return decode(Path(path).read_bytes())


def state_snapshot(state, cell_size: float, z=None) -> Snapshot:
    """Cell-centred h, qx, qy (and wse when ``z`` is given) from a solver state."""
    qx, qy = state.centred_discharge()
    fields = {"h": state.h, "qx": qx, "qy": qy}
    if z is not None:
        fields["wse"] = state.h + z
    rows, cols = state.h.shape
    return Snapshot(rows, cols, float(cell_size), float(state.t), fields)
