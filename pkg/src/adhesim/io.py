"""Snapshot binary files and monitor CSV output.

Snapshot layout (all little-endian)::

    b"ADH1"                      4 bytes
    dimension                    u8
    cells per axis               u32, one per axis
    spacing h                    f64
    time t                       f64
    u then v                     f64, full grid row-major, NaN outside the domain
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import State
from .errors import SnapshotError
from .geometry import GridGeometry
from .monitors import MonitorSeries

MAGIC = b"ADH1"


@dataclass(frozen=True)
class Snapshot:
    dimension: int
    shape: tuple[int, ...]
    h: float
    t: float
    u: np.ndarray  # full grid with NaN exterior
    v: np.ndarray


def encode_snapshot(state: State, geom: GridGeometry) -> bytes:
    head = MAGIC + struct.pack("<B", geom.dimension)
    head += struct.pack(f"<{geom.dimension}I", *geom.shape)
    head += struct.pack("<dd", float(geom.h), float(state.t))
    body = [geom.to_grid(np.asarray(q, dtype=float)).astype("<f8").tobytes() for q in (state.u, state.v)]
    return head + b"".join(body)


def write_snapshot(state: State, geom: GridGeometry, path) -> Path:
    path = Path(path)
    data = encode_snapshot(state, geom)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(data)
    tmp.replace(path)
    return path


def decode_snapshot(data: bytes, source: str = "<bytes>") -> Snapshot:
    if len(data) < 5 or data[:4] != MAGIC:
        raise SnapshotError(f"{source}: bad magic, not an ADH1 snapshot")
    dim = data[4]
    if dim not in (1, 2, 3):
        raise SnapshotError(f"{source}: implausible dimension {dim}")
    head = 5 + 4 * dim + 16
    if len(data) < head:
        raise SnapshotError(f"{source}: truncated header ({len(data)} bytes)")
    shape = struct.unpack_from(f"<{dim}I", data, 5)
    h, t = struct.unpack_from("<dd", data, 5 + 4 * dim)
    ncell = int(np.prod(shape))
    want = head + 2 * 8 * ncell
    if len(data) != want:
        raise SnapshotError(f"{source}: expected {want} bytes for grid {shape}, found {len(data)}")
    vals = np.frombuffer(data, dtype="<f8", offset=head).astype(float)
    u = vals[:ncell].reshape(shape)
    v = vals[ncell:].reshape(shape)
    return Snapshot(dim, tuple(shape), h, t, u, v)


def read_snapshot(path) -> Snapshot:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise SnapshotError(f"{path}: cannot read ({exc})") from exc
    return decode_snapshot(data, str(path))


def snapshot_state(snap: Snapshot, geom: GridGeometry) -> State:
    """Validate ``snap`` against ``geom`` and return the active-cell state."""
    check_snapshot(snap, geom)
    return State(geom.from_grid(snap.u), geom.from_grid(snap.v), snap.t)


def check_snapshot(snap: Snapshot, geom: GridGeometry, source: str = "snapshot") -> None:
    """Raise :class:`SnapshotError` unless ``snap`` is consistent with ``geom``."""
    if snap.dimension != geom.dimension or snap.shape != tuple(geom.shape):
        raise SnapshotError(f"{source}: grid {snap.shape} does not match geometry {geom.shape}")
    if snap.h != geom.h:
        raise SnapshotError(f"{source}: spacing {snap.h} does not match geometry {geom.h}")
    inside = geom.index >= 0
    for name, grid in (("u", snap.u), ("v", snap.v)):
        if not np.isnan(grid[~inside]).all():
            raise SnapshotError(f"{source}: {name} has data outside the domain")
        active = grid[inside]
        if not np.isfinite(active).all():
            raise SnapshotError(f"{source}: {name} has non-finite values inside the domain")
        if (active < 0).any():
            raise SnapshotError(f"{source}: {name} has negative densities")


def write_monitors(series: MonitorSeries, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(series.to_csv())
    return path
