"""Masked Cartesian discretisations of the interval, the rectangle and the disc.

Every domain is represented as a cell-centred tensor grid together with a
boolean mask of *active* cells (cells whose centre lies in the open domain).
Field data only ever lives on active cells and is stored as flat vectors in
ascending row-major order of the underlying grid; :meth:`GridGeometry.to_grid`
scatters such a vector back onto the full grid with NaN in exterior slots.

The disc boundary is realised as a staircase: the faces between active and
exterior cells form the discrete boundary. Distance to the boundary and the
outward unit normal are nevertheless evaluated analytically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BandOverlapError, DimensionError, InvalidSpecError, ResolutionError

INTERVAL = "interval"
RECTANGLE = "rectangle"
DISC = "disc"
DOMAIN_KINDS = (INTERVAL, RECTANGLE, DISC)

# cell_kind codes
EXTERIOR = 0
INTERIOR = 1
BOUNDARY_ADJACENT = 2

_ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class GeometrySpec:
    """What to discretise: ``extent`` is ``(L,)`` for the interval ``[0, L]``,
    ``(Lx, Ly)`` for the rectangle and ``(L,)`` (the radius) for the disc."""

    kind: str
    extent: tuple[float, ...]
    h: float


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GridGeometry:
    kind: str
    dimension: int
    extent: tuple[float, ...]
    h: float
    shape: tuple[int, ...]
    origin: tuple[float, ...]
    cell_kind: np.ndarray  # full grid, int8 codes
    index: np.ndarray  # full grid, active index or -1
    centers: np.ndarray  # (ncells, dim)
    grid_pos: np.ndarray  # (ncells, dim) integer grid coordinates
    distance: np.ndarray  # (ncells,) analytic distance to the boundary
    faces: tuple[tuple[np.ndarray, np.ndarray], ...]  # per axis: (lower, upper) active indices
    bface_cell: np.ndarray  # (nbf,)
    bface_axis: np.ndarray  # (nbf,)
    bface_sign: np.ndarray  # (nbf,) +1 / -1, the staircase outward direction
    bface_center: np.ndarray  # (nbf, dim)
    face_normals: np.ndarray  # (nbf, dim) analytic outward unit normal
    band_width: float
    normal_extension: np.ndarray = field(repr=False)  # (ncells, dim)

    @property
    def ncells(self) -> int:
        return int(self.centers.shape[0])

    @property
    def cell_volume(self) -> float:
        return self.h**self.dimension

    @property
    def total_volume(self) -> float:
        return self.ncells * self.cell_volume

    @property
    def measure(self) -> float:
        """Analytic measure |Omega| of the continuous domain."""
        if self.kind == DISC:
            return math.pi * self.extent[0] ** 2
        return float(np.prod(self.extent))

    @property
    def inradius(self) -> float:
        return inradius(self.kind, self.extent)

    @property
    def interior_mask(self) -> np.ndarray:
        return self.cell_kind.ravel()[self._active_flat] == INTERIOR

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.cell_kind.ravel()[self._active_flat] == BOUNDARY_ADJACENT

    @property
    def _active_flat(self) -> np.ndarray:
        return np.flatnonzero(self.index.ravel() >= 0)

    def to_grid(self, values: np.ndarray) -> np.ndarray:
        """Scatter an active-cell vector onto the full grid (NaN outside)."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.ncells,):
            raise DimensionError(f"expected {self.ncells} cell values, got shape {values.shape}")
        out = np.full(int(np.prod(self.shape)), np.nan)
        out[self._active_flat] = values
        return out.reshape(self.shape)

    def from_grid(self, grid: np.ndarray) -> np.ndarray:
        grid = np.asarray(grid, dtype=float)
        if grid.shape != self.shape:
            raise DimensionError(f"expected grid of shape {self.shape}, got {grid.shape}")
        return grid.ravel()[self._active_flat].copy()


def inradius(kind: str, extent: tuple[float, ...]) -> float:
    if kind == DISC:
        return float(extent[0])
    return 0.5 * float(min(extent))


def _cells_per_axis(length: float, h: float, key: str) -> int:
    n = int(round(length / h))
    if n < 1 or abs(n * h - length) > _ALIGN_TOL * max(length, 1.0):
        raise InvalidSpecError(f"{key}={length} is not an integer multiple of h={h}")
    return n


def distance_to_boundary(kind: str, extent: tuple[float, ...], points: np.ndarray) -> np.ndarray:
    """Analytic distance from interior points to the domain boundary."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if kind == DISC:
        return extent[0] - np.linalg.norm(points, axis=1)
    lo = points
    hi = np.asarray(extent, dtype=float)[None, :] - points
    return np.minimum(lo, hi).min(axis=1)


def outward_normal(kind: str, extent: tuple[float, ...], points: np.ndarray) -> np.ndarray:
    """Outward unit normal at the boundary point nearest to each of ``points``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if kind == DISC:
        r = np.linalg.norm(points, axis=1, keepdims=True)
        return points / np.where(r > 0, r, 1.0)
    dim = points.shape[1]
    ext = np.asarray(extent, dtype=float)
    # candidate faces: low side of axis a -> -e_a, high side -> +e_a
    d = np.concatenate([points, ext[None, :] - points], axis=1)
    which = np.argmin(d, axis=1)
    out = np.zeros_like(points)
    axis = which % dim
    sign = np.where(which < dim, -1.0, 1.0)
    out[np.arange(len(points)), axis] = sign
    return out


def _taper(t: np.ndarray, rho: float) -> np.ndarray:
    """Linear taper (rho - t)/rho, smoothed to C^1 by a cubic in the outer half-band."""
    t = np.maximum(np.asarray(t, dtype=float), 0.0)
    s = np.clip((t - 0.5 * rho) / (0.5 * rho), 0.0, 1.0)
    bump = 1.0 - 3.0 * s**2 + 2.0 * s**3
    return np.where(t < rho, (rho - t) / rho * bump, 0.0)


def normal_extension_at(
    kind: str, extent: tuple[float, ...], rho: float, points: np.ndarray
) -> np.ndarray:
    """Evaluate the interior extension N of the outward normal at ``points``.

    For the disc N(y) = taper(L - |y|) * y/|y|. For boxes each face contributes
    taper(distance to that face) times its normal; the sum is clipped to unit
    norm so that corners stay continuous and bounded.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    rin = inradius(kind, extent)
    if not (0.0 < rho < rin):
        raise BandOverlapError(f"band width rho={rho} must lie in (0, inradius={rin})")
    if kind == DISC:
        r = np.linalg.norm(points, axis=1)
        nu = points / np.where(r > 0, r, 1.0)[:, None]
        return _taper(extent[0] - r, rho)[:, None] * nu
    dim = points.shape[1]
    out = np.zeros_like(points)
    for a in range(dim):
        out[:, a] -= _taper(points[:, a], rho)
        out[:, a] += _taper(extent[a] - points[:, a], rho)
    norm = np.linalg.norm(out, axis=1)
    return out / np.maximum(norm, 1.0)[:, None]


def extend_normal(geom: GridGeometry, rho: float) -> np.ndarray:
    """Per-cell extended normal field N for band width ``rho``."""
    return normal_extension_at(geom.kind, geom.extent, rho, geom.centers)


def build_geometry(spec: GeometrySpec, rho: float | None = None) -> GridGeometry:
    """Discretise ``spec``; ``rho`` defaults to half the inradius."""
    kind, h = spec.kind, float(spec.h)
    extent = tuple(float(e) for e in spec.extent)
    if kind not in DOMAIN_KINDS:
        raise InvalidSpecError(f"unknown domain kind {kind!r}")
    if not (h > 0.0) or not math.isfinite(h):
        raise InvalidSpecError(f"spacing h must be positive, got {h}")
    expected = {INTERVAL: 1, RECTANGLE: 2, DISC: 1}[kind]
    if len(extent) != expected:
        raise InvalidSpecError(f"{kind} needs {expected} extent value(s), got {len(extent)}")
    if any(not (e > 0.0) or not math.isfinite(e) for e in extent):
        raise InvalidSpecError(f"extents must be positive, got {extent}")

    if kind == DISC:
        L = extent[0]
        if h > L / 8.0 * (1 + 1e-12):
            raise ResolutionError(f"disc of radius {L} needs h <= L/8 = {L / 8}, got {h}")
        half = int(math.ceil(L / h - _ALIGN_TOL))
        shape = (2 * half, 2 * half)
        origin = (-half * h, -half * h)
    elif kind == INTERVAL:
        shape = (_cells_per_axis(extent[0], h, "L"),)
        origin = (0.0,)
    else:
        shape = (_cells_per_axis(extent[0], h, "Lx"), _cells_per_axis(extent[1], h, "Ly"))
        origin = (0.0, 0.0)
    dim = len(shape)

    axes = [origin[a] + (np.arange(shape[a]) + 0.5) * h for a in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    all_centers = np.stack([m.ravel() for m in mesh], axis=1)
    all_pos = np.stack([g.ravel() for g in np.indices(shape)], axis=1)
    if kind == DISC:
        active = np.linalg.norm(all_centers, axis=1) < extent[0]
    else:
        active = np.ones(len(all_centers), dtype=bool)

    index = np.full(len(all_centers), -1, dtype=np.int64)
    index[active] = np.arange(int(active.sum()))
    index = index.reshape(shape)
    centers = all_centers[active]
    grid_pos = all_pos[active]

    faces = []
    bcell, baxis, bsign = [], [], []
    is_boundary = np.zeros(len(centers), dtype=bool)
    for a in range(dim):
        lower = np.arange(len(centers))
        up = grid_pos.copy()
        up[:, a] += 1
        inside = up[:, a] < shape[a]
        nb = np.full(len(centers), -1, dtype=np.int64)
        nb[inside] = index[tuple(up[inside].T)]
        has_up = nb >= 0
        faces.append((_frozen(lower[has_up]), _frozen(nb[has_up])))
        # boundary faces on the + side of cells without an upper neighbour
        bcell.append(lower[~has_up])
        baxis.append(np.full((~has_up).sum(), a))
        bsign.append(np.ones((~has_up).sum()))
        dn = grid_pos.copy()
        dn[:, a] -= 1
        inside = dn[:, a] >= 0
        nb = np.full(len(centers), -1, dtype=np.int64)
        nb[inside] = index[tuple(dn[inside].T)]
        has_dn = nb >= 0
        bcell.append(lower[~has_dn])
        baxis.append(np.full((~has_dn).sum(), a))
        bsign.append(-np.ones((~has_dn).sum()))
        is_boundary |= ~has_up | ~has_dn

    bface_cell = np.concatenate(bcell).astype(np.int64)
    bface_axis = np.concatenate(baxis).astype(np.int64)
    bface_sign = np.concatenate(bsign)
    order = np.lexsort((bface_sign, bface_axis, bface_cell))
    bface_cell, bface_axis, bface_sign = bface_cell[order], bface_axis[order], bface_sign[order]
    bface_center = centers[bface_cell].copy()
    bface_center[np.arange(len(bface_cell)), bface_axis] += 0.5 * h * bface_sign
    if kind == DISC:
        face_normals = outward_normal(kind, extent, bface_center)
    else:
        face_normals = np.zeros_like(bface_center)
        face_normals[np.arange(len(bface_cell)), bface_axis] = bface_sign

    cell_kind = np.zeros(len(all_centers), dtype=np.int8)
    kinds = np.where(is_boundary, BOUNDARY_ADJACENT, INTERIOR).astype(np.int8)
    cell_kind[active] = kinds

    if rho is None:
        rho = 0.5 * inradius(kind, extent)
    rho = float(rho)
    n_ext = normal_extension_at(kind, extent, rho, centers)

    return GridGeometry(
        kind=kind,
        dimension=dim,
        extent=extent,
        h=h,
        shape=shape,
        origin=origin,
        cell_kind=_frozen(cell_kind.reshape(shape)),
        index=_frozen(index),
        centers=_frozen(centers),
        grid_pos=_frozen(grid_pos),
        distance=_frozen(distance_to_boundary(kind, extent, centers)),
        faces=tuple(faces),
        bface_cell=_frozen(bface_cell),
        bface_axis=_frozen(bface_axis),
        bface_sign=_frozen(bface_sign),
        bface_center=_frozen(bface_center),
        face_normals=_frozen(face_normals),
        band_width=rho,
        normal_extension=_frozen(n_ext),
    )
