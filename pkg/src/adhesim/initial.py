"""Named initial-condition presets.

Smooth presets are evaluated through :func:`flatten_near_boundary`, which
pulls sample points lying within a thin layer of the boundary inward along
the normal so that their normal derivative vanishes at the boundary (the
compatibility condition of both boundary regimes for zero initial adhesion
flux).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpecError
from .geometry import GridGeometry, distance_to_boundary, outward_normal

PRESETS = ("constant", "steady_zero_k", "gaussian", "two_bump", "mixed_random")


@dataclass(frozen=True)
class InitialSpec:
    preset: str = "gaussian"
    u: float = 0.0  # background levels
    v: float = 0.5
    amplitude_u: float = 0.5
    amplitude_v: float = 0.0
    center_u: tuple[float, ...] | None = None  # default: domain centre
    center_v: tuple[float, ...] | None = None
    width: float | None = None  # default: inradius / 4
    noise: float = 0.1

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise InvalidSpecError(f"unknown initial preset {self.preset!r}; choose from {PRESETS}")


def domain_center(geom: GridGeometry) -> np.ndarray:
    if geom.kind == "disc":
        return np.zeros(geom.dimension)
    return 0.5 * np.asarray(geom.extent, dtype=float)


def flatten_near_boundary(geom: GridGeometry, points: np.ndarray, layer: float | None = None) -> np.ndarray:
    """Move points at depth t < layer to depth layer/2 + t^2/(2 layer)."""
    layer = 0.1 * geom.inradius if layer is None else layer
    pts = np.array(points, dtype=float)
    t = distance_to_boundary(geom.kind, geom.extent, pts)
    near = t < layer
    if near.any():
        depth = 0.5 * layer + t[near] ** 2 / (2 * layer)
        nu = outward_normal(geom.kind, geom.extent, pts[near])
        pts[near] -= nu * (depth - t[near])[:, None]
    return pts


def _bump(points, center, width):
    d2 = np.sum((points - np.asarray(center)[None, :]) ** 2, axis=1)
    return np.exp(-d2 / (2.0 * width * width))


def initial_fields(spec: InitialSpec, geom: GridGeometry, k: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    n = geom.ncells
    if spec.preset == "constant":
        return np.full(n, float(spec.u)), np.full(n, float(spec.v))
    if spec.preset == "steady_zero_k":
        return np.zeros(n), np.full(n, float(k))
    if spec.preset == "mixed_random":
        rng = np.random.default_rng(seed)
        xi_u = rng.uniform(-1.0, 1.0, n)
        xi_v = rng.uniform(-1.0, 1.0, n)
        u = np.maximum(spec.u * (1.0 + spec.noise * xi_u), 0.0)
        v = np.maximum(spec.v * (1.0 + spec.noise * xi_v), 0.0)
        return u, v

    pts = flatten_near_boundary(geom, geom.centers)
    width = spec.width if spec.width is not None else 0.25 * geom.inradius
    mid = domain_center(geom)
    cu = np.asarray(spec.center_u if spec.center_u is not None else mid, dtype=float)
    if spec.preset == "gaussian":
        cv = np.asarray(spec.center_v if spec.center_v is not None else mid, dtype=float)
    else:
        if spec.center_v is not None:
            cv = np.asarray(spec.center_v, dtype=float)
        else:
            # mirror the u bump through the domain centre
            cv = 2 * mid - cu if spec.center_u is not None else mid + 0.4 * geom.inradius * np.eye(geom.dimension)[0]
            if spec.center_u is None:
                cu = mid - 0.4 * geom.inradius * np.eye(geom.dimension)[0]
    for c, key in ((cu, "center_u"), (cv, "center_v")):
        if c.shape != (geom.dimension,):
            raise InvalidSpecError(f"initial.{key} needs {geom.dimension} coordinates, got {c.tolist()}")
    u = spec.u + spec.amplitude_u * _bump(pts, cu, width)
    v = spec.v + spec.amplitude_v * _bump(pts, cv, width)
    return np.maximum(u, 0.0), np.maximum(v, 0.0)
