"""Finite-volume stepper for the two-phenotype adhesion system.

    u_t = D_u lap u - div(u K[u, v]) - m u + (lam/k) u (k - u - v)
    v_t = D_v lap v - div(v S[u, v]) + m u + (mu/k) v (k - u - v)

Interior faces carry a central diffusive flux and a first-order upwind
advective flux whose velocity is the mean of the two adjacent cell values.
Boundary faces carry zero net flux in both regimes: under the nonlocal Robin
condition the diffusive part is set to cancel the advective part u K.n, under
the zero-zero condition both parts vanish. Either way the discrete mass change
is exactly dt times the summed reaction.
"""

from __future__ import annotations

import weakref
from typing import TYPE_CHECKING
from dataclasses import dataclass, field, replace

import numpy as np

from .adhesion import CASE_I, CASE_II, AdhesionMatrix, KernelSpec, SensingStencil, eval_adhesion
from .errors import DimensionError, InstabilityError, InvalidSpecError, PropagationError
from .geometry import GridGeometry

if TYPE_CHECKING:
    from .monitors import MonitorSeries

ROBIN = "robin"
ZEROZERO = "zerozero"
BC_CASES = (ROBIN, ZEROZERO)
INTEGRATORS = ("euler", "heun")
ADVECTION_SCHEMES = ("upwind", "minmod")

CLIP_TOL = 1e-12
GROWTH_LIMIT = 10.0
VELOCITY_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelParams:
    m: float
    k: float
    lam: float
    mu: float
    M: AdhesionMatrix
    kernel: KernelSpec
    D_u: float = 1.0
    D_v: float = 1.0
    bc: str = ROBIN

    def __post_init__(self):
        problems = []
        if not self.k > 0:
            problems.append(f"carrying capacity k must be > 0, got {self.k}")
        for name in ("m", "lam", "mu"):
            if not getattr(self, name) >= 0:
                problems.append(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("D_u", "D_v"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0, got {getattr(self, name)}")
        if self.bc not in BC_CASES:
            problems.append(f"bc must be one of {BC_CASES}, got {self.bc!r}")
        elif (self.bc == ROBIN) != (self.kernel.case == CASE_I):
            want = CASE_I if self.bc == ROBIN else CASE_II
            problems.append(f"bc {self.bc!r} pairs with kernel case {want}, got {self.kernel.case}")
        if problems:
            raise InvalidSpecError("; ".join(problems))


@dataclass(frozen=True)
class State:
    u: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def copy(self) -> "State":
        return State(self.u.copy(), self.v.copy(), self.t)


@dataclass
class StepReport:
    state: State
    dt: float
    clip_count: int
    K: np.ndarray  # velocities evaluated on the pre-step state
    S: np.ndarray
    reaction_mass_u: float  # dt * sum(r_u) * vol as applied by the integrator
    reaction_mass_v: float


@dataclass
class FaceFluxes:
    """Fluxes in the +axis direction on interior faces, outward on boundary faces."""

    adv_u: list[np.ndarray]
    diff_u: list[np.ndarray]
    adv_v: list[np.ndarray]
    diff_v: list[np.ndarray]
    bnd_adv_u: np.ndarray
    bnd_diff_u: np.ndarray
    bnd_adv_v: np.ndarray
    bnd_diff_v: np.ndarray

    def divergence(self, geom: GridGeometry) -> tuple[np.ndarray, np.ndarray]:
        du = _net_outflow(geom, [a + d for a, d in zip(self.adv_u, self.diff_u)], self.bnd_adv_u + self.bnd_diff_u)
        dv = _net_outflow(geom, [a + d for a, d in zip(self.adv_v, self.diff_v)], self.bnd_adv_v + self.bnd_diff_v)
        return du, dv


def reaction_terms(u, v, p: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    free = p.k - (u + v)
    r_u = -p.m * u + (p.lam / p.k) * u * free
    r_v = p.m * u + (p.mu / p.k) * v * free
    return r_u, r_v


_NEIGHBOURS: "weakref.WeakKeyDictionary[GridGeometry, list]" = weakref.WeakKeyDictionary()


def neighbours(geom: GridGeometry) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per axis, indices of the lower and upper neighbour of each cell (-1 if none)."""
    cached = _NEIGHBOURS.get(geom)
    if cached is not None:
        return cached
    out = []
    shape = np.asarray(geom.shape)
    for a in range(geom.dimension):
        pair = []
        for step in (-1, 1):
            pos = geom.grid_pos.copy()
            pos[:, a] += step
            ok = (pos[:, a] >= 0) & (pos[:, a] < shape[a])
            nb = np.full(geom.ncells, -1, dtype=np.int64)
            nb[ok] = geom.index[tuple(pos[ok].T)]
            pair.append(nb)
        out.append(tuple(pair))
    _NEIGHBOURS[geom] = out
    return out


def _net_outflow(geom: GridGeometry, interior: list[np.ndarray], boundary: np.ndarray) -> np.ndarray:
    n = geom.ncells
    out = np.zeros(n)
    for (lower, upper), flux in zip(geom.faces, interior):
        if lower.size:
            out += np.bincount(lower, weights=flux, minlength=n)
            out -= np.bincount(upper, weights=flux, minlength=n)
    if boundary.size:
        out += np.bincount(geom.bface_cell, weights=boundary, minlength=n)
    return out / geom.h


def _minmod(a, b):
    return np.where(a * b > 0.0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _upwind_values(q, lower, upper, vel, nbs, advection):
    ql, qr = q[lower], q[upper]
    if advection == "upwind":
        return np.where(vel > 0.0, ql, qr)
    below, above = nbs
    ll = below[lower]
    rr = above[upper]
    qll = np.where(ll >= 0, q[np.maximum(ll, 0)], ql)
    qrr = np.where(rr >= 0, q[np.maximum(rr, 0)], qr)
    left = ql + 0.5 * _minmod(ql - qll, qr - ql)
    right = qr - 0.5 * _minmod(qr - ql, qrr - qr)
    return np.where(vel > 0.0, left, right)


def _advective_faces(q, vel_cells, geom, advection):
    nbs = neighbours(geom) if advection == "minmod" else [None] * geom.dimension
    out = []
    for a, (lower, upper) in enumerate(geom.faces):
        vel = 0.5 * (vel_cells[lower, a] + vel_cells[upper, a])
        out.append(vel * _upwind_values(q, lower, upper, vel, nbs[a], advection))
    return out


def _diffusive_faces(q, D, geom):
    return [-D * (q[upper] - q[lower]) / geom.h for lower, upper in geom.faces]


def assemble_fluxes(
    state: State,
    K: np.ndarray,
    S: np.ndarray,
    geom: GridGeometry,
    p: ModelParams,
    advection: str = "upwind",
) -> FaceFluxes:
    if advection not in ADVECTION_SCHEMES:
        raise InvalidSpecError(f"advection must be one of {ADVECTION_SCHEMES}, got {advection!r}")
    if not (np.isfinite(K).all() and np.isfinite(S).all()):
        raise PropagationError("adhesion velocity contains NaN or Inf")
    u, v = state.u, state.v
    cells, axes, signs = geom.bface_cell, geom.bface_axis, geom.bface_sign
    if p.bc == ROBIN:
        bnd_adv_u = u[cells] * K[cells, axes] * signs
        bnd_adv_v = v[cells] * S[cells, axes] * signs
        bnd_diff_u, bnd_diff_v = -bnd_adv_u, -bnd_adv_v
    else:
        bnd_adv_u = bnd_adv_v = bnd_diff_u = bnd_diff_v = np.zeros(cells.size)
    return FaceFluxes(
        adv_u=_advective_faces(u, K, geom, advection),
        diff_u=_diffusive_faces(u, p.D_u, geom),
        adv_v=_advective_faces(v, S, geom, advection),
        diff_v=_diffusive_faces(v, p.D_v, geom),
        bnd_adv_u=bnd_adv_u,
        bnd_diff_u=bnd_diff_u,
        bnd_adv_v=bnd_adv_v,
        bnd_diff_v=bnd_diff_v,
    )


def _outflow_rate(vel_cells, D, geom):
    """Per-cell rate at which upwind advection and diffusion drain a cell."""
    n = geom.ncells
    rate = np.zeros(n)
    for a, (lower, upper) in enumerate(geom.faces):
        if not lower.size:
            continue
        vel = 0.5 * (vel_cells[lower, a] + vel_cells[upper, a])
        rate += np.bincount(lower, weights=np.maximum(vel, 0.0), minlength=n)
        rate += np.bincount(upper, weights=np.maximum(-vel, 0.0), minlength=n)
        link = np.full(lower.size, D / geom.h)
        rate += np.bincount(lower, weights=link, minlength=n)
        rate += np.bincount(upper, weights=link, minlength=n)
    return rate / geom.h


def stable_dt(
    state: State,
    K: np.ndarray,
    S: np.ndarray,
    geom: GridGeometry,
    p: ModelParams,
    safety: float = 0.9,
) -> float:
    """Largest explicit step the scheme tolerates, scaled by ``safety``.

    Combines the diffusive limit h^2/(2 n D), the advective limit h/|velocity|,
    the reciprocal of the largest reaction Jacobian row sum, and a per-cell
    positivity limit (outflow plus reactive loss rate) that keeps a forward
    Euler step non-negative.
    """
    if not 0.0 < safety <= 1.0:
        raise InvalidSpecError(f"safety must lie in (0, 1], got {safety}")
    u, v = np.asarray(state.u), np.asarray(state.v)
    if u.size == 0 or v.size == 0:
        raise InvalidSpecError("stable_dt on empty fields")
    h, n = geom.h, geom.dimension
    caps = [h * h / (2 * n * max(p.D_u, p.D_v))]

    speed = max(
        float(np.max(np.linalg.norm(K, axis=1), initial=0.0)),
        float(np.max(np.linalg.norm(S, axis=1), initial=0.0)),
        VELOCITY_FLOOR,
    )
    caps.append(h / speed)

    lk, mk = p.lam / p.k, p.mu / p.k
    row_u = np.abs(-p.m + lk * (p.k - 2 * u - v)) + np.abs(lk * u)
    row_v = np.abs(p.m - mk * v) + np.abs(mk * (p.k - u - 2 * v))
    jac = float(max(row_u.max(), row_v.max()))
    if jac > 0:
        caps.append(1.0 / jac)

    excess = np.maximum(u + v - p.k, 0.0)
    drain_u = _outflow_rate(K, p.D_u, geom) + p.m + lk * excess
    drain_v = _outflow_rate(S, p.D_v, geom) + mk * excess
    drain = float(max(drain_u.max(), drain_v.max()))
    if drain > 0:
        caps.append(1.0 / drain)
    return safety * min(caps)


def _check_fields(state: State, geom: GridGeometry) -> None:
    n = geom.ncells
    if state.u.shape != (n,) or state.v.shape != (n,):
        raise DimensionError(f"state fields must have shape ({n},); got {state.u.shape}, {state.v.shape}")
    if not (np.isfinite(state.u).all() and np.isfinite(state.v).all()):
        raise PropagationError("state contains NaN or Inf")


def _rhs(state, geom, stencils, p, advection):
    K, S = eval_adhesion(state.u, state.v, stencils, p.M)
    fluxes = assemble_fluxes(state, K, S, geom, p, advection)
    div_u, div_v = fluxes.divergence(geom)
    r_u, r_v = reaction_terms(state.u, state.v, p)
    return -div_u + r_u, -div_v + r_v, r_u, r_v, K, S


def advance(
    state: State,
    geom: GridGeometry,
    stencils: SensingStencil,
    p: ModelParams,
    dt: float,
    integrator: str = "euler",
    advection: str = "upwind",
    step_index: int = 0,
) -> StepReport:
    """One explicit step; returns the new state with clipping and diagnostics."""
    if integrator not in INTEGRATORS:
        raise InvalidSpecError(f"integrator must be one of {INTEGRATORS}, got {integrator!r}")
    if not dt > 0:
        raise InvalidSpecError(f"dt must be > 0, got {dt}")
    _check_fields(state, geom)
    vol = geom.cell_volume
    fu, fv, r_u, r_v, K, S = _rhs(state, geom, stencils, p, advection)
    u1 = state.u + dt * fu
    v1 = state.v + dt * fv
    src_u, src_v = dt * np.sum(r_u) * vol, dt * np.sum(r_v) * vol
    if integrator == "heun":
        stage = State(np.maximum(u1, 0.0), np.maximum(v1, 0.0), state.t + dt)
        gu, gv, q_u, q_v, _, _ = _rhs(stage, geom, stencils, p, advection)
        u1 = 0.5 * (state.u + stage.u + dt * gu)
        v1 = 0.5 * (state.v + stage.v + dt * gv)
        src_u = 0.5 * (src_u + dt * np.sum(q_u) * vol)
        src_v = 0.5 * (src_v + dt * np.sum(q_v) * vol)

    prev_sup = max(float(state.u.max(initial=0.0)), float(state.v.max(initial=0.0)))
    new_sup = max(float(np.max(np.abs(u1), initial=0.0)), float(np.max(np.abs(v1), initial=0.0)))
    floor = min(float(u1.min(initial=0.0)), float(v1.min(initial=0.0)))
    diag = {
        "step": step_index,
        "t": state.t,
        "dt": dt,
        "sup_before": prev_sup,
        "sup_after": new_sup,
        "min_after": floor,
    }
    if not (np.isfinite(u1).all() and np.isfinite(v1).all()):
        raise InstabilityError(f"non-finite values after step {step_index}", diag)
    if new_sup > GROWTH_LIMIT * prev_sup and new_sup > 0.0:
        diag["stable_dt"] = stable_dt(state, K, S, geom, p)
        raise InstabilityError(
            f"sup norm jumped from {prev_sup:.3e} to {new_sup:.3e} at step {step_index}; dt too large?", diag
        )
    if floor < -CLIP_TOL:
        diag["stable_dt"] = stable_dt(state, K, S, geom, p)
        raise InstabilityError(f"positivity lost at step {step_index}: min value {floor:.3e}", diag)

    clipped = int(np.count_nonzero(u1 < 0.0) + np.count_nonzero(v1 < 0.0))
    if clipped:
        u1 = np.where(u1 < 0.0, 0.0, u1)
        v1 = np.where(v1 < 0.0, 0.0, v1)
    new = State(u1, v1, state.t + dt)
    return StepReport(new, dt, clipped, K, S, float(src_u), float(src_v))


def step(
    state: State,
    geom: GridGeometry,
    stencils: SensingStencil,
    p: ModelParams,
    dt: float,
    integrator: str = "euler",
    advection: str = "upwind",
) -> State:
    return advance(state, geom, stencils, p, dt, integrator, advection).state


@dataclass
class RunResult:
    geometry: GridGeometry
    stencils: SensingStencil
    params: ModelParams
    trajectory: list[State]
    monitors: "MonitorSeries"
    steps: int
    clip_total: int
    final: State = field(repr=False, default=None)


def run(config, on_snapshot=None, problem=None) -> RunResult:
    """Integrate a validated :class:`~adhesim.config.RunConfig` to ``t_end``.

    The trajectory holds the initial state, every ``snapshot_every``-th step and
    the final state. ``on_snapshot(index, state)`` is called for each of them.
    ``problem`` may pass a prebuilt ``(geom, stencils, params, state)`` tuple.
    """
    from .config import build_problem
    from .monitors import MonitorSeries, monitor_record

    geom, stencils, p, state = problem if problem is not None else build_problem(config)
    sc = config.scheme
    monitors = MonitorSeries()
    trajectory = []

    def snapshot(s):
        trajectory.append(s)
        if on_snapshot is not None:
            on_snapshot(len(trajectory) - 1, s)

    K0, S0 = eval_adhesion(state.u, state.v, stencils, p.M)
    monitors.append(monitor_record(state, K0, S0, geom, p, 0))
    snapshot(state)

    t_end = config.t_end
    nstep = clip_total = 0
    while state.t < t_end:
        if sc.dt is not None:
            dt = sc.dt
        else:
            K, S = eval_adhesion(state.u, state.v, stencils, p.M)
            dt = stable_dt(state, K, S, geom, p, sc.safety)
        finished = dt >= t_end - state.t
        if finished:
            dt = t_end - state.t
        try:
            rep = advance(state, geom, stencils, p, dt, sc.integrator, sc.advection, step_index=nstep)
        except InstabilityError as exc:
            exc.monitors = monitors
            raise
        nstep += 1
        clip_total += rep.clip_count
        state = replace(rep.state, t=float(t_end)) if finished else rep.state
        ceiling = getattr(config, "sup_ceiling", None)
        if ceiling is not None and max(state.u.max(), state.v.max()) > ceiling:
            exc = InstabilityError(
                f"sup norm exceeded the declared ceiling {ceiling} at step {nstep}",
                {"step": nstep, "t": state.t, "sup_u": float(state.u.max()), "sup_v": float(state.v.max())},
            )
            exc.monitors = monitors
            raise exc
        if nstep % config.monitor_every == 0 or finished:
            K, S = eval_adhesion(state.u, state.v, stencils, p.M)
            monitors.append(monitor_record(state, K, S, geom, p, clip_total))
        if nstep % config.snapshot_every == 0 or finished:
            snapshot(state)
    return RunResult(geom, stencils, p, trajectory, monitors, nstep, clip_total, state)
