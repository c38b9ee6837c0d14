"""Verification instruments: balance residuals, the Lyapunov functional,
linearised systems about the constant steady states, growth-rate estimation
and a mild-solution Picard oracle built on the exact discrete heat semigroup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse as sp

from .adhesion import SensingStencil, eval_adhesion
from .dynamics import (
    ROBIN,
    ModelParams,
    State,
    _advective_faces,
    _diffusive_faces,
    _net_outflow,
    assemble_fluxes,
    reaction_terms,
)
from .errors import DimensionError, DomainError, InvalidSpecError, PicardConvergenceError
from .geometry import DISC, INTERVAL, RECTANGLE, GridGeometry

# "derivative" uses k S[w, z]; "doubled" uses 2k S[w, 0] + k S[0, z]
CROSS_TERMS = ("derivative", "doubled")
AT_ZERO_K = "AtZeroK"
AT_ZERO_ZERO = "AtZeroZero"
BASES = (AT_ZERO_K, AT_ZERO_ZERO)

_MASS_FLOOR = 1e-300


def mass_balance_residual(
    pre: State,
    post: State,
    dt: float,
    p: ModelParams,
    geom: GridGeometry,
    reaction_mass: tuple[float, float] | None = None,
) -> tuple[float, float]:
    """Relative defect of the discrete mass law over one step.

    The expected change is ``dt * sum(r) * vol`` evaluated on ``pre`` (the
    forward Euler source); pass ``reaction_mass`` to check other integrators
    against the source they actually applied.
    """
    n = geom.ncells
    for s in (pre, post):
        if s.u.shape != (n,) or s.v.shape != (n,):
            raise DimensionError("states do not match the geometry")
    vol = geom.cell_volume
    if reaction_mass is None:
        r_u, r_v = reaction_terms(pre.u, pre.v, p)
        reaction_mass = (dt * np.sum(r_u) * vol, dt * np.sum(r_v) * vol)
    out = []
    for a, b, src in ((pre.u, post.u, reaction_mass[0]), (pre.v, post.v, reaction_mass[1])):
        before = np.sum(a) * vol
        change = np.sum(b) * vol - before
        out.append(float(abs(change - src) / max(before, _MASS_FLOOR)))
    return out[0], out[1]


def lyapunov_value(state: State, p: ModelParams, geom: GridGeometry) -> float:
    """(1/lam) int u + (1/mu) int v - (k/mu) int log v."""
    if not (p.lam > 0 and p.mu > 0):
        raise DomainError("the Lyapunov functional needs lam > 0 and mu > 0")
    v = np.asarray(state.v)
    if not np.all(v > 0):
        raise DomainError("the Lyapunov functional needs v > 0 everywhere")
    vol = geom.cell_volume
    return float(
        np.sum(state.u) * vol / p.lam
        + np.sum(v) * vol / p.mu
        - (p.k / p.mu) * np.sum(np.log(v)) * vol
    )


def negativity_probe(state: State, geom: GridGeometry) -> dict:
    vol = geom.cell_volume
    neg_u = np.minimum(state.u, 0.0)
    neg_v = np.minimum(state.v, 0.0)
    return {"u": float(np.sum(neg_u * neg_u) * vol), "v": float(np.sum(neg_v * neg_v) * vol)}


def segregation_index(state: State, geom: GridGeometry) -> float:
    """Overlap sum(min(u, v)) * vol; small when the populations have sorted."""
    return float(np.sum(np.minimum(state.u, state.v)) * geom.cell_volume)


# --------------------------------------------------------------------------
# linearisations about (0, k) and (0, 0)


@dataclass(frozen=True)
class LinearizedState:
    w: np.ndarray
    z: np.ndarray
    base: str
    t: float = 0.0

    def __post_init__(self):
        if self.base not in BASES:
            raise InvalidSpecError(f"unknown linearisation base {self.base!r}; choose from {BASES}")


def neumann_laplacian(q: np.ndarray, geom: GridGeometry, D: float = 1.0) -> np.ndarray:
    return -_net_outflow(geom, _diffusive_faces(q, D, geom), np.zeros(0))


def linearized_rhs(
    ls: LinearizedState,
    geom: GridGeometry,
    stencils: SensingStencil,
    p: ModelParams,
    advection: str = "upwind",
    base_velocity: np.ndarray | None = None,
    cross_term: str = "derivative",
) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand side of the linearised system selected by ``ls.base``.

    About (0, k) the z-equation carries the transport
    ``-div(k S[w, z] + z S[0, k])``; ``S[0, k]`` vanishes for odd kernels on
    centred balls but is evaluated anyway (pass it as ``base_velocity`` to
    skip the re-evaluation). ``cross_term="doubled"`` counts the w-part of
    that flux twice; the two forms differ only where S[w, 0] is nonzero. Boundary fluxes are zero.
    """
    w, z = np.asarray(ls.w, dtype=float), np.asarray(ls.z, dtype=float)
    if w.shape != (geom.ncells,) or z.shape != (geom.ncells,):
        raise DimensionError("linearised fields do not match the geometry")
    if ls.base not in BASES:
        raise InvalidSpecError(f"unknown linearisation base {ls.base!r}")
    dw = neumann_laplacian(w, geom, p.D_u) - p.m * w
    if ls.base == AT_ZERO_ZERO:
        dz = neumann_laplacian(z, geom, p.D_v) + p.m * w + p.mu * z
        return dw, dz
    if cross_term not in CROSS_TERMS:
        raise InvalidSpecError(f"cross_term must be one of {CROSS_TERMS}, got {cross_term!r}")
    w_weight = 2.0 if cross_term == "doubled" else 1.0
    _, S_wz = eval_adhesion(w_weight * w, z, stencils, p.M)
    S_base = base_velocity if base_velocity is not None else base_adhesion(geom, stencils, p)
    lin_flux = [
        p.k * 0.5 * (S_wz[lower, a] + S_wz[upper, a]) for a, (lower, upper) in enumerate(geom.faces)
    ]
    base_flux = _advective_faces(z, S_base, geom, advection)
    transport = _net_outflow(geom, [f + g for f, g in zip(lin_flux, base_flux)], np.zeros(0))
    dz = neumann_laplacian(z, geom, p.D_v) - transport + (p.m - p.mu) * w - p.mu * z
    return dw, dz


def base_adhesion(geom: GridGeometry, stencils: SensingStencil, p: ModelParams) -> np.ndarray:
    """S[0, k], the v-velocity at the steady state (0, k)."""
    return eval_adhesion(np.zeros(geom.ncells), np.full(geom.ncells, p.k), stencils, p.M)[1]


def linear_stable_dt(geom: GridGeometry, stencils: SensingStencil, p: ModelParams, safety: float = 0.9) -> float:
    h, n = geom.h, geom.dimension
    caps = [h * h / (2 * n * max(p.D_u, p.D_v))]
    S_base = base_adhesion(geom, stencils, p)
    speed = float(np.max(np.linalg.norm(S_base, axis=1), initial=0.0))
    # the nonlocal part k S[w, z] acts like a bounded operator of size ~ k |weights| / h
    row_abs = abs(stencils.matrix).sum(axis=1).max() if stencils.matrix.nnz else 0.0
    coupling = 2.0 * p.k * (p.M.M21 + p.M.M22) * float(row_abs) / h
    rate = speed / h + coupling + p.m + p.mu + abs(p.m - p.mu)
    if rate > 0:
        caps.append(1.0 / rate)
    return safety * min(caps)


def _l1(q, vol):
    return float(np.sum(np.abs(q)) * vol)


def _l2(q, vol):
    return float(np.sqrt(np.sum(q * q) * vol))


def _grad_sup(q, geom):
    out = 0.0
    for lower, upper in geom.faces:
        if lower.size:
            out = max(out, float(np.max(np.abs(q[upper] - q[lower])) / geom.h))
    return out


def growth_rate_estimate(
    base: str,
    initial: tuple[np.ndarray, np.ndarray],
    T: float,
    geom: GridGeometry,
    stencils: SensingStencil,
    p: ModelParams,
    dt: float | None = None,
    safety: float = 0.9,
    advection: str = "upwind",
) -> dict:
    """Evolve a linearised system to ``T`` with forward Euler and fit exponential rates.

    Rates are ``log(norm(t) / norm(0)) / t`` for w in L2 and z in L1 and L2.
    If the solution overflows first, the last finite sample is used and
    ``early_stop`` is set. A zero initial norm yields a NaN rate.
    """
    if not T > 0:
        raise InvalidSpecError(f"T must be > 0, got {T}")
    w = np.array(initial[0], dtype=float)
    z = np.array(initial[1], dtype=float)
    if dt is None:
        dt = linear_stable_dt(geom, stencils, p, safety)
    nsteps = max(1, int(math.ceil(T / dt - 1e-9)))
    dt = T / nsteps
    vol = geom.cell_volume
    norms0 = (_l2(w, vol), _l1(z, vol), _l2(z, vol))
    last = (norms0, 0.0)
    early = False
    t = 0.0
    S_base = base_adhesion(geom, stencils, p)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(nsteps):
            dw, dz = linearized_rhs(LinearizedState(w, z, base, t), geom, stencils, p, advection, S_base)
            w = w + dt * dw
            z = z + dt * dz
            t = (i + 1) * dt
            cur = (_l2(w, vol), _l1(z, vol), _l2(z, vol))
            if not all(math.isfinite(c) for c in cur):
                early = True
                break
            last = (cur, t)
    norms, t_final = last

    def rate(a, b):
        if not (b > 0 and a > 0) or t_final == 0:
            return math.nan
        return math.log(a / b) / t_final

    return {
        "base": base,
        "rate_w": rate(norms[0], norms0[0]),
        "rate_z_L1": rate(norms[1], norms0[1]),
        "rate_z_L2": rate(norms[2], norms0[2]),
        "t_final": t_final,
        "steps": nsteps,
        "dt": dt,
        "early_stop": early,
        "grad_sup_w": _grad_sup(w, geom) if not early else math.nan,
        "grad_sup_z": _grad_sup(z, geom) if not early else math.nan,
    }


# --------------------------------------------------------------------------
# discrete heat semigroup and the Picard oracle


class HeatPropagator:
    """Spectral calculus of the discrete Neumann Laplacian ``D lap_h``.

    Cosine transforms diagonalise it on the interval and rectangle; the masked
    disc falls back to a dense symmetric eigendecomposition.
    """

    def __init__(self, geom: GridGeometry, D: float = 1.0):
        self.geom = geom
        self.D = D
        h = geom.h
        if geom.kind in (INTERVAL, RECTANGLE):
            self._shape = geom.shape
            lam = np.zeros(geom.shape)
            for a, n in enumerate(geom.shape):
                j = np.arange(n)
                mode = -(4.0 * D / h**2) * np.sin(np.pi * j / (2 * n)) ** 2
                shape = [1] * geom.dimension
                shape[a] = n
                lam = lam + mode.reshape(shape)
            self.eigenvalues = lam.ravel()
            self._basis = None
        elif geom.kind == DISC:
            A = self._matrix(geom, D).toarray()
            self.eigenvalues, self._basis = scipy.linalg.eigh(A)
        else:
            raise InvalidSpecError(f"no heat propagator for {geom.kind}")

    @staticmethod
    def _matrix(geom, D):
        n = geom.ncells
        rows, cols, vals = [], [], []
        c = D / geom.h**2
        for lower, upper in geom.faces:
            rows += [lower, upper, lower, upper]
            cols += [upper, lower, lower, upper]
            ones = np.full(lower.size, c)
            vals += [ones, ones, -ones, -ones]
        if not rows:
            return sp.csr_matrix((n, n))
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )

    def to_modes(self, q: np.ndarray) -> np.ndarray:
        if self._basis is not None:
            return self._basis.T @ q
        return scipy.fft.dctn(q.reshape(self._shape), type=2, norm="ortho").ravel()

    def from_modes(self, c: np.ndarray) -> np.ndarray:
        if self._basis is not None:
            return self._basis @ c
        return scipy.fft.idctn(c.reshape(self._shape), type=2, norm="ortho").ravel()

    def apply(self, q: np.ndarray, tau: float) -> np.ndarray:
        return self.from_modes(np.exp(tau * self.eigenvalues) * self.to_modes(q))


def _phi1(x):
    small = np.abs(x) < 1e-5
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 + x / 2 + x * x / 6, np.expm1(safe) / safe)


def _phi2(x):
    small = np.abs(x) < 1e-3
    safe = np.where(small, 1.0, x)
    series = 0.5 + x / 6 + x * x / 24 + x**3 / 120
    return np.where(small, series, (np.expm1(safe) - safe) / (safe * safe))


@dataclass
class PicardResult:
    state: State
    T: float
    requested_T: float
    iterations: int
    history: list[float]
    factors: list[float]
    contraction_factor: float
    halvings: int
    times: np.ndarray = field(repr=False)
    u_nodes: np.ndarray = field(repr=False)
    v_nodes: np.ndarray = field(repr=False)


class _NotContracting(Exception):
    def __init__(self, history, factors):
        self.history, self.factors = history, factors


def _boundary_lift(geom, bnd_diff):
    # source equivalent to the diffusive boundary outflow a Neumann propagator omits
    n = geom.ncells
    return -np.bincount(geom.bface_cell, weights=bnd_diff, minlength=n) / geom.h


def picard_source(u, v, geom, stencils, p, advection="upwind"):
    """Everything in the semi-discrete right-hand side except ``D lap_h``.

    Under the Robin condition the advective boundary outflow u K.n is left
    open, and the matching diffusive boundary flux is re-injected as a source
    in the boundary cells (a discrete Neumann lift), so the sum reproduces the
    zero total boundary flux of the stepper.
    """
    state = State(u, v)
    K, S = eval_adhesion(u, v, stencils, p.M)
    fl = assemble_fluxes(state, K, S, geom, p, advection)
    r_u, r_v = reaction_terms(u, v, p)
    open_u = _net_outflow(geom, fl.adv_u, fl.bnd_adv_u)
    open_v = _net_outflow(geom, fl.adv_v, fl.bnd_adv_v)
    lift_u, lift_v = (_boundary_lift(geom, fl.bnd_diff_u), _boundary_lift(geom, fl.bnd_diff_v)) if p.bc == ROBIN else (0.0, 0.0)
    return -open_u + lift_u + r_u, -open_v + lift_v + r_v


def _picard_fixed_horizon(u0, v0, T, n_sub, tol, max_iter, geom, stencils, p, props, advection):
    delta = T / n_sub
    pu, pv = props
    E_u, E_v = np.exp(delta * pu.eigenvalues), np.exp(delta * pv.eigenvalues)
    p1_u, p1_v = delta * _phi1(delta * pu.eigenvalues), delta * _phi1(delta * pv.eigenvalues)
    p2_u, p2_v = delta * _phi2(delta * pu.eigenvalues), delta * _phi2(delta * pv.eigenvalues)

    U = np.repeat(u0[None, :], n_sub + 1, axis=0)
    V = np.repeat(v0[None, :], n_sub + 1, axis=0)
    scale = max(1.0, float(np.max(np.abs(u0))), float(np.max(np.abs(v0))))
    history, factors = [], []
    for it in range(1, max_iter + 1):
        G = np.empty_like(U)
        H = np.empty_like(V)
        for n in range(n_sub + 1):
            G[n], H[n] = picard_source(U[n], V[n], geom, stencils, p, advection)
        cu, cv = pu.to_modes(u0), pv.to_modes(v0)
        gu = [pu.to_modes(G[n]) for n in range(n_sub + 1)]
        gv = [pv.to_modes(H[n]) for n in range(n_sub + 1)]
        U_new = np.empty_like(U)
        V_new = np.empty_like(V)
        U_new[0], V_new[0] = u0, v0
        for n in range(n_sub):
            cu = E_u * cu + p1_u * gu[n] + p2_u * (gu[n + 1] - gu[n])
            cv = E_v * cv + p1_v * gv[n] + p2_v * (gv[n + 1] - gv[n])
            U_new[n + 1] = pu.from_modes(cu)
            V_new[n + 1] = pv.from_modes(cv)
        if not (np.isfinite(U_new).all() and np.isfinite(V_new).all()):
            raise _NotContracting(history, factors)
        diff = float(max(np.max(np.abs(U_new - U)), np.max(np.abs(V_new - V))))
        history.append(diff)
        # ratios of differences already at round-off carry no information
        if len(history) > 1 and history[-2] > 1e3 * np.finfo(float).eps * scale:
            factors.append(diff / history[-2])
            if factors[-1] > 0.5:
                raise _NotContracting(history, factors)
        U, V = U_new, V_new
        if diff < tol:
            return U, V, it, history, factors
    raise _NotContracting(history, factors)


def picard_solve(
    geom: GridGeometry,
    stencils: SensingStencil,
    p: ModelParams,
    u0: np.ndarray,
    v0: np.ndarray,
    T: float,
    tol: float = 1e-10,
    max_iter: int = 100,
    n_sub: int = 64,
    max_halvings: int = 16,
    advection: str = "upwind",
) -> PicardResult:
    """Fixed-point iteration on the variation-of-constants form.

    ``u(t) = e^{t D lap} u0 + int_0^t e^{(t-s) D lap} g(s) ds`` on ``n_sub``
    equal sub-intervals, with ``g`` interpolated linearly in time so that the
    time integral is exact through the phi-functions. If an iterate fails to
    contract by at least 1/2, the horizon is halved and the iteration restarts.
    """
    if geom.ncells > 64**geom.dimension:
        raise InvalidSpecError(f"picard_solve is meant for grids with at most 64^n cells, got {geom.ncells}")
    if not T > 0:
        raise InvalidSpecError(f"T must be > 0, got {T}")
    u0 = np.asarray(u0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    props = (HeatPropagator(geom, p.D_u), HeatPropagator(geom, p.D_v))
    horizon = T
    all_history, all_factors = [], []
    for halving in range(max_halvings + 1):
        try:
            U, V, iters, history, factors = _picard_fixed_horizon(
                u0, v0, horizon, n_sub, tol, max_iter, geom, stencils, p, props, advection
            )
        except _NotContracting as exc:
            all_history.extend(exc.history)
            all_factors.extend(exc.factors)
            horizon /= 2
            continue
        return PicardResult(
            state=State(U[-1].copy(), V[-1].copy(), horizon),
            T=horizon,
            requested_T=T,
            iterations=iters,
            history=history,
            factors=factors,
            contraction_factor=max(factors) if factors else 0.0,
            halvings=halving,
            times=np.linspace(0.0, horizon, n_sub + 1),
            u_nodes=U,
            v_nodes=V,
        )
    raise PicardConvergenceError(
        f"no contraction after {max_halvings} halvings of T (last horizon {horizon * 2:.3e})",
        all_history,
        all_factors,
    )
