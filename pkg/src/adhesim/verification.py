"""Check suites behind the ``verify``, ``stability`` and ``convergence`` commands.

Every check returns a plain dict with ``name``, ``passed``, the measured
``value`` and the ``tolerance`` it was held to, so reports serialise to JSON
without further processing.
"""

from __future__ import annotations

import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy.integrate import quad

from .adhesion import (
    CASE_II,
    AdhesionMatrix,
    KernelSpec,
    build_stencils,
    direct_adhesion_oracle,
    eval_adhesion,
    lipschitz_bound_probe,
)
from .analysis import (
    AT_ZERO_K,
    AT_ZERO_ZERO,
    growth_rate_estimate,
    mass_balance_residual,
    negativity_probe,
    picard_solve,
)
from .config import RunConfig, build_problem
from .dynamics import ZEROZERO, ModelParams, State, advance, stable_dt
from .errors import AdhesimError, PicardConvergenceError, SnapshotError
from .geometry import DISC, GeometrySpec, GridGeometry, build_geometry
from .io import check_snapshot, read_snapshot

ORACLE_TOL = 1e-13
MASS_TOL = 1e-12
NEGATIVITY_TOL = 1e-20
CLIP_FRACTION = 1e-3
STEADY_TOL = 1e-12
RATE_TOL = 0.01
PICARD_TOL = 1e-10
ORACLE_NNZ_LIMIT = 5_000_000


def _check(name, passed, value=None, tolerance=None, **detail):
    return {"name": name, "passed": bool(passed), "value": value, "tolerance": tolerance, "detail": detail}


def relative_difference(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    scale = float(np.max(np.abs(b), initial=0.0))
    diff = float(np.max(np.abs(a - b), initial=0.0))
    if scale == 0.0:
        return diff
    return diff / scale


def oracle_check(geom, stencils, M, trials=3, seed=0):
    if stencils.matrix.nnz > ORACLE_NNZ_LIMIT:
        return _check("oracle_equivalence", True, None, ORACLE_TOL, skipped="stencil table too large")
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, 1.0, (trials, geom.ncells))
    v = rng.uniform(0.0, 1.0, (trials, geom.ncells))
    K, S = eval_adhesion(u, v, stencils, M)
    K2, S2 = direct_adhesion_oracle(u, v, geom, stencils.kernel, M)
    worst = max(relative_difference(K, K2), relative_difference(S, S2))
    return _check("oracle_equivalence", worst <= ORACLE_TOL, worst, ORACLE_TOL, trials=trials)


def step_checks(geom, stencils, p, state, nsteps, scheme):
    """Mass law, positivity and clipping over ``nsteps`` steps from ``state``."""
    worst_mass = worst_neg = 0.0
    clips = 0
    for i in range(nsteps):
        K, S = eval_adhesion(state.u, state.v, stencils, p.M)
        dt = scheme.dt or stable_dt(state, K, S, geom, p, scheme.safety)
        rep = advance(state, geom, stencils, p, dt, scheme.integrator, scheme.advection, step_index=i)
        res = mass_balance_residual(state, rep.state, dt, p, geom, (rep.reaction_mass_u, rep.reaction_mass_v))
        worst_mass = max(worst_mass, *res)
        neg = negativity_probe(rep.state, geom)
        worst_neg = max(worst_neg, neg["u"], neg["v"])
        clips += rep.clip_count
        state = rep.state
    limit = CLIP_FRACTION * geom.ncells
    return [
        _check("mass_balance", worst_mass <= MASS_TOL, worst_mass, MASS_TOL, steps=nsteps),
        _check("positivity", worst_neg <= NEGATIVITY_TOL, worst_neg, NEGATIVITY_TOL, steps=nsteps),
        _check("clip_count", clips <= limit, clips, limit, steps=nsteps),
    ]


def constant_state_check(geom, stencils, p, nsteps=20, safety=0.9):
    if p.bc == ZEROZERO:
        start = State(np.zeros(geom.ncells), np.full(geom.ncells, p.k))
        label = "(0, k)"
    else:
        start = State(np.zeros(geom.ncells), np.zeros(geom.ncells))
        label = "(0, 0)"
    state = start
    for i in range(nsteps):
        K, S = eval_adhesion(state.u, state.v, stencils, p.M)
        dt = stable_dt(state, K, S, geom, p, safety)
        state = advance(state, geom, stencils, p, dt, step_index=i).state
    dev = float(max(np.max(np.abs(state.u - start.u)), np.max(np.abs(state.v - start.v))))
    return _check("constant_state", dev <= STEADY_TOL, dev, STEADY_TOL, state=label, steps=nsteps)


def side_interval(p: ModelParams, cells: int = 64, length: float = 1.0):
    """Small 1D problem sharing the model parameters, for the Picard and rate checks."""
    geom = build_geometry(GeometrySpec("interval", (length,), length / cells))
    R = min(p.kernel.R, 0.2 * length)
    kernel = KernelSpec(p.kernel.case, R, p.kernel.profile)
    q = replace(p, kernel=kernel)
    return geom, build_stencils(geom, kernel), q


def picard_agreement(geom, stencils, p, u0, v0, T, tol=PICARD_TOL, min_steps=1024):
    """Picard oracle against the stepper at the horizon chosen by auto-halving."""
    res = picard_solve(geom, stencils, p, u0, v0, T, tol=tol)
    state = State(np.asarray(u0, float), np.asarray(v0, float))
    K, S = eval_adhesion(state.u, state.v, stencils, p.M)
    n = max(min_steps, int(math.ceil(res.T / stable_dt(state, K, S, geom, p))))
    dt = res.T / n
    for i in range(n):
        state = advance(state, geom, stencils, p, dt, step_index=i).state
    diff = float(max(np.max(np.abs(state.u - res.state.u)), np.max(np.abs(state.v - res.state.v))))
    bound = 5.0 * (tol + dt)
    return {
        "T": res.T,
        "requested_T": T,
        "halvings": res.halvings,
        "iterations": res.iterations,
        "contraction_factor": res.contraction_factor,
        "sup_difference": diff,
        "bound": bound,
        "dt": dt,
        "passed": diff <= bound and res.contraction_factor <= 0.5,
    }


def rate_checks(p: ModelParams, T: float = 1.0):
    geom, stencils, q = side_interval(p, cells=64)
    if q.kernel.case != CASE_II:
        kernel = KernelSpec(CASE_II, q.kernel.R, q.kernel.profile)
        q = replace(q, kernel=kernel, bc=ZEROZERO)
        stencils = build_stencils(geom, kernel)
    n = geom.ncells
    x = geom.centers[:, 0]
    z0 = 1.0 + 0.5 * np.cos(np.pi * x / geom.extent[0]) ** 2
    out = []
    r = growth_rate_estimate(AT_ZERO_K, (np.ones(n), np.zeros(n)), T, geom, stencils, q)
    out.append(_rate_check("linear_decay_w", r["rate_w"], -q.m))
    r = growth_rate_estimate(AT_ZERO_ZERO, (np.zeros(n), z0), T, geom, stencils, q)
    out.append(_rate_check("linear_growth_z", r["rate_z_L1"], q.mu))
    if q.m > q.mu:
        r = growth_rate_estimate(AT_ZERO_K, (np.zeros(n), z0), T, geom, stencils, q)
        out.append(_rate_check("linear_decay_z", r["rate_z_L1"], -q.mu))
    return out


def _rate_check(name, value, target):
    tol = RATE_TOL * abs(target) + 1e-9
    ok = value is not None and math.isfinite(value) and abs(value - target) <= tol
    return _check(name, ok, value, tol, expected=target)


def snapshot_checks(geom: GridGeometry, out_dir) -> list[dict]:
    files = sorted(Path(out_dir).glob("*.adh")) if out_dir and Path(out_dir).exists() else []
    bad = []
    for f in files:
        try:
            check_snapshot(read_snapshot(f), geom, str(f))
        except SnapshotError as exc:
            bad.append(str(exc))
    return [_check("snapshot_integrity", not bad, len(files), 0, failures=bad)]


def run_verification(config: RunConfig, out_dir=None) -> dict:
    started = time.perf_counter()
    geom, stencils, p, state = build_problem(config)
    checks = [oracle_check(geom, stencils, p.M, seed=config.seed)]
    try:
        checks += step_checks(geom, stencils, p, state, config.verify_steps, config.scheme)
    except AdhesimError as exc:
        checks.append(_check("mass_balance", False, None, MASS_TOL, error=str(exc)))
    probe = lipschitz_bound_probe(p.kernel, geom, trials=5, seed=config.seed, M=AdhesionMatrix(1, 1, 1, 1), stencils=stencils)
    checks.append(_check("lipschitz_probe", probe["finite"], probe["sup_ratio"], None, **probe))
    checks.append(constant_state_check(geom, stencils, p))

    side_geom, side_st, side_p = side_interval(p)
    x = side_geom.centers[:, 0]
    u0 = 0.05 * (1.0 + np.cos(np.pi * x))
    v0 = 0.05 * (1.0 + np.cos(2.0 * np.pi * x))
    try:
        pic = picard_agreement(side_geom, side_st, side_p, u0, v0, T=0.05)
        passed = pic.pop("passed")
        checks.append(_check("picard_agreement", passed, pic["sup_difference"], pic["bound"], **pic))
    except PicardConvergenceError as exc:
        checks.append(_check("picard_agreement", False, None, None, error=str(exc), factors=exc.factors))
    checks += rate_checks(p)
    checks += snapshot_checks(geom, out_dir)
    return {
        "passed": all(c["passed"] for c in checks),
        "checks": checks,
        "seconds": time.perf_counter() - started,
    }


def stability_study(config: RunConfig) -> dict:
    """Linear growth rates about (0, k) and (0, 0) on the configured geometry."""
    geom, stencils, p, _ = build_problem(config)
    n = geom.ncells
    d2 = np.sum((geom.centers - geom.centers.mean(axis=0)) ** 2, axis=1)
    z0 = 1.0 + 0.5 * np.exp(-d2 / (2 * (0.25 * geom.inradius) ** 2))
    T = config.stability_T
    runs = {
        "AtZeroK_constant_w": (AT_ZERO_K, (np.ones(n), np.zeros(n)), {"rate_w": -p.m}),
        "AtZeroK_positive_z": (AT_ZERO_K, (np.zeros(n), z0), {"rate_z_L1": -p.mu}),
        "AtZeroZero_positive_z": (AT_ZERO_ZERO, (np.zeros(n), z0), {"rate_z_L1": p.mu}),
    }
    out = {}
    for name, (base, init, predicted) in runs.items():
        est = growth_rate_estimate(base, init, T, geom, stencils, p)
        est["predicted"] = predicted
        out[name] = est
    out["stable_regime"] = p.m > p.mu
    return out


def quadrature_study(R: float = 0.2, levels=(8, 16, 32)) -> dict:
    """Interior K[x, 0] on the interval for the constant and bump profiles against closed forms."""
    out = {}
    for profile in ("constant", "bump"):
        kernel = KernelSpec(CASE_II, R, profile)
        exact = 2.0 * quad(lambda y: y * float(kernel.w(np.array(y))), 0.0, R, epsabs=1e-15, epsrel=1e-14)[0]
        errors = []
        for n in levels:
            h = R / n
            geom = build_geometry(GeometrySpec("interval", (1.0,), h))
            st = build_stencils(geom, kernel)
            x = geom.centers[:, 0]
            K, _ = eval_adhesion(x, np.zeros_like(x), st, AdhesionMatrix(1.0, 0.0, 0.0, 0.0))
            i = int(np.argmin(np.abs(x - 0.5)))
            errors.append(abs(float(K[i, 0]) - exact))
        orders = [
            math.log2(a / b) if a > 0 and b > 0 else math.nan for a, b in zip(errors[:-1], errors[1:])
        ]
        out[profile] = {"exact": exact, "h": [R / n for n in levels], "errors": errors, "orders": orders}
    return out


def boundary_vanishing_study(L: float = 1.0, R: float = 0.25, levels=(8, 16, 32)) -> dict:
    """Sup of |K| near the disc boundary for case II, under refinement.

    ``boundary_sup_K`` is taken over boundary-adjacent cells, ``layer_sup_K``
    over cells whose centre lies within 2h of the boundary.
    """
    kernel = KernelSpec(CASE_II, R)
    sups, layer = [], []
    for n in levels:
        geom = build_geometry(GeometrySpec(DISC, (L,), L / n))
        st = build_stencils(geom, kernel)
        x = geom.centers
        f = 1.0 + 0.5 * x[:, 0] + 0.25 * x[:, 1] ** 2
        K, _ = eval_adhesion(f, np.zeros_like(f), st, AdhesionMatrix(1.0, 0.0, 0.0, 0.0))
        norm = np.linalg.norm(K, axis=1)
        sups.append(float(np.max(norm[geom.boundary_mask])))
        layer.append(float(np.max(norm[geom.distance < 2.0 * geom.h])))
    return {"h": [L / n for n in levels], "boundary_sup_K": sups, "layer_sup_K": layer}


def _restrict(fine: np.ndarray) -> np.ndarray:
    """Average 2^n blocks of a full grid, skipping NaN exterior children."""
    shape = fine.shape
    blocks = fine.reshape(*[s for dim in shape for s in (dim // 2, 2)])
    axes = tuple(range(1, 2 * len(shape), 2))
    with np.errstate(invalid="ignore"):
        cnt = np.sum(~np.isnan(blocks), axis=axes)
        tot = np.nansum(blocks, axis=axes)
        return np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)


def convergence_study(config: RunConfig) -> dict:
    """Short runs at h, h/2, ... with a common time step; successive-difference orders."""
    spec = config.geometry
    levels = config.convergence_levels
    t_end = config.convergence_t_end
    specs = [GeometrySpec(spec.kind, spec.extent, spec.h / 2**j) for j in range(levels)]
    problems = [build_problem(config, s) for s in specs]
    geom_f, st_f, p, s_f = problems[-1]
    K, S = eval_adhesion(s_f.u, s_f.v, st_f, p.M)
    dt = stable_dt(s_f, K, S, geom_f, p, config.scheme.safety)
    nsteps = max(1, int(math.ceil(t_end / dt)))
    dt = t_end / nsteps
    finals = []
    for geom, st, q, state in problems:
        for i in range(nsteps):
            state = advance(state, geom, st, q, dt, config.scheme.integrator, config.scheme.advection, i).state
        finals.append((geom, state))
    diffs = []
    for (g_c, s_c), (g_f, s_f) in zip(finals[:-1], finals[1:]):
        if tuple(2 * n for n in g_c.shape) != tuple(g_f.shape):
            diffs.append(math.nan)
            continue
        worst = 0.0
        for qc, qf in ((s_c.u, s_f.u), (s_c.v, s_f.v)):
            coarse = g_c.to_grid(qc)
            fine = _restrict(g_f.to_grid(qf))
            both = ~np.isnan(coarse) & ~np.isnan(fine)
            worst = max(worst, float(np.sqrt(np.mean((coarse[both] - fine[both]) ** 2))))
        diffs.append(worst)
    orders = [math.log2(a / b) if a > 0 and b > 0 else math.nan for a, b in zip(diffs[:-1], diffs[1:])]
    return {
        "h": [s.h for s in specs],
        "t_end": t_end,
        "dt": dt,
        "steps": nsteps,
        "successive_rms_differences": diffs,
        "observed_orders": orders,
        "quadrature": quadrature_study(min(config.kernel.R, 0.2)),
    }
