"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from adhesim import (
    AdhesionMatrix,
    KernelSpec,
    ModelParams,
    State,
    advance,
    build_stencils,
    direct_adhesion_oracle,
    eval_adhesion,
    growth_rate_estimate,
    lyapunov_value,
    mass_balance_residual,
    negativity_probe,
    stable_dt,
)
from adhesim.adhesion import CASE_I, CASE_II
from adhesim.analysis import AT_ZERO_K, AT_ZERO_ZERO
from adhesim.config import build_problem, parse_config_text
from adhesim.dynamics import ROBIN, ZEROZERO, run
from adhesim.errors import InstabilityError
from adhesim.verification import (
    boundary_vanishing_study,
    picard_agreement,
    quadrature_study,
    relative_difference,
)

from conftest import disc, interval

ORACLE_TOL = 1e-13
MASS_TOL = 1e-12
NEGATIVITY_TOL = 1e-20
CLIP_FRACTION = 1e-3
STEADY_TOL = 1e-12
RATE_TOL = 0.01
L2_RATE_FACTOR = 0.95
PICARD_TOL = 1e-10
CONTRACTION_MAX = 0.5
ORDER_MIN = 1.8
LYAPUNOV_STEP_TOL = 1e-8
BOUND_FACTOR = 10.0

DISC_RUN = """
geometry.kind = disc
geometry.extent = 1.0
geometry.h = 0.03125
kernel.R = 0.25
model.M11 = 5
model.M12 = 1
model.M21 = 1
model.M22 = 3
initial.preset = two_bump
initial.u = 0.05
initial.v = 0.05
initial.amplitude_u = 0.8
initial.amplitude_v = 0.8
"""


def test_c01_oracle_equivalence(criterion):
    rng = np.random.default_rng(20)
    M = AdhesionMatrix(1.0, 0.5, 0.25, 2.0)
    started = time.perf_counter()
    worst = 0.0
    for geom, R in ((interval(256), 0.1), (disc(48), 0.25)):
        for case in (CASE_I, CASE_II):
            kernel = KernelSpec(case, R)
            st = build_stencils(geom, kernel)
            u = rng.uniform(0.0, 1.0, (20, geom.ncells))
            v = rng.uniform(0.0, 1.0, (20, geom.ncells))
            K, S = eval_adhesion(u, v, st, M)
            K2, S2 = direct_adhesion_oracle(u, v, geom, kernel, M)
            worst = max(worst, relative_difference(K, K2), relative_difference(S, S2))
    elapsed = time.perf_counter() - started
    criterion("1 oracle equivalence", worst <= ORACLE_TOL and elapsed < 30.0,
              f"max rel diff {worst:.2e} <= {ORACLE_TOL:g}, {elapsed:.1f}s < 30s")


@pytest.fixture(scope="module")
def generic_runs():
    """500 steps of the two-bump disc run under each boundary regime."""
    out = {}
    for bc in (ROBIN, ZEROZERO):
        cfg = parse_config_text(DISC_RUN, overrides={"model.bc": bc})
        geom, st, p, state = build_problem(cfg)
        mass, neg, clips = 0.0, 0.0, 0
        for i in range(500):
            K, S = eval_adhesion(state.u, state.v, st, p.M)
            dt = stable_dt(state, K, S, geom, p)
            rep = advance(state, geom, st, p, dt, step_index=i)
            mass = max(mass, *mass_balance_residual(state, rep.state, dt, p, geom))
            probe = negativity_probe(rep.state, geom)
            neg = max(neg, probe["u"], probe["v"])
            clips += rep.clip_count
            state = rep.state
        out[bc] = dict(mass=mass, neg=neg, clips=clips, cells=geom.ncells, t=state.t)
    return out


def test_c02_mass_law(criterion, generic_runs):
    worst = max(r["mass"] for r in generic_runs.values())
    detail = ", ".join(f"{bc} {r['mass']:.1e}" for bc, r in generic_runs.items())
    criterion("2 mass law", worst <= MASS_TOL, f"max per-step residual ({detail}) <= {MASS_TOL:g}")


def test_c03_positivity(criterion, generic_runs):
    neg = max(r["neg"] for r in generic_runs.values())
    clip_ok = all(r["clips"] <= CLIP_FRACTION * r["cells"] for r in generic_runs.values())
    clips = {bc: r["clips"] for bc, r in generic_runs.items()}
    criterion("3 positivity", neg <= NEGATIVITY_TOL and clip_ok,
              f"max negativity {neg:.1e} <= {NEGATIVITY_TOL:g}, clips {clips} <= 0.1% of cells")


def test_c04_steady_state(criterion):
    cfg = parse_config_text(DISC_RUN, overrides={"model.bc": ZEROZERO, "model.k": 2.0,
                                                 "initial.preset": "steady_zero_k"})
    geom, st, p, start = build_problem(cfg)
    state = start
    for i in range(1000):
        K, S = eval_adhesion(state.u, state.v, st, p.M)
        state = advance(state, geom, st, p, stable_dt(state, K, S, geom, p), step_index=i).state
    dev = float(max(np.max(np.abs(state.u - start.u)), np.max(np.abs(state.v - start.v))))
    criterion("4 steady state (0, k)", dev <= STEADY_TOL, f"max deviation {dev:.1e} <= {STEADY_TOL:g} after 1000 steps")


def _linear_setup(m, mu):
    geom = interval(128, length=2.0)
    kernel = KernelSpec(CASE_II, 0.1)
    p = ModelParams(m=m, k=1.0, lam=1.0, mu=mu, M=AdhesionMatrix(1.0, 0.5, 0.5, 1.0), kernel=kernel, bc=ZEROZERO)
    x = geom.centers[:, 0]
    z0 = 1.0 + 0.5 * np.exp(-((x - 0.5) ** 2) / (2 * 0.1**2))
    return geom, build_stencils(geom, kernel), p, z0


def test_c05_linear_decay(criterion):
    started = time.perf_counter()
    rates, ok = {}, True
    for m in (0.5, 1.0, 2.0):
        geom, st, p, _ = _linear_setup(m, 1.0)
        n = geom.ncells
        r = growth_rate_estimate(AT_ZERO_K, (np.ones(n), np.zeros(n)), 2.0, geom, st, p)
        rates[m] = r["rate_w"]
        ok &= -m * (1 + RATE_TOL) <= r["rate_w"] <= -m * (1 - RATE_TOL)
    elapsed = time.perf_counter() - started
    detail = ", ".join(f"m={m}: {r:.5f}" for m, r in rates.items())
    criterion("5 linear decay of w", ok and elapsed < 60.0, f"{detail} within 1% of -m, {elapsed:.1f}s < 60s")


def test_c06_linear_instability(criterion):
    rates, ok = {}, True
    for mu in (0.5, 1.0):
        geom, st, p, z0 = _linear_setup(1.0, mu)
        r = growth_rate_estimate(AT_ZERO_ZERO, (np.zeros(geom.ncells), z0), 2.0, geom, st, p)
        rates[mu] = r["rate_z_L1"]
        ok &= mu * (1 - RATE_TOL) <= r["rate_z_L1"] <= mu * (1 + RATE_TOL)
    detail = ", ".join(f"mu={mu}: {r:.5f}" for mu, r in rates.items())
    criterion("6 linear growth of z about (0,0)", ok, f"{detail} within 1% of +mu")


def test_c07_linear_stability(criterion):
    rates, ok, flags = {}, True, []
    for mu in (0.5, 1.0):
        geom, st, p, z0 = _linear_setup(2.0 * mu, mu)
        r = growth_rate_estimate(AT_ZERO_K, (np.zeros(geom.ncells), z0), 2.0, geom, st, p)
        rates[mu] = (r["rate_z_L1"], r["rate_z_L2"])
        ok &= -mu * (1 + RATE_TOL) <= r["rate_z_L1"] <= -mu * (1 - RATE_TOL)
        if not r["rate_z_L2"] <= -L2_RATE_FACTOR * mu:
            flags.append(f"L2 rate {r['rate_z_L2']:.4f} above {-L2_RATE_FACTOR * mu:.4f} at mu={mu}")
    detail = ", ".join(f"mu={mu}: L1 {a:.5f} L2 {b:.5f}" for mu, (a, b) in rates.items())
    flag = "; flagged: " + "; ".join(flags) if flags else "; L2 decay flag clear"
    criterion("7 linear decay of z about (0,k), m > mu", ok, detail + flag)


def test_c08_picard_agreement(criterion):
    geom = interval(64)
    x = geom.centers[:, 0]
    u0 = 0.05 * (1.0 + np.cos(np.pi * x))
    v0 = 0.05 * (1.0 + np.cos(2.0 * np.pi * x))
    results, ok = {}, True
    for bc, case in ((ROBIN, CASE_I), (ZEROZERO, CASE_II)):
        kernel = KernelSpec(case, 0.1)
        p = ModelParams(m=0.5, k=1.0, lam=1.0, mu=1.0, M=AdhesionMatrix(1.0, 0.5, 0.5, 1.0), kernel=kernel, bc=bc)
        r = picard_agreement(geom, build_stencils(geom, kernel), p, u0, v0, T=8.0, tol=PICARD_TOL)
        results[bc] = r
        ok &= r["sup_difference"] <= 5 * (PICARD_TOL + r["dt"]) and r["contraction_factor"] <= CONTRACTION_MAX
    detail = "; ".join(
        f"{bc}: T={r['T']:.4g} ({r['halvings']} halvings), diff {r['sup_difference']:.1e} <= {r['bound']:.1e}, "
        f"factor {r['contraction_factor']:.3f} <= 0.5"
        for bc, r in results.items()
    )
    criterion("8 Picard vs stepper", ok, detail)


def test_c09_quadrature(criterion):
    R = 0.2
    study = quadrature_study(R, levels=(8, 16, 32))
    exact_errs = study["constant"]["errors"]
    exact_ok = max(exact_errs) <= 1e-13 * R * R
    orders = study["bump"]["orders"]
    order_ok = min(orders) >= ORDER_MIN
    bnd = boundary_vanishing_study(1.0, 0.25, levels=(8, 16, 32))
    sups, layer = bnd["boundary_sup_K"], bnd["layer_sup_K"]
    bnd_ok = all(b <= a for a, b in zip(sups, sups[1:])) and all(b < a for a, b in zip(layer, layer[1:]))
    detail = (
        f"R^2 example errors {max(exact_errs):.1e} (exact, no order measurable); "
        f"bump profile orders {', '.join(f'{o:.2f}' for o in orders)} >= {ORDER_MIN}; "
        f"boundary sup|K| {sups}, 2h-layer sup|K| {', '.join(f'{s:.2e}' for s in layer)} decreasing"
    )
    criterion("9 quadrature convergence", exact_ok and order_ok and bnd_ok, detail)


def test_c10_uniform_bound(criterion):
    cfg = parse_config_text(
        """
geometry.kind = interval
geometry.extent = 4.0
geometry.h = 0.125
kernel.R = 0.5
model.M11 = 5
model.M12 = 1
model.M21 = 1
model.M22 = 3
model.bc = robin
initial.preset = two_bump
initial.u = 0.05
initial.v = 0.05
initial.amplitude_u = 0.8
initial.amplitude_v = 0.8
run.t_end = 50
output.snapshot_every = 1000000
"""
    )
    geom, st, p, state = build_problem(cfg)
    ceiling = BOUND_FACTOR * max(p.k, float(state.u.max() + state.v.max()))
    try:
        res = run(cfg, problem=(geom, st, p, state))
        blown = False
    except InstabilityError:
        blown = True
        res = None
    peak = math.inf
    if res is not None:
        peak = float(np.max(np.asarray(res.monitors.column("sup_u")) + np.asarray(res.monitors.column("sup_v"))))
    criterion("10 uniform boundedness to t=50", not blown and peak <= ceiling,
              f"max sup(u)+sup(v) {peak:.3f} <= {ceiling:.3f}, instability raised: {blown}")


def test_c11_lyapunov(criterion):
    geom = interval(32)
    kernel = KernelSpec(CASE_II, 0.2)
    p = ModelParams(m=0.5, k=1.0, lam=0.5, mu=1.0, M=AdhesionMatrix(2.0, 1.0, 0.0, 0.0), kernel=kernel, bc=ZEROZERO)
    st = build_stencils(geom, kernel)
    x = geom.centers[:, 0]
    bump = np.cos(2 * np.pi * x) ** 2
    state = State(0.3 + 0.2 * np.cos(np.pi * x), 0.5 * p.k + 0.3 * (bump - bump.min()))
    assert np.min(state.v) == p.k / 2
    vol = geom.cell_volume
    u1_start = float(np.sum(state.u) * vol)
    prev = lyapunov_value(state, p, geom)
    S_sup, worst_rise = 0.0, -math.inf
    dev_samples = []
    next_sample = 1.0
    i = 0
    while state.t < 10.0:
        K, S = eval_adhesion(state.u, state.v, st, p.M)
        S_sup = max(S_sup, float(np.max(np.abs(S))))
        dt = min(stable_dt(state, K, S, geom, p), 10.0 - state.t)
        state = advance(state, geom, st, p, dt, step_index=i).state
        i += 1
        val = lyapunov_value(state, p, geom)
        if state.t > 1.0:
            worst_rise = max(worst_rise, val - prev)
        prev = val
        if state.t >= next_sample - 1e-12:
            dev_samples.append(float(np.sum((state.u - (p.k - state.v)) ** 2) * vol))
            next_sample += 1.0
    u1_end = float(np.sum(state.u) * vol)
    dev_ok = all(b < a for a, b in zip(dev_samples, dev_samples[1:]))
    ok = S_sup == 0.0 and worst_rise <= LYAPUNOV_STEP_TOL and u1_end <= 1e-2 * u1_start and dev_ok
    criterion(
        "11 Lyapunov decay",
        ok,
        f"max step increase after t=1 {worst_rise:.2e} <= {LYAPUNOV_STEP_TOL:g}; |u|_1 {u1_start:.3f} -> {u1_end:.2e}; "
        f"sum|u-(k-v)|^2 at t=1..10 decreasing {dev_ok} ({dev_samples[0]:.1e} -> {dev_samples[-1]:.1e}); sup|S| = {S_sup}",
    )


def test_c12_determinism(criterion):
    text = DISC_RUN.replace("geometry.h = 0.03125", "geometry.h = 0.0625") + (
        "initial.preset = mixed_random\nrun.t_end = 0.02\nrun.seed = 987654321\noutput.snapshot_every = 1000\n"
    )
    text = text.replace("initial.preset = two_bump\n", "")
    csvs = [run(parse_config_text(text)).monitors.to_csv().encode() for _ in range(2)]
    other = run(parse_config_text(text, overrides={"run.seed": 1})).monitors.to_csv().encode()
    criterion("12 determinism", csvs[0] == csvs[1] and csvs[0] != other,
              f"two runs byte-identical ({len(csvs[0])} bytes); different seed differs: {csvs[0] != other}")
