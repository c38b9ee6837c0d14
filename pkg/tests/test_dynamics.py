import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adhesim import State, advance, assemble_fluxes, eval_adhesion, reaction_terms, stable_dt, step
from adhesim.adhesion import CASE_I, CASE_II
from adhesim.analysis import mass_balance_residual, negativity_probe
from adhesim.config import parse_config_text
from adhesim.dynamics import run
from adhesim.errors import DimensionError, InstabilityError, InvalidSpecError, PropagationError

from conftest import bumps, disc, interval, params, problem


def test_reaction_examples():
    p = params(m=0.5, k=2.0, lam=1.0, mu=1.0)
    r_u, r_v = reaction_terms(1.0, 0.5, p)
    assert r_u == pytest.approx(-0.25, abs=1e-15)
    assert r_v == pytest.approx(0.625, abs=1e-15)
    assert reaction_terms(0.0, 2.0, p) == (0.0, 0.0)
    r_u, r_v = reaction_terms(2.0, 0.0, p)
    assert (r_u, r_v) == (-1.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(u=st.floats(0, 5), v=st.floats(0, 5), m=st.floats(0, 3), lam=st.floats(0, 3), mu=st.floats(0, 3))
def test_reaction_total_is_logistic(u, v, m, lam, mu):
    p = params(m=m, k=1.5, lam=lam, mu=mu)
    r_u, r_v = reaction_terms(u, v, p)
    free = 1.5 - u - v
    assert r_u + r_v == pytest.approx((lam * u + mu * v) * free / 1.5, abs=1e-12)


def test_bc_case_coupling():
    from adhesim import AdhesionMatrix, KernelSpec, ModelParams

    with pytest.raises(InvalidSpecError):
        ModelParams(0.5, 1.0, 1.0, 1.0, AdhesionMatrix(), KernelSpec(CASE_II, 0.1), bc="robin")
    with pytest.raises(InvalidSpecError):
        ModelParams(0.5, 0.0, 1.0, 1.0, AdhesionMatrix(), KernelSpec(CASE_I, 0.1))


def test_pure_diffusion_fluxes():
    g = interval(16)
    p = params()
    x = g.centers[:, 0]
    s = State(x**2, np.cos(x))
    z = np.zeros((g.ncells, 1))
    f = assemble_fluxes(s, z, z, g, p)
    lower, upper = g.faces[0]
    np.testing.assert_allclose(f.diff_u[0], -(s.u[upper] - s.u[lower]) / g.h, rtol=1e-14)
    assert not f.adv_u[0].any() and not f.adv_v[0].any()
    for name in ("bnd_adv_u", "bnd_diff_u", "bnd_adv_v", "bnd_diff_v"):
        assert not getattr(f, name).any()


def test_uniform_advection_picks_upwind():
    g = interval(16)
    p = params()
    s = State(np.full(g.ncells, 0.3), np.zeros(g.ncells))
    K = np.full((g.ncells, 1), 2.0)
    f = assemble_fluxes(s, K, np.zeros_like(K), g, p)
    np.testing.assert_allclose(f.adv_u[0], 0.6, rtol=1e-15)
    np.testing.assert_allclose(f.diff_u[0], 0.0, atol=1e-15)
    # robin boundary faces cancel advective and diffusive flux
    np.testing.assert_allclose(f.bnd_adv_u + f.bnd_diff_u, 0.0, atol=0)


def test_single_cell_mass_telescopes():
    g = disc(16)
    p, st_ = problem(g, CASE_I, 0.3, M=(3.0, 0.0, 0.0, 0.0), m=0.0, lam=0.0, mu=0.0)
    u = np.zeros(g.ncells)
    u[int(np.argmin(np.linalg.norm(g.centers - 0.3, axis=1)))] = 1.0
    s = State(u, np.zeros(g.ncells))
    K, S = eval_adhesion(s.u, s.v, st_, p.M)
    du, _ = assemble_fluxes(s, K, S, g, p).divergence(g)
    assert abs(np.sum(du) * g.cell_volume) <= 1e-14


def test_stable_dt_diffusion_example():
    from adhesim import GeometrySpec, build_geometry

    g = build_geometry(GeometrySpec("rectangle", (1.0, 1.0), 0.1))
    p = params(m=0.0, lam=0.0, mu=0.0)
    s = State(np.zeros(g.ncells), np.zeros(g.ncells))
    z = np.zeros((g.ncells, 2))
    # positivity cap 1/(4 D/h^2) is twice the diffusive cap here
    assert stable_dt(s, z, z, g, p, 0.9) == pytest.approx(0.9 * 0.0025, rel=1e-14)


def test_stable_dt_advective_cap():
    from adhesim import GeometrySpec, build_geometry

    g = build_geometry(GeometrySpec("rectangle", (1.0, 1.0), 0.1))
    p = params(m=0.0, lam=0.0, mu=0.0, D_u=0.01, D_v=0.01)
    s = State(np.zeros(g.ncells), np.zeros(g.ncells))
    K = np.zeros((g.ncells, 2))
    K[:, 0] = 10.0
    dt = stable_dt(s, K, np.zeros_like(K), g, p, 1.0)
    assert dt <= 0.01 + 1e-15
    assert dt == pytest.approx(1.0 / (10.0 / 0.1 + 4 * 0.01 / 0.01), rel=1e-12)


def test_stable_dt_refinement_scaling():
    from adhesim import GeometrySpec, build_geometry

    p = params(m=0.0, lam=0.0, mu=0.0)
    dts, adv = [], []
    for h in (0.1, 0.1 / np.sqrt(2)):
        g = build_geometry(GeometrySpec("interval", (1.0,), 1.0 / round(1.0 / h)))
        s = State(np.zeros(g.ncells), np.zeros(g.ncells))
        z = np.zeros((g.ncells, 1))
        dts.append((g.h, stable_dt(s, z, z, g, p)))
        K = np.full((g.ncells, 1), 1e4)
        adv.append((g.h, stable_dt(s, K, K, g, p)))
    (h0, d0), (h1, d1) = dts
    assert d1 / d0 == pytest.approx((h1 / h0) ** 2, rel=1e-12)
    (h0, a0), (h1, a1) = adv
    assert a1 / a0 == pytest.approx(h1 / h0, rel=1e-2)


def test_stable_dt_rejects_bad_safety():
    g = interval(8)
    s = State(np.zeros(8), np.zeros(8))
    z = np.zeros((8, 1))
    with pytest.raises(InvalidSpecError):
        stable_dt(s, z, z, g, params(), 1.5)


@pytest.mark.parametrize("dim", [1, 2])
def test_zero_k_is_steady(dim):
    g = interval(64) if dim == 1 else disc(16)
    p, st_ = problem(g, CASE_II, 0.2, M=(2.0, 1.0, 1.0, 3.0), k=2.0)
    s = State(np.zeros(g.ncells), np.full(g.ncells, 2.0))
    for dt in (1e-5, 1e-3, 0.1):
        out = step(s, g, st_, p, dt)
        assert np.max(np.abs(out.u)) <= 1e-14
        assert np.max(np.abs(out.v - 2.0)) <= 1e-14


def test_zero_stays_zero():
    g = disc(16)
    p, st_ = problem(g, CASE_I, 0.3)
    z = np.zeros(g.ncells)
    out = step(State(z, z), g, st_, p, 1e-3)
    assert not out.u.any() and not out.v.any()


@pytest.mark.parametrize("case", [CASE_I, CASE_II])
def test_euler_consistency(case):
    g = interval(64)
    p, st_ = problem(g, case, 0.1, M=(2.0, 0.5, 0.5, 1.0))
    u, v = bumps(g)
    s = State(u, v)
    K, S = eval_adhesion(u, v, st_, p.M)
    dt0 = stable_dt(s, K, S, g, p)
    gaps = []
    for dt in (dt0, dt0 / 2):
        one = step(s, g, st_, p, dt)
        two = step(step(s, g, st_, p, dt / 2), g, st_, p, dt / 2)
        gaps.append(max(np.max(np.abs(one.u - two.u)), np.max(np.abs(one.v - two.v))))
    assert gaps[1] / gaps[0] == pytest.approx(0.25, rel=0.1)


@pytest.mark.parametrize("integrator", ["euler", "heun"])
@pytest.mark.parametrize("advection", ["upwind", "minmod"])
@pytest.mark.parametrize("case", [CASE_I, CASE_II])
def test_mass_and_positivity_all_schemes(integrator, advection, case):
    g = disc(16)
    p, st_ = problem(g, case, 0.25, M=(5.0, 1.0, 1.0, 3.0))
    u, v = bumps(g)
    s = State(u, v)
    for i in range(30):
        K, S = eval_adhesion(s.u, s.v, st_, p.M)
        dt = stable_dt(s, K, S, g, p, 0.5)
        rep = advance(s, g, st_, p, dt, integrator, advection, i)
        res = mass_balance_residual(s, rep.state, dt, p, g, (rep.reaction_mass_u, rep.reaction_mass_v))
        assert max(res) <= 1e-12
        neg = negativity_probe(rep.state, g)
        assert neg["u"] == 0.0 and neg["v"] == 0.0
        s = rep.state


def test_huge_dt_raises_instability():
    g = interval(64)
    p, st_ = problem(g, CASE_I, 0.1)
    u, v = bumps(g)
    with pytest.raises(InstabilityError) as info:
        step(State(u, v), g, st_, p, 1.0)
    assert info.value.diagnostics["stable_dt"] < 1e-3


def test_step_rejects_bad_input():
    g = interval(16)
    p, st_ = problem(g)
    with pytest.raises(DimensionError):
        step(State(np.zeros(3), np.zeros(3)), g, st_, p, 1e-4)
    bad = np.zeros(16)
    bad[2] = np.nan
    with pytest.raises(PropagationError):
        step(State(bad, np.zeros(16)), g, st_, p, 1e-4)
    with pytest.raises(InvalidSpecError):
        step(State(np.zeros(16), np.zeros(16)), g, st_, p, 0.0)


BASE_CFG = """
geometry.kind = interval
geometry.extent = 1
geometry.h = 0.03125
kernel.R = 0.1
model.bc = robin
model.M11 = 2
model.M12 = 0.5
model.M21 = 0.5
model.M22 = 1
initial.preset = gaussian
"""


def test_run_zero_horizon():
    cfg = parse_config_text(BASE_CFG + "run.t_end = 0\n")
    res = run(cfg)
    assert res.steps == 0 and len(res.trajectory) == 1 and len(res.monitors) == 1


def test_run_reaches_end_and_snapshots():
    cfg = parse_config_text(BASE_CFG + "run.t_end = 0.05\noutput.snapshot_every = 10\n")
    seen = []
    res = run(cfg, on_snapshot=lambda i, s: seen.append((i, s.t)))
    assert res.final.t == 0.05
    assert [i for i, _ in seen] == list(range(len(res.trajectory)))
    assert len(res.trajectory) == 1 + res.steps // 10 + (res.steps % 10 != 0)
    assert res.monitors.column("t")[-1] == 0.05


def test_transport_only_conserves_mass():
    overrides = {"model.m": 0, "model.lam": 0, "model.mu": 0, "geometry.h": 0.0625,
                 "scheme.dt": 1e-4, "run.t_end": 0.1}
    cfg = parse_config_text(BASE_CFG, overrides=overrides)
    res = run(cfg)
    assert res.steps == 1000
    mu = np.asarray(res.monitors.column("mass_u"))
    mv = np.asarray(res.monitors.column("mass_v"))
    assert np.max(np.abs(mu - mu[0])) <= 1e-12 * mu[0]
    assert np.max(np.abs(mv - mv[0])) <= 1e-12 * mv[0]


def test_stable_regime_sup_u_decays():
    cfg = parse_config_text(
        """
geometry.kind = interval
geometry.extent = 1
geometry.h = 0.0625
kernel.R = 0.2
model.bc = zerozero
model.m = 2
model.mu = 0.5
model.k = 1
initial.preset = gaussian
initial.u = 0.05
initial.v = 0.95
initial.amplitude_u = 0.05
run.t_end = 3
output.monitor_every = 20
"""
    )
    sup_u = np.asarray(run(cfg).monitors.column("sup_u"))
    tail = sup_u[len(sup_u) // 4 :]
    assert np.all(np.diff(tail) < 0)
    assert tail[-1] < 1e-2 * sup_u[0]


def test_sup_ceiling_raises():
    cfg = parse_config_text(BASE_CFG + "run.t_end = 0.1\nrun.sup_ceiling = 0.1\n")
    with pytest.raises(InstabilityError) as info:
        run(cfg)
    assert info.value.monitors is not None
