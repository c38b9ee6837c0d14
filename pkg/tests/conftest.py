import numpy as np
import pytest

from adhesim import AdhesionMatrix, GeometrySpec, KernelSpec, ModelParams, build_geometry, build_stencils
from adhesim.adhesion import CASE_I
from adhesim.dynamics import ROBIN, ZEROZERO


def interval(n=64, length=1.0, rho=None):
    return build_geometry(GeometrySpec("interval", (length,), length / n), rho)


def disc(n=16, radius=1.0):
    return build_geometry(GeometrySpec("disc", (radius,), radius / n))


def params(case=CASE_I, R=0.1, M=(1.0, 0.5, 0.5, 1.0), **kw):
    kernel = KernelSpec(case, R)
    bc = ROBIN if case == CASE_I else ZEROZERO
    base = dict(m=0.5, k=1.0, lam=1.0, mu=1.0)
    base.update(kw)
    return ModelParams(M=AdhesionMatrix(*M), kernel=kernel, bc=bc, **base)


def problem(geom, case=CASE_I, R=0.1, M=(1.0, 0.5, 0.5, 1.0), **kw):
    p = params(case, R, M, **kw)
    return p, build_stencils(geom, p.kernel)


def bumps(geom, a=0.8, base=0.05):
    """Two separated smooth bumps, one per species."""
    x = geom.centers
    c = x.mean(axis=0)
    shift = 0.3 * geom.inradius * np.eye(geom.dimension)[0]
    w = 0.2 * geom.inradius
    bu = np.exp(-np.sum((x - c + shift) ** 2, axis=1) / (2 * w * w))
    bv = np.exp(-np.sum((x - c - shift) ** 2, axis=1) / (2 * w * w))
    return base + a * bu, base + a * bv


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(label, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'}  {label}  {detail}".rstrip()
        _CRITERIA.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
