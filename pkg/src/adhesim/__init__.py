"""Simulator for a two-phenotype cell population model with nonlocal adhesion."""

from .adhesion import (
    AdhesionMatrix,
    KernelSpec,
    SensingStencil,
    build_stencils,
    case2_weak_derivative,
    direct_adhesion_oracle,
    eval_adhesion,
    lipschitz_bound_probe,
)
from .analysis import (
    LinearizedState,
    growth_rate_estimate,
    linearized_rhs,
    lyapunov_value,
    mass_balance_residual,
    negativity_probe,
    picard_solve,
)
from .config import RunConfig, build_problem, parse_config
from .dynamics import ModelParams, State, advance, assemble_fluxes, reaction_terms, run, stable_dt, step
from .geometry import GeometrySpec, GridGeometry, build_geometry, extend_normal
from .io import read_snapshot, write_snapshot
from .monitors import MonitorSeries

__version__ = "0.1.0"

__all__ = [
    "AdhesionMatrix", "KernelSpec", "SensingStencil", "build_stencils", "case2_weak_derivative",
    "direct_adhesion_oracle", "eval_adhesion", "lipschitz_bound_probe",
    "LinearizedState", "growth_rate_estimate", "linearized_rhs", "lyapunov_value",
    "mass_balance_residual", "negativity_probe", "picard_solve",
    "RunConfig", "build_problem", "parse_config",
    "ModelParams", "State", "advance", "assemble_fluxes", "reaction_terms", "run", "stable_dt", "step",
    "GeometrySpec", "GridGeometry", "build_geometry", "extend_normal",
    "read_snapshot", "write_snapshot", "MonitorSeries",
]
