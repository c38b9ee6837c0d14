"""Plain-text run configuration: dotted ``section.key = value`` lines.

``#`` starts a comment. Unknown keys, duplicate keys and malformed values
are all collected and reported together in one :class:`ConfigError`.
The boundary regime fixes the sensing construction: ``model.bc = robin``
uses clipped balls (case I), ``model.bc = zerozero`` uses shrinking balls
(case II, only defined on the disc and the interval).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .adhesion import CASE_I, CASE_II, PROFILES, AdhesionMatrix, KernelSpec, build_stencils
from .dynamics import ADVECTION_SCHEMES, BC_CASES, INTEGRATORS, ROBIN, ZEROZERO, ModelParams, State
from .errors import ConfigError, InvalidSpecError
from .geometry import DISC, DOMAIN_KINDS, INTERVAL, RECTANGLE, GeometrySpec, build_geometry, inradius
from .initial import PRESETS, InitialSpec, initial_fields

ECHO_NAME = "config.resolved"
_ALIGN_TOL = 1e-9


def _float(text):
    val = float(text)
    if not math.isfinite(val):
        raise ValueError("must be finite")
    return val


def _opt_float(text):
    return None if text.lower() in ("none", "auto", "") else _float(text)


def _floats(text):
    parts = [p for p in text.replace(",", " ").split()]
    if not parts:
        raise ValueError("expected one or more numbers")
    return tuple(_float(p) for p in parts)


def _opt_floats(text):
    return None if text.lower() in ("none", "auto", "") else _floats(text)


def _int(text):
    return int(text)


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError("expected true or false")


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text

    return parse


def _text(text):
    return text


# key -> (parser, default)
SCHEMA = {
    "geometry.kind": (_choice(DOMAIN_KINDS), INTERVAL),
    "geometry.extent": (_floats, (1.0,)),
    "geometry.h": (_float, 1.0 / 64),
    "geometry.band_width": (_opt_float, None),
    "kernel.R": (_float, 0.1),
    "kernel.profile": (_choice(PROFILES), "bump"),
    "model.m": (_float, 0.5),
    "model.k": (_float, 1.0),
    "model.lam": (_float, 1.0),
    "model.mu": (_float, 1.0),
    "model.M11": (_float, 1.0),
    "model.M12": (_float, 0.0),
    "model.M21": (_float, 0.0),
    "model.M22": (_float, 1.0),
    "model.D_u": (_float, 1.0),
    "model.D_v": (_float, 1.0),
    "model.bc": (_choice(BC_CASES), ROBIN),
    "initial.preset": (_choice(PRESETS), "gaussian"),
    "initial.u": (_float, 0.0),
    "initial.v": (_float, 0.5),
    "initial.amplitude_u": (_float, 0.5),
    "initial.amplitude_v": (_float, 0.0),
    "initial.center_u": (_opt_floats, None),
    "initial.center_v": (_opt_floats, None),
    "initial.width": (_opt_float, None),
    "initial.noise": (_float, 0.1),
    "run.t_end": (_float, 1.0),
    "run.seed": (_int, 0),
    "run.sup_ceiling": (_opt_float, None),
    "output.dir": (_text, "out"),
    "output.snapshot_every": (_int, 100),
    "output.monitor_every": (_int, 1),
    "output.png": (_bool, False),
    "scheme.safety": (_float, 0.9),
    "scheme.integrator": (_choice(INTEGRATORS), "euler"),
    "scheme.advection": (_choice(ADVECTION_SCHEMES), "upwind"),
    "scheme.dt": (_opt_float, None),
    "stability.T": (_float, 2.0),
    "convergence.levels": (_int, 3),
    "convergence.t_end": (_float, 0.01),
    "verify.steps": (_int, 50),
}


@dataclass(frozen=True)
class SchemeSpec:
    safety: float = 0.9
    integrator: str = "euler"
    advection: str = "upwind"
    dt: float | None = None


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometrySpec
    band_width: float | None
    kernel: KernelSpec
    model: ModelParams
    initial: InitialSpec
    t_end: float
    seed: int
    sup_ceiling: float | None
    snapshot_every: int
    monitor_every: int
    output_dir: str
    png: bool
    scheme: SchemeSpec
    stability_T: float
    convergence_levels: int
    convergence_t_end: float
    verify_steps: int
    values: dict = field(repr=False, compare=False)

    def echo(self) -> str:
        lines = ["# fully resolved configuration"]
        for key in SCHEMA:
            lines.append(f"{key} = {format_value(self.values[key])}")
        return "\n".join(lines) + "\n"

    def write_echo(self, directory) -> Path:
        path = Path(directory) / ECHO_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.echo())
        return path


def format_value(val) -> str:
    if val is None:
        return "none"
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, tuple):
        return ", ".join(repr(float(v)) for v in val)
    if isinstance(val, float):
        return repr(val)
    return str(val)


def parse_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read ({exc.strerror or exc})"]) from exc
    return parse_config_text(text, str(path), overrides)


def parse_config_text(text: str, source: str = "<config>", overrides: dict | None = None) -> RunConfig:
    errors: list[str] = []
    raw: dict[str, tuple[str, str]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        where = f"{source}:{lineno}"
        if "=" not in body:
            errors.append(f"{where}: expected 'key = value', got {body!r}")
            continue
        key, val = (s.strip() for s in body.split("=", 1))
        if key not in SCHEMA:
            errors.append(f"{where}: unknown key {key!r}")
            continue
        if key in raw:
            errors.append(f"{where}: duplicate key {key!r} (first set at {raw[key][1]})")
            continue
        raw[key] = (val, where)
    for key, val in (overrides or {}).items():
        if key not in SCHEMA:
            errors.append(f"override: unknown key {key!r}")
            continue
        raw[key] = (str(val), "override")

    values = {}
    for key, (parser, default) in SCHEMA.items():
        if key not in raw:
            values[key] = default
            continue
        text_val, where = raw[key]
        try:
            values[key] = parser(text_val)
        except ValueError as exc:
            errors.append(f"{key}: invalid value {text_val!r} ({exc}) at {where}")
            values[key] = default
    errors.extend(_validate(values))
    if errors:
        raise ConfigError(errors)
    return _assemble(values)


def _aligned(length, h):
    n = round(length / h)
    return n >= 1 and abs(n * h - length) <= _ALIGN_TOL * max(length, 1.0)


def _validate(values) -> list[str]:
    errs = []
    kind = values["geometry.kind"]
    ext = values["geometry.extent"]
    h = values["geometry.h"]
    R = values["kernel.R"]
    bc = values["model.bc"]
    dims = {INTERVAL: 1, RECTANGLE: 2, DISC: 2}[kind]
    n_ext = 2 if kind == RECTANGLE else 1
    geom_ok = True
    if len(ext) != n_ext:
        errs.append(f"geometry.extent: a {kind} needs {n_ext} value(s), got {len(ext)}")
        geom_ok = False
    elif any(e <= 0 for e in ext):
        errs.append(f"geometry.extent: must be positive, got {format_value(ext)}")
        geom_ok = False
    if not h > 0:
        errs.append(f"geometry.h: must be positive, got {h}")
        geom_ok = False
    if geom_ok:
        if kind == DISC and h > ext[0] / 8 * (1 + 1e-12):
            errs.append(
                f"geometry.h: disc of radius geometry.extent = {ext[0]} needs h <= L/8 = {ext[0] / 8}, got {h}"
            )
        if kind != DISC:
            for e in ext:
                if not _aligned(e, h):
                    errs.append(f"geometry.extent: {e} is not an integer multiple of geometry.h = {h}")
    if not R > 0:
        errs.append(f"kernel.R: must be positive, got {R}")
    elif geom_ok:
        rad = inradius(kind, ext)
        if kind == DISC and R >= ext[0]:
            errs.append(
                f"kernel.R = {R} must be smaller than geometry.extent = {ext[0]} (sensing radius inside the disc)"
            )
        elif bc == ZEROZERO and kind == INTERVAL and R >= rad:
            errs.append(f"kernel.R = {R} must be smaller than half of geometry.extent = {ext[0]} for zerozero")
        bw = values["geometry.band_width"]
        if bw is not None and not 0 < bw < rad:
            errs.append(f"geometry.band_width: must lie in (0, inradius = {rad}), got {bw}")
    if bc == ZEROZERO and kind == RECTANGLE:
        errs.append(
            "model.bc = zerozero needs geometry.kind disc or interval: the shrinking sensing "
            "domain of radius min(R, L - |x|) is only defined on a ball"
        )
    if not values["model.k"] > 0:
        errs.append(f"model.k: must be positive, got {values['model.k']}")
    for key in ("model.m", "model.lam", "model.mu", "model.M11", "model.M12", "model.M21", "model.M22"):
        if values[key] < 0:
            errs.append(f"{key}: must be >= 0, got {values[key]}")
    for key in ("model.D_u", "model.D_v"):
        if not values[key] > 0:
            errs.append(f"{key}: must be positive, got {values[key]}")
    for key in ("initial.center_u", "initial.center_v"):
        c = values[key]
        if c is not None and len(c) != dims:
            errs.append(f"{key}: needs {dims} coordinate(s), got {len(c)}")
    w = values["initial.width"]
    if w is not None and not w > 0:
        errs.append(f"initial.width: must be positive, got {w}")
    if not values["run.t_end"] >= 0:
        errs.append(f"run.t_end: must be >= 0, got {values['run.t_end']}")
    if not 0 <= values["run.seed"] < 2**64:
        errs.append(f"run.seed: must be an unsigned 64-bit integer, got {values['run.seed']}")
    sc = values["run.sup_ceiling"]
    if sc is not None and not sc > 0:
        errs.append(f"run.sup_ceiling: must be positive, got {sc}")
    for key in ("output.snapshot_every", "output.monitor_every", "convergence.levels", "verify.steps"):
        if values[key] < 1:
            errs.append(f"{key}: must be >= 1, got {values[key]}")
    if not 0 < values["scheme.safety"] <= 1:
        errs.append(f"scheme.safety: must lie in (0, 1], got {values['scheme.safety']}")
    dt = values["scheme.dt"]
    if dt is not None and not dt > 0:
        errs.append(f"scheme.dt: must be positive, got {dt}")
    for key in ("stability.T", "convergence.t_end"):
        if not values[key] > 0:
            errs.append(f"{key}: must be positive, got {values[key]}")
    return errs


def _assemble(values) -> RunConfig:
    try:
        geometry = GeometrySpec(values["geometry.kind"], values["geometry.extent"], values["geometry.h"])
        case = CASE_I if values["model.bc"] == ROBIN else CASE_II
        kernel = KernelSpec(case, values["kernel.R"], values["kernel.profile"])
        M = AdhesionMatrix(values["model.M11"], values["model.M12"], values["model.M21"], values["model.M22"])
        model = ModelParams(
            m=values["model.m"],
            k=values["model.k"],
            lam=values["model.lam"],
            mu=values["model.mu"],
            M=M,
            kernel=kernel,
            D_u=values["model.D_u"],
            D_v=values["model.D_v"],
            bc=values["model.bc"],
        )
        initial = InitialSpec(
            preset=values["initial.preset"],
            u=values["initial.u"],
            v=values["initial.v"],
            amplitude_u=values["initial.amplitude_u"],
            amplitude_v=values["initial.amplitude_v"],
            center_u=values["initial.center_u"],
            center_v=values["initial.center_v"],
            width=values["initial.width"],
            noise=values["initial.noise"],
        )
    except InvalidSpecError as exc:
        raise ConfigError([str(exc)]) from exc
    return RunConfig(
        geometry=geometry,
        band_width=values["geometry.band_width"],
        kernel=kernel,
        model=model,
        initial=initial,
        t_end=values["run.t_end"],
        seed=values["run.seed"],
        sup_ceiling=values["run.sup_ceiling"],
        snapshot_every=values["output.snapshot_every"],
        monitor_every=values["output.monitor_every"],
        output_dir=values["output.dir"],
        png=values["output.png"],
        scheme=SchemeSpec(
            values["scheme.safety"], values["scheme.integrator"], values["scheme.advection"], values["scheme.dt"]
        ),
        stability_T=values["stability.T"],
        convergence_levels=values["convergence.levels"],
        convergence_t_end=values["convergence.t_end"],
        verify_steps=values["verify.steps"],
        values=dict(values),
    )


def default_band_width(config: RunConfig) -> float:
    if config.band_width is not None:
        return config.band_width
    return min(config.kernel.R, 0.5 * inradius(config.geometry.kind, config.geometry.extent))


def build_problem(config: RunConfig, geometry: GeometrySpec | None = None):
    """Geometry, stencils, parameters and initial state for ``config``."""
    spec = geometry or config.geometry
    if geometry is None:
        rho = default_band_width(config)
    else:
        rho = min(config.kernel.R, 0.5 * inradius(spec.kind, spec.extent))
    geom = build_geometry(spec, rho)
    stencils = build_stencils(geom, config.kernel)
    u0, v0 = initial_fields(config.initial, geom, config.model.k, config.seed)
    return geom, stencils, config.model, State(u0, v0, 0.0)
