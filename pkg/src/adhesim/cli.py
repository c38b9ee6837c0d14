"""Command-line entry point: ``adhesim simulate|verify|stability|convergence``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .analysis import segregation_index
from .config import RunConfig, parse_config
from .errors import AdhesimError, ConfigError, InstabilityError
from .io import write_monitors, write_snapshot

log = logging.getLogger("adhesim")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_UNSTABLE = 3

COLORMAP = "viridis"


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON serialisable: {type(obj)}")


def _clean(obj):
    # JSON has no NaN/Inf; write them as null
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not math.isfinite(float(obj)):
        return None
    return obj


def write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def render_png(state, geom, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(8, 3.6))
    for ax, name, q in zip(axes, ("u", "v"), (state.u, state.v)):
        if geom.dimension == 1:
            ax.plot(geom.centers[:, 0], q, color="black", lw=1.2)
            ax.set_xlabel("x")
        else:
            grid = geom.to_grid(q)
            ext = [geom.origin[0], geom.origin[0] + geom.shape[0] * geom.h,
                   geom.origin[1], geom.origin[1] + geom.shape[1] * geom.h]
            im = ax.imshow(grid.T, origin="lower", extent=ext, cmap=COLORMAP)
            fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_title(f"{name}  t = {state.t:.4g}")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def _load(args) -> RunConfig:
    overrides = {}
    if args.out is not None:
        overrides["output.dir"] = args.out
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    return parse_config(args.config, overrides)


def cmd_simulate(cfg: RunConfig, out: Path, png: bool) -> int:
    from .config import build_problem
    from .dynamics import run

    problem = build_problem(cfg)
    geom, initial = problem[0], problem[3]

    def on_snapshot(i, state):
        write_snapshot(state, geom, out / f"snap_{i:05d}.adh")
        if png:
            render_png(state, geom, out / f"snap_{i:05d}.png")

    try:
        result = run(cfg, on_snapshot=on_snapshot, problem=problem)
    except InstabilityError as exc:
        monitors = getattr(exc, "monitors", None)
        if monitors is not None:
            write_monitors(monitors, out / "monitors.csv")
        write_json(out / "diagnostics.json", {"error": str(exc), **exc.diagnostics})
        log.error("run became unstable: %s", exc)
        return EXIT_UNSTABLE
    write_monitors(result.monitors, out / "monitors.csv")
    final = result.final
    vol = geom.cell_volume
    summary = {
        "steps": result.steps,
        "t": final.t,
        "clip_total": result.clip_total,
        "mass_u": float(np.sum(final.u) * vol),
        "mass_v": float(np.sum(final.v) * vol),
        "segregation_initial": segregation_index(initial, geom),
        "segregation_final": segregation_index(final, geom),
        "max_deviation_from_initial": float(
            max(np.max(np.abs(final.u - initial.u)), np.max(np.abs(final.v - initial.v)))
        ),
    }
    write_json(out / "summary.json", summary)
    log.info("finished %d steps to t = %g", result.steps, final.t)
    return EXIT_OK


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    from .verification import run_verification

    report = run_verification(cfg, out)
    write_json(out / "verify_report.json", report)
    for c in report["checks"]:
        log.info("%-20s %s  value=%s tol=%s", c["name"], "PASS" if c["passed"] else "FAIL", c["value"], c["tolerance"])
    return EXIT_OK if report["passed"] else EXIT_FAILED


def cmd_stability(cfg: RunConfig, out: Path) -> int:
    from .verification import stability_study

    write_json(out / "stability.json", stability_study(cfg))
    return EXIT_OK


def cmd_convergence(cfg: RunConfig, out: Path) -> int:
    from .verification import convergence_study

    write_json(out / "convergence.json", convergence_study(cfg))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adhesim", description="Nonlocal adhesion model simulator.")
    parser.add_argument("command", choices=("simulate", "verify", "stability", "convergence"))
    parser.add_argument("--config", required=True, help="path to a key = value configuration file")
    parser.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    parser.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed (overrides run.seed)")
    parser.add_argument("--png", action="store_true", help="also render one PNG per snapshot")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print(f"error: --seed must be an unsigned 64-bit integer, got {args.seed}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_echo(out)
    try:
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args.png or cfg.png)
        if args.command == "verify":
            return cmd_verify(cfg, out)
        if args.command == "stability":
            return cmd_stability(cfg, out)
        return cmd_convergence(cfg, out)
    except AdhesimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        write_json(out / "diagnostics.json", {"error": str(exc)})
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
