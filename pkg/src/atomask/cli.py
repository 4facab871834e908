"""Command-line front end.

    atomask <command> [--config FILE] [--preset NAME] [--out DIR]
                      [--threads N] [--seed N] [key=value ...]
    atomask validate --config FILE
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import COMMANDS, PRESETS, RunConfig, load_file, merge, resolve, validate_dict
from .errors import AtomaskError, ComputeError, ConfigError, IoError
from .io_utils import atomic_write_json, atomic_write_text
from .metrics import deposition_density, find_linear_focus, localization_curve
from .optimizer import minimize_localization, ratio_scan_csv, scan_intensity_ratio
from .ray_tracer import propagate, set_threads

log = logging.getLogger("atomask")

EXIT_CODES = {ConfigError: 2, ComputeError: 3, IoError: 4}


def z_grid(spec) -> np.ndarray:
    start, stop, step = (float(v) for v in spec)
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


def _run_case(cfg: RunConfig, out: Path) -> dict:
    cmd, mask, beam, run = cfg.command, cfg.mask, cfg.beam, cfg.run
    if cmd != "trajectories" and beam.kind == "monoenergetic":
        beam.check_against(mask)
    if cmd == "trajectories":
        x0s = run.x0s if run.x0s is not None else np.linspace(-0.25, 0.25, run.n_rays)
        files = []
        for i, x0 in enumerate(x0s):
            tr = propagate(float(x0), beam.energy, beam.alpha_in, run.z_end, mask, cfg.integrator)
            name = f"traj_{i}.csv"
            tr.to_csv(out / name)
            files.append(name)
        return {"files": files}
    if cmd == "focus":
        z_f = find_linear_focus(mask, beam, run.paraxial_x0, run.z_max, cfg.integrator)
        atomic_write_json(out / "focus.json", {"z_f": z_f, "x0": run.paraxial_x0})
        return {"z_f": z_f}
    if cmd == "localization":
        curve = localization_curve(z_grid(run.z_grid), mask, beam, cfg.quadrature, cfg.integrator)
        z_m, L_m = curve.minimum()
        curve.to_csv(out / "curve.csv")
        atomic_write_json(out / "curve.json", curve.sidecar() | {"minimum": {"z": z_m, "L": L_m}})
        return {"z_m": z_m, "L_min": L_m}
    if cmd == "density":
        if run.z is None:
            raise ConfigError("run.z (observation plane) is required for density")
        hist = deposition_density(run.z, mask, beam, run.n_atoms, run.bins, run.seed, cfg.integrator)
        hist.to_csv(out / "density.csv")
        atomic_write_json(out / "density.json", hist.sidecar())
        return {"midpoint_density": hist.midpoint_density()}
    if cmd == "optimize":
        res = minimize_localization(mask, beam, cfg.search, cfg.quadrature, cfg.integrator)
        res.write_json(out / "optimum.json")
        res.to_csv(out / "optimum.csv")
        return {"z_m": res.z_m, "S_m": res.s_m, "L_min": res.L_min}
    if cmd == "scan":
        pts = scan_intensity_ratio(
            mask.i1, run.ratios, beam, cfg.search, cfg.quadrature, cfg.integrator, mask
        )
        ratio_scan_csv(pts, out / "scan.csv")
        return {"points": len(pts), "failed": sum(p.error is not None for p in pts)}
    raise ConfigError(f"unknown command {cmd!r}")


def output_dir(cli_out, cfg: RunConfig) -> Path:
    if cli_out:
        return Path(cli_out)
    if cfg.output:
        return Path(cfg.output)
    root = Path(os.environ.get("ATOMASK_OUT", "atomask_out"))
    return root / (cfg.preset or cfg.command)


def run(cfg: RunConfig, out: Path) -> dict:
    """Execute ``cfg`` and write every artifact below ``out``."""
    set_threads(cfg.run.threads)
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.to_dict()
    resolved["output"] = None
    atomic_write_json(out / "resolved_config.json", resolved)
    summary = {}
    for name, case in cfg.expand():
        target = out / name if name else out
        target.mkdir(parents=True, exist_ok=True)
        log.info("running %s%s", cfg.command, f" [{name}]" if name else "")
        summary[name or cfg.command] = _run_case(case, target)
    return summary


def _error_payload(exc: BaseException) -> dict:
    return {"error": type(exc).__name__, "message": str(exc)}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="atomask", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=(*COMMANDS, "validate"))
    p.add_argument("overrides", nargs="*", metavar="key=value",
                   help="dotted overrides, e.g. mask.i1=1500 run.z=1450")
    p.add_argument("--config", help="YAML or JSON run configuration")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--out", help="output directory (default $ATOMASK_OUT/<preset|command>)")
    p.add_argument("--threads", type=int, help="cap on worker threads")
    p.add_argument("--seed", type=int, help="random seed for density sampling")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"atomask {__version__}")
    return p


def validate(path) -> dict:
    """Report every violation in a configuration file (IoError if unreadable)."""
    try:
        data = load_file(path)
    except ConfigError as exc:
        return {"valid": False, "errors": [str(exc)], "warnings": []}
    if data.get("preset"):
        if data["preset"] not in PRESETS:
            return {"valid": False, "errors": [f"preset: unknown {data['preset']!r}"], "warnings": []}
        data = merge(PRESETS[data["preset"]], data)
    return validate_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_intermixed_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "validate":
        if not args.config:
            print(json.dumps({"error": "ConfigError", "message": "--config is required"}),
                  file=sys.stderr)
            return 2
        try:
            report = validate(args.config)
        except IoError as exc:
            print(json.dumps(_error_payload(exc)), file=sys.stderr)
            return 4
        print(json.dumps(report, indent=2))
        return 0 if report["valid"] else 1

    out = None
    try:
        overrides = list(args.overrides)
        if args.threads is not None:
            overrides.append(f"run.threads={args.threads}")
        if args.seed is not None:
            overrides.append(f"run.seed={args.seed}")
        cfg = resolve(args.config, args.preset, args.command, overrides)
        out = output_dir(args.out, cfg)
        summary = run(cfg, out)
    except AtomaskError as exc:
        code = next((c for t, c in EXIT_CODES.items() if isinstance(exc, t)), 1)
        payload = _error_payload(exc)
        print(json.dumps(payload), file=sys.stderr)
        if out is not None:
            try:
                atomic_write_text(out / "error.json", json.dumps(payload, indent=2) + "\n")
            except IoError:
                pass
        return code
    print(json.dumps({"output": str(out), "results": summary}, indent=2, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
