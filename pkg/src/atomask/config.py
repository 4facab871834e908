"""Run configuration: strict parsing, presets, overrides and validation."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .core_model import BASELINE, BeamConfig, MaskConfig
from .errors import ConfigError, IoError
from .metrics import ThermalQuadrature
from .optimizer import SearchSpace
from .ray_tracer import IntegratorConfig

COMMANDS = ("trajectories", "focus", "localization", "density", "optimize", "scan")

# E below this multiple of the potential maximum is flagged by validate
ENERGY_MARGIN = 1e3


@dataclass(frozen=True)
class RunParams:
    """Command-specific settings."""

    z_grid: tuple = (0.0, 3000.0, 1.0)
    z: float | None = None
    n_atoms: int = 100_000
    bins: int = 200
    seed: int = 0
    x0s: tuple | None = None
    n_rays: int = 21
    z_end: float = 1500.0
    paraxial_x0: float = 1e-3
    z_max: float | None = None
    ratios: tuple = (0.0, 1.0, 5.0, 10.0, 25.0)
    threads: int = 1

    def __post_init__(self):
        start, stop, step = self.z_grid
        if not (step > 0 and stop > start):
            raise ConfigError("run.z_grid must be (start, stop, step) with stop > start, step > 0")
        if self.n_atoms < 1 or self.bins < 1 or self.n_rays < 1:
            raise ConfigError("run.n_atoms, run.bins and run.n_rays must be >= 1")
        if self.threads < 1:
            raise ConfigError("run.threads must be >= 1")
        if any(r < 0 for r in self.ratios):
            raise ConfigError("run.ratios must be >= 0")


_SECTIONS = {
    "mask": MaskConfig,
    "beam": BeamConfig,
    "integrator": IntegratorConfig,
    "quadrature": ThermalQuadrature,
    "search": SearchSpace,
    "run": RunParams,
}
_TOP_KEYS = {"command", "preset", "output", "cases", *_SECTIONS}


def _defaults(cls) -> dict:
    out = {}
    for f in fields(cls):
        if f.default is not MISSING:
            out[f.name] = f.default
        elif f.default_factory is not MISSING:
            out[f.name] = f.default_factory()
    return out


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, list):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


def _build(cls, section: str, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(unknown)}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        if isinstance(v, list):
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        kwargs[f.name] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{section}: {exc}") from exc


@dataclass
class RunConfig:
    command: str
    mask: MaskConfig = field(default_factory=MaskConfig)
    beam: BeamConfig = field(default_factory=BeamConfig)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    quadrature: ThermalQuadrature = field(default_factory=ThermalQuadrature)
    search: SearchSpace = field(default_factory=SearchSpace)
    run: RunParams = field(default_factory=RunParams)
    output: str | None = None
    preset: str | None = None
    cases: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping")
        unknown = sorted(set(data) - _TOP_KEYS)
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
        command = data.get("command")
        if command not in COMMANDS:
            raise ConfigError(f"command must be one of {', '.join(COMMANDS)}, got {command!r}")
        sections = {k: _build(c, k, data.get(k, {}) or {}) for k, c in _SECTIONS.items()}
        cases = data.get("cases") or {}
        if not isinstance(cases, dict):
            raise ConfigError("cases must be a mapping of name -> section overrides")
        for name, over in cases.items():
            if not str(name).replace("_", "").replace("-", "").isalnum():
                raise ConfigError(f"case name {name!r} must be alphanumeric")
            if not isinstance(over, dict) or set(over) - set(_SECTIONS):
                raise ConfigError(f"case {name!r} may only override {', '.join(_SECTIONS)}")
        cfg = cls(command=command, output=data.get("output"), preset=data.get("preset"),
                  cases=copy.deepcopy(cases), **sections)
        for name in cases:
            cfg.case(name)
        return cfg

    def to_dict(self) -> dict:
        d = {"command": self.command}
        for k in _SECTIONS:
            d[k] = _plain(asdict(getattr(self, k)))
        d["output"] = self.output
        d["preset"] = self.preset
        d["cases"] = _plain(self.cases)
        return d

    def case(self, name: str) -> "RunConfig":
        """Configuration of one case: the base with that case's overrides applied."""
        base = self.to_dict()
        for section, over in self.cases[name].items():
            base[section] = {**base[section], **over}
        base["cases"] = {}
        try:
            return RunConfig.from_dict(base)
        except ConfigError as exc:
            raise ConfigError(f"case {name!r}: {exc}") from exc

    def expand(self) -> list[tuple[str | None, "RunConfig"]]:
        if not self.cases:
            return [(None, self)]
        return [(name, self.case(name)) for name in self.cases]


def _thermal(extra=None) -> dict:
    beam = {"kind": "thermal", "energy": BASELINE["energy"], "alpha0": 1e-4}
    return beam | (extra or {})


# Baseline parameters and the studied lens configurations.
PRESETS: dict[str, dict] = {
    "baseline": {"command": "localization", "mask": {"i1": 1000.0}},
    "free": {"command": "localization", "mask": {"i1": 0.0, "i2": 0.0}},
    "thin_focusing": {
        "command": "trajectories",
        "run": {"z_end": 1500.0, "n_rays": 21, "z": 700.0},
        "cases": {
            "single": {"mask": {"i1": 1000.0, "i2": 0.0}, "run": {"z": 700.0}},
            "double": {"mask": {"i1": 1000.0, "i2": 1000.0, "separation": 500.0},
                       "run": {"z": 650.0}},
        },
    },
    "thin_squeezing": {
        "command": "localization",
        "cases": {
            "single": {"mask": {"i1": 1000.0, "i2": 0.0}},
            "double": {"mask": {"i1": 1000.0, "i2": 1000.0, "separation": 1000.0}},
        },
    },
    "thin_density": {
        "command": "density",
        "cases": {
            "single": {"mask": {"i1": 1000.0, "i2": 0.0}, "run": {"z": 1300.0}},
            "double": {"mask": {"i1": 1000.0, "i2": 1000.0, "separation": 1000.0},
                       "run": {"z": 1450.0}},
        },
    },
    "ratio_scan": {
        "command": "scan",
        "mask": {"i1": 1500.0},
        "run": {"ratios": [0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 15.0, 20.0, 25.0]},
    },
    "thick_density": {
        "command": "density",
        "cases": {
            "double": {"mask": {"i1": 1500.0, "i2": 37500.0, "separation": 1500.0},
                       "run": {"z": 1550.0}},
            "single_thick": {"mask": {"i1": 37500.0, "i2": 0.0}, "run": {"z": 90.0}},
        },
    },
    "thermal_thin": {
        "command": "localization",
        "beam": _thermal(),
        "run": {"z_grid": [0.0, 2500.0, 2.0]},
        "cases": {
            "single": {"mask": {"i1": 1500.0, "i2": 0.0}, "run": {"z": 975.0}},
            "double": {"mask": {"i1": 1500.0, "i2": 1500.0, "separation": 800.0},
                       "run": {"z": 1350.0}},
        },
    },
    "thermal_thick": {
        "command": "localization",
        "beam": _thermal(),
        "run": {"z_grid": [0.0, 2500.0, 2.0]},
        "cases": {
            "single": {"mask": {"i1": 37500.0, "i2": 0.0}, "run": {"z": 160.0}},
            "double": {"mask": {"i1": 1500.0, "i2": 37500.0, "separation": 1200.0},
                       "run": {"z": 1350.0}},
        },
    },
}


def load_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "cases":
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text: str) -> tuple[list[str], object]:
    """``section.key=value`` with the value parsed as YAML (numbers, lists, ...)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from exc
    return path, value


def resolve(
    config_path=None,
    preset: str | None = None,
    command: str | None = None,
    overrides=(),
) -> RunConfig:
    """Layer preset, config file, command and key=value overrides (later wins)."""
    data: dict = {}
    file_data = load_file(config_path) if config_path else {}
    preset = preset or file_data.get("preset")
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {', '.join(PRESETS)}")
        data = merge(data, PRESETS[preset])
        data["preset"] = preset
    data = merge(data, file_data)
    if command:
        data["command"] = command
    for item in overrides:
        path, value = parse_override(item)
        node = data
        for p in path[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} descends into a non-mapping")
        node[path[-1]] = value
    return RunConfig.from_dict(data)


def validate_dict(data: dict) -> dict:
    """Collect every problem in ``data`` without running anything.

    Returns ``{"valid": bool, "errors": [...], "warnings": [...]}``.
    """
    errors: list[str] = []
    warnings: list[str] = []
    unknown = sorted(set(data) - _TOP_KEYS)
    if unknown:
        errors.append(f"unknown top-level key(s): {', '.join(unknown)}")
    if data.get("command") not in COMMANDS:
        errors.append(f"command: must be one of {', '.join(COMMANDS)}")
    built = {}
    for section, cls in _SECTIONS.items():
        sec = data.get(section, {}) or {}
        if not isinstance(sec, dict):
            errors.append(f"{section}: must be a mapping")
            continue
        for k in sorted(set(sec) - {f.name for f in fields(cls)}):
            errors.append(f"{section}.{k}: unknown key")
        merged = _defaults(cls) | {k: v for k, v in sec.items() if k in {f.name for f in fields(cls)}}
        # check field by field so that every bad value is reported
        for name in sec:
            if name not in merged:
                continue
            try:
                _build(cls, section, {name: merged[name]})
            except ConfigError as exc:
                errors.append(f"{section}.{name}: {exc}")
            except Exception as exc:  # noqa: BLE001 - wrong types surface here
                errors.append(f"{section}.{name}: {exc}")
        try:
            built[section] = _build(cls, section, {k: v for k, v in sec.items() if k in merged})
        except Exception as exc:  # noqa: BLE001
            if not any(e.startswith(f"{section}.") for e in errors):
                errors.append(f"{section}: {exc}")
    cases = data.get("cases") or {}
    if isinstance(cases, dict):
        for name, over in cases.items():
            if not isinstance(over, dict):
                errors.append(f"cases.{name}: must be a mapping")
                continue
            sub = {k: v for k, v in data.items() if k != "cases"}
            sub = merge(sub, over)
            rep = validate_dict(sub)
            errors += [f"cases.{name}: {e}" for e in rep["errors"]]
            warnings += [f"cases.{name}: {w}" for w in rep["warnings"]]
    if "mask" in built and "beam" in built:
        u_max = built["mask"].max_potential()
        energy = built["beam"].energy
        if u_max > 0 and energy <= ENERGY_MARGIN * u_max:
            warnings.append(
                f"beam.energy={energy:g} is not >> U_max={u_max:.6g} "
                f"(ratio {energy / u_max:.3g}); trajectories may reflect"
            )
    if "search" in built and "mask" in built:
        z_start = -built.get("integrator", IntegratorConfig()).z_start_factor * built["mask"].sigma_z
        if built["search"].z_bounds[1] <= z_start:
            errors.append("search.z_bounds: upper bound lies before the integration start")
    if "run" in built and built["run"].z is not None and not math.isfinite(built["run"].z):
        errors.append("run.z: must be finite")
    return {"valid": not errors, "errors": errors, "warnings": warnings}
