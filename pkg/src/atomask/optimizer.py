"""Simplex search for the mask separation and substrate plane that minimize L."""
from __future__ import annotations

import csv
import io
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .core_model import BeamConfig, MaskConfig
from .errors import AtomaskError, ConfigError
from .io_utils import atomic_write_json, atomic_write_text
from .metrics import ThermalQuadrature, averaged_localization_factor, localization_factor
from .ray_tracer import IntegratorConfig

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_EVALS = "max_evals_exceeded"


@dataclass
class SimplexResult:
    point: np.ndarray
    value: float
    status: str
    n_evals: int
    n_iter: int

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    start,
    scale=1.0,
    f_tol: float = 1e-4,
    x_tol: float = 1e-2,
    max_evals: int = 2000,
    bounds: tuple | None = None,
) -> SimplexResult:
    """Minimize ``objective`` with the Nelder-Mead simplex method.

    Coefficients are reflection 1, expansion 2, contraction 1/2, shrink 1/2.
    Stops when the spread of simplex values drops below ``f_tol`` and every
    vertex lies within ``x_tol`` of the best one, or after ``max_evals``
    objective calls (status ``max_evals_exceeded``, best point still
    returned).  Proposals outside ``bounds = (lower, upper)`` are clamped.
    """
    x0 = np.atleast_1d(np.asarray(start, float)).copy()
    n = x0.size
    if n < 1:
        raise ConfigError("nelder_mead needs at least one parameter")
    if bounds is not None:
        lo = np.broadcast_to(np.asarray(bounds[0], float), (n,))
        hi = np.broadcast_to(np.asarray(bounds[1], float), (n,))
        if np.any(lo >= hi):
            raise ConfigError("bounds must satisfy lower < upper")

        def clamp(p):
            return np.minimum(np.maximum(p, lo), hi)
    else:
        def clamp(p):
            return p

    evals = 0

    def f(p):
        nonlocal evals
        evals += 1
        return float(objective(p))

    x0 = clamp(x0)
    steps = np.broadcast_to(np.asarray(scale, float), (n,))
    simplex = [x0]
    for i in range(n):
        v = x0.copy()
        v[i] += steps[i]
        v = clamp(v)
        if np.array_equal(v, x0):
            # start sits on the upper bound
            v[i] -= steps[i]
            v = clamp(v)
        simplex.append(v)
    simplex = np.array(simplex)
    values = np.array([f(p) for p in simplex])
    if not np.isfinite(values[0]):
        raise ConfigError("objective is not finite at the start point")

    it = 0
    status = MAX_EVALS
    while evals < max_evals:
        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]
        spread = values[-1] - values[0]
        diameter = np.max(np.linalg.norm(simplex[1:] - simplex[0], axis=1))
        if spread < f_tol and diameter < x_tol:
            status = CONVERGED
            break
        it += 1
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]

        xr = clamp(centroid + (centroid - worst))
        fr = f(xr)
        if fr < values[0]:
            xe = clamp(centroid + 2.0 * (centroid - worst))
            fe = f(xe)
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-1]:
            xc = clamp(centroid + 0.5 * (xr - centroid))
            fc = f(xc)
            accept = fc <= fr
        else:
            xc = clamp(centroid + 0.5 * (worst - centroid))
            fc = f(xc)
            accept = fc < values[-1]
        if accept:
            simplex[-1], values[-1] = xc, fc
            continue
        for i in range(1, n + 1):
            simplex[i] = clamp(simplex[0] + 0.5 * (simplex[i] - simplex[0]))
            values[i] = f(simplex[i])

    j = int(np.argmin(values))
    return SimplexResult(simplex[j].copy(), float(values[j]), status, evals, it)


@dataclass(frozen=True)
class SearchSpace:
    """Box over (z, S) and the lattice of simplex starting points."""

    z_bounds: tuple = (0.0, 3000.0)
    s_bounds: tuple = (0.0, 2500.0)
    grid: tuple = (6, 5)
    simplex_scale: float = 100.0
    f_tol: float = 1e-4
    x_tol: float = 1e-2
    max_evals: int = 400
    distinct_radius: float = 10.0

    def __post_init__(self):
        for name in ("z_bounds", "s_bounds"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ConfigError(f"search.{name} must be finite with lower < upper")
        if min(self.grid) < 1:
            raise ConfigError("search.grid entries must be >= 1")
        if self.simplex_scale <= 0:
            raise ConfigError("search.simplex_scale must be > 0")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.z_bounds[0], self.s_bounds[0]], float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.z_bounds[1], self.s_bounds[1]], float)

    def starts(self) -> list[np.ndarray]:
        """Cell centres of a grid[0] x grid[1] lattice, z varying slowest."""
        nz, ns = self.grid
        zs = self.z_bounds[0] + (np.arange(nz) + 0.5) * (self.z_bounds[1] - self.z_bounds[0]) / nz
        ss = self.s_bounds[0] + (np.arange(ns) + 0.5) * (self.s_bounds[1] - self.s_bounds[0]) / ns
        return [np.array([z, s]) for z in zs for s in ss]


@dataclass
class LocalMinimum:
    value: float
    z: float
    separation: float
    start: tuple
    status: str
    n_evals: int


@dataclass
class OptimizationResult:
    z_m: float
    s_m: float
    L_min: float
    minima: list = field(default_factory=list)
    runs: list = field(default_factory=list)
    n_evals: int = 0
    mask: MaskConfig | None = None
    beam: BeamConfig | None = None

    @property
    def converged(self) -> list[bool]:
        return [r.status == CONVERGED for r in self.runs]

    def to_dict(self) -> dict:
        def row(m: LocalMinimum):
            return {
                "value": m.value,
                "z": m.z,
                "separation": m.separation,
                "start": list(m.start),
                "status": m.status,
                "n_evals": m.n_evals,
            }

        return {
            "best": {"z": self.z_m, "separation": self.s_m, "L": self.L_min},
            "local_minima": [row(m) for m in self.minima],
            "runs": [row(m) for m in self.runs],
            "n_evals": self.n_evals,
            "mask": self.mask.to_dict() if self.mask else None,
            "beam": self.beam.to_dict() if self.beam else None,
        }

    def write_json(self, path) -> None:
        atomic_write_json(path, self.to_dict())

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["L", "z", "separation", "start_z", "start_separation", "status", "n_evals"])
        for m in self.minima:
            w.writerow([repr(m.value), repr(m.z), repr(m.separation),
                        repr(float(m.start[0])), repr(float(m.start[1])), m.status, m.n_evals])
        text = buf.getvalue()
        if path is not None:
            atomic_write_text(path, text)
        return text


class LocalizationObjective:
    """L(z, S) with a thread-safe memo keyed on rounded coordinates."""

    def __init__(self, mask, beam, quad, cfg, digits=9):
        self.mask = mask
        self.beam = beam
        self.quad = quad
        self.cfg = cfg
        self.digits = digits
        self._cache: dict = {}
        self._lock = threading.Lock()
        self.calls = 0

    def __call__(self, p) -> float:
        key = (round(float(p[0]), self.digits), round(float(p[1]), self.digits))
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        mask = self.mask.with_separation(key[1])
        if self.beam.kind == "thermal":
            val = averaged_localization_factor(key[0], mask, self.beam, self.quad, self.cfg)
        else:
            val = localization_factor(key[0], mask, self.beam, self.quad.n_x0, self.cfg)
        with self._lock:
            self.calls += 1
            # first writer wins so a value never changes once returned
            return self._cache.setdefault(key, val)


def _cluster(runs: Sequence[LocalMinimum], radius: float) -> list[LocalMinimum]:
    kept: list[LocalMinimum] = []
    for r in sorted(runs, key=lambda m: (m.value, m.z, m.separation)):
        if all(np.hypot(r.z - k.z, r.separation - k.separation) > radius for k in kept):
            kept.append(r)
    return kept


def minimize_localization(
    mask: MaskConfig,
    beam: BeamConfig,
    space: SearchSpace = SearchSpace(),
    quad: ThermalQuadrature = ThermalQuadrature(),
    cfg: IntegratorConfig = IntegratorConfig(),
    workers: int = 1,
) -> OptimizationResult:
    """Multi-start simplex search of L over (z, S); ``mask.separation`` is ignored."""
    objective = LocalizationObjective(mask, beam, quad, cfg)
    starts = space.starts()

    def run(start):
        res = nelder_mead(
            objective, start, space.simplex_scale, space.f_tol, space.x_tol,
            space.max_evals, (space.lower, space.upper),
        )
        return LocalMinimum(
            res.value, float(res.point[0]), float(res.point[1]),
            (float(start[0]), float(start[1])), res.status, res.n_evals,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(run, starts))
    else:
        runs = [run(s) for s in starts]
    minima = _cluster(runs, space.distinct_radius)
    best = minima[0]
    log.info("best L=%.4f at z=%.1f S=%.1f (%d evaluations)",
             best.value, best.z, best.separation, objective.calls)
    return OptimizationResult(
        best.z, best.separation, best.value, minima, runs, objective.calls, mask, beam
    )


@dataclass
class RatioPoint:
    ratio: float
    L_min: float
    z_m: float
    s_m: float
    error: str | None = None


def scan_intensity_ratio(
    i1: float,
    ratios: Sequence[float],
    beam: BeamConfig,
    space: SearchSpace = SearchSpace(),
    quad: ThermalQuadrature = ThermalQuadrature(),
    cfg: IntegratorConfig = IntegratorConfig(),
    base: MaskConfig = MaskConfig(),
) -> list[RatioPoint]:
    """Optimal (z, S) and minimal L for each intensity ratio i2 / i1."""
    if not i1 > 0:
        raise ConfigError("i1 must be > 0")
    out = []
    for r in ratios:
        if r < 0:
            raise ConfigError("intensity ratios must be >= 0")
        mask = replace(base, i1=float(i1), i2=float(r) * float(i1))
        try:
            res = minimize_localization(mask, beam, space, quad, cfg)
            out.append(RatioPoint(float(r), res.L_min, res.z_m, res.s_m))
        except AtomaskError as exc:
            log.warning("ratio %g failed: %s", r, exc)
            out.append(RatioPoint(float(r), float("nan"), float("nan"), float("nan"), str(exc)))
    return out


def ratio_scan_csv(points: Sequence[RatioPoint], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["I_r", "L_min", "z_m", "S_m", "error"])
    for p in points:
        w.writerow([repr(p.ratio), repr(p.L_min), repr(p.z_m), repr(p.s_m), p.error or ""])
    text = buf.getvalue()
    if path is not None:
        atomic_write_text(path, text)
    return text
