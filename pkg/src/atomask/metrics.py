"""Localization factor, deposition histograms and paraxial focal points."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import bisect

from .core_model import PERIOD, WAVENUMBER, BeamConfig, MaskConfig
from .errors import ConfigError, NoFocus
from .io_utils import atomic_write_json, atomic_write_text
from .ray_tracer import IntegratorConfig, propagate, propagate_batch

# rays handed to the compiled integrator at a time; fixed so that partial
# sums are always formed in the same order
CHUNK = 4096


def thermal_density(v, alpha, v0: float, alpha0: float):
    """Joint density of longitudinal speed ``v`` and slope ``alpha`` in a thermal beam.

    The ``v**3`` flux factor times the Gaussian in transverse velocity
    ``alpha * v``, normalized to one over v >= 0 and all alpha.
    """
    v = np.asarray(v, float)
    alpha = np.asarray(alpha, float)
    norm = 1.0 / (2.0 * math.sqrt(2.0 * math.pi) * alpha0 * v0**5)
    return norm * v**4 * np.exp(-(v * v) / (2.0 * v0 * v0) * (1.0 + (alpha / alpha0) ** 2))


def x0_nodes(n: int) -> np.ndarray:
    """Midpoint nodes over one standing-wave period [-1/4, 1/4)."""
    if n < 1:
        raise ConfigError("x0 node count must be >= 1")
    return (np.arange(n) + 0.5) / n * PERIOD - PERIOD / 2


@dataclass(frozen=True)
class ThermalQuadrature:
    """Tensor-product rule for the thermal average.

    Speeds use Gauss-Legendre with ``n_v`` nodes on each of the panels
    (0, v_split * v0] and (v_split * v0, v_cut * v0]; slow atoms give a
    rough integrand and the break keeps it away from the smooth part.
    ``v_split=None`` uses one panel over (0, v_cut * v0].  At every speed the
    slopes use Gauss-Hermite nodes matched to the Gaussian slope density,
    whose width is ``alpha0 * v0 / v``.  Initial positions use the midpoint
    rule.
    """

    n_x0: int = 200
    n_v: int = 24
    n_alpha: int = 16
    v_cut: float = 6.0
    v_split: float | None = 1.0

    def __post_init__(self):
        if min(self.n_x0, self.n_v, self.n_alpha) < 1:
            raise ConfigError("quadrature node counts must be >= 1")
        if not self.v_cut > 0:
            raise ConfigError("quadrature.v_cut must be > 0")
        if self.v_split is not None and not 0 < self.v_split < self.v_cut:
            raise ConfigError("quadrature.v_split must lie in (0, v_cut)")

    def speed_nodes(self, v0: float):
        gv, wv = np.polynomial.legendre.leggauss(self.n_v)
        cuts = [0.0, self.v_cut] if self.v_split is None else [0.0, self.v_split, self.v_cut]
        v, w = [], []
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            half = 0.5 * (hi - lo) * v0
            v.append(lo * v0 + half * (gv + 1.0))
            w.append(half * wv)
        return np.concatenate(v), np.concatenate(w)

    def velocity_nodes(self, beam: BeamConfig):
        """Flattened (v, alpha, weight) arrays; weights include the density."""
        v0, a0 = beam.v0, beam.alpha0
        v, wv = self.speed_nodes(v0)
        # slope integral is exact in the Gaussian factor; the marginal in v is
        # v^3 exp(-v^2 / 2 v0^2) / (2 v0^4)
        marginal = wv * v**3 * np.exp(-(v * v) / (2.0 * v0 * v0)) / (2.0 * v0**4)
        t, wt = np.polynomial.hermite.hermgauss(self.n_alpha)
        alpha = np.sqrt(2.0) * t[None, :] * (a0 * v0 / v)[:, None]
        w = marginal[:, None] * (wt / np.sqrt(np.pi))[None, :]
        vv = np.broadcast_to(v[:, None], alpha.shape)
        return vv.ravel().copy(), alpha.ravel().copy(), w.ravel().copy()

    def normalization(self, beam: BeamConfig) -> float:
        return float(self.velocity_nodes(beam)[2].sum())

    def to_dict(self) -> dict:
        return asdict(self)


# thermal nodes slower than this multiple of the barrier height are dropped
SLOW_NODE_FACTOR = 10.0


def _ray_set(beam, n_x0, quad, mirror, mask=None):
    """Initial conditions and weights (x0, E, alpha, w) for a quadrature average.

    Thermal nodes whose energy is below ``SLOW_NODE_FACTOR`` times the
    potential maximum of ``mask`` are removed; their weight is negligible and
    such atoms would be reflected or channelled rather than transmitted.

    With ``mirror`` the pair (x0, alpha), (-x0, -alpha) is represented by one
    ray of double weight; their trajectories are exact mirror images and
    contribute the same cos(2 k x).
    """
    x0 = x0_nodes(n_x0)
    if beam.kind == "monoenergetic":
        v = np.array([beam.energy])
        alpha = np.array([beam.alpha_in])
        w = np.ones(1)
        energies = v
    else:
        quad = quad or ThermalQuadrature(n_x0=n_x0)
        vv, alpha, w = quad.velocity_nodes(beam)
        energies = vv * vv * (1.0 + alpha * alpha)
        if mask is not None:
            fast = energies > SLOW_NODE_FACTOR * mask.max_potential()
            alpha, w, energies = alpha[fast], w[fast], energies[fast]
    xs = np.repeat(x0[None, :], alpha.size, 0)
    es = np.repeat(energies[:, None], x0.size, 1)
    al = np.repeat(alpha[:, None], x0.size, 1)
    ws = np.repeat(w[:, None] / x0.size, x0.size, 1)
    xs, es, al, ws = xs.ravel(), es.ravel(), al.ravel(), ws.ravel()
    if mirror and n_x0 % 2 == 0 and _symmetric(alpha):
        keep = xs > 0
        xs, es, al, ws = xs[keep], es[keep], al[keep], 2.0 * ws[keep]
    return xs, es, al, ws


def _symmetric(alpha: np.ndarray) -> bool:
    return bool(np.all(alpha == 0)) or np.array_equal(np.sort(alpha), np.sort(-alpha))


def _weighted_cos(x0s, energies, alphas, weights, z_grid, mask, cfg):
    """sum_i w_i cos(2 k x_i(z)) on the grid, in fixed chunk order."""
    acc = np.zeros(np.size(z_grid))
    for s in range(0, x0s.size, CHUNK):
        sl = slice(s, s + CHUNK)
        xs = propagate_batch(x0s[sl], energies[sl], alphas[sl], z_grid, mask, cfg)
        acc += (weights[sl, None] * np.cos(2.0 * WAVENUMBER * xs)).sum(axis=0)
    return acc


@dataclass
class LocalizationCurve:
    z_grid: np.ndarray
    L_values: np.ndarray
    beam: BeamConfig
    mask: MaskConfig
    quadrature: dict = field(default_factory=dict)

    def minimum(self) -> tuple[float, float]:
        """(z, L) at the smallest sampled L, refined by a parabola through neighbours."""
        j = int(np.argmin(self.L_values))
        z, L = float(self.z_grid[j]), float(self.L_values[j])
        if 0 < j < self.z_grid.size - 1:
            z0, z1, z2 = self.z_grid[j - 1 : j + 2]
            f0, f1, f2 = self.L_values[j - 1 : j + 2]
            den = (z1 - z0) * (f1 - f2) - (z1 - z2) * (f1 - f0)
            if den != 0:
                zv = z1 - 0.5 * ((z1 - z0) ** 2 * (f1 - f2) - (z1 - z2) ** 2 * (f1 - f0)) / den
                if z0 < zv < z2:
                    a = ((f2 - f1) / (z2 - z1) - (f1 - f0) / (z1 - z0)) / (z2 - z0)
                    b = (f1 - f0) / (z1 - z0) - a * (z1 + z0)
                    c = f1 - a * z1 * z1 - b * z1
                    Lv = a * zv * zv + b * zv + c
                    if Lv <= L:
                        z, L = float(zv), float(Lv)
        return z, L

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["z", "L"])
        for z, L in zip(self.z_grid, self.L_values):
            w.writerow([repr(float(z)), repr(float(L))])
        text = buf.getvalue()
        if path is not None:
            atomic_write_text(path, text)
        return text

    def sidecar(self) -> dict:
        return {
            "beam": self.beam.to_dict(),
            "mask": self.mask.to_dict(),
            "quadrature": self.quadrature,
            "points": int(self.z_grid.size),
        }

    def write(self, csv_path, json_path=None) -> None:
        self.to_csv(csv_path)
        if json_path is not None:
            atomic_write_json(json_path, self.sidecar())


def localization_factor(
    z,
    mask: MaskConfig,
    beam: BeamConfig = BeamConfig(),
    n_x0: int = 200,
    cfg: IntegratorConfig = IntegratorConfig(),
    mirror: bool = True,
):
    """Localization factor 1 - <cos 2kx> of a monoenergetic beam at plane(s) ``z``.

    Returns a float for scalar ``z`` and an array for an increasing grid.
    """
    if beam.kind != "monoenergetic":
        raise ConfigError("localization_factor needs a monoenergetic beam")
    return _localization(z, mask, beam, n_x0, None, cfg, mirror)


def averaged_localization_factor(
    z,
    mask: MaskConfig,
    beam: BeamConfig,
    quad: ThermalQuadrature = ThermalQuadrature(),
    cfg: IntegratorConfig = IntegratorConfig(),
    mirror: bool = True,
):
    """Thermal-beam localization factor averaged over x0, speed and slope.

    The quadrature weights are renormalized to sum to one, which removes the
    truncation error of the finite speed/slope window from the average.
    """
    if beam.kind != "thermal":
        raise ConfigError("averaged_localization_factor needs a thermal beam")
    return _localization(z, mask, beam, quad.n_x0, quad, cfg, mirror)


def _localization(z, mask, beam, n_x0, quad, cfg, mirror):
    scalar = np.ndim(z) == 0
    zg = np.atleast_1d(np.asarray(z, float))
    x0s, es, al, ws = _ray_set(beam, n_x0, quad, mirror, mask)
    L = 1.0 - _weighted_cos(x0s, es, al, ws, zg, mask, cfg) / ws.sum()
    # fixed-node sums can stray past the bounds by rounding
    L = np.clip(L, 0.0, 2.0)
    return float(L[0]) if scalar else L


def localization_curve(
    z_grid,
    mask: MaskConfig,
    beam: BeamConfig,
    quad: ThermalQuadrature = ThermalQuadrature(),
    cfg: IntegratorConfig = IntegratorConfig(),
) -> LocalizationCurve:
    zg = np.asarray(z_grid, float)
    if beam.kind == "monoenergetic":
        L = localization_factor(zg, mask, beam, quad.n_x0, cfg)
        qd = {"n_x0": quad.n_x0, "rule": "midpoint"}
    else:
        L = averaged_localization_factor(zg, mask, beam, quad, cfg)
        qd = quad.to_dict() | {"normalization": quad.normalization(beam)}
    return LocalizationCurve(zg, np.atleast_1d(L), beam, mask, qd)


def fold(x):
    """Reduce positions modulo the half-wavelength period into [-1/4, 1/4)."""
    return np.mod(np.asarray(x, float) + PERIOD / 2, PERIOD) - PERIOD / 2


@dataclass
class DensityHistogram:
    edges: np.ndarray
    density: np.ndarray
    n_atoms: int
    z: float
    seed: int | None = None

    @property
    def bins(self) -> int:
        return self.density.size

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def integral(self) -> float:
        return float(np.sum(self.density * np.diff(self.edges)))

    def at(self, x) -> float:
        """Density of the bin holding the folded position ``x``."""
        j = int(np.searchsorted(self.edges, float(fold(x)), side="right") - 1)
        return float(self.density[min(max(j, 0), self.bins - 1)])

    def midpoint_density(self) -> float:
        """Mean of the two edge bins, i.e. the background at x = +-1/4."""
        return 0.5 * float(self.density[0] + self.density[-1])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "density"])
        for x, d in zip(self.centers, self.density):
            w.writerow([repr(float(x)), repr(float(d))])
        text = buf.getvalue()
        if path is not None:
            atomic_write_text(path, text)
        return text

    def sidecar(self) -> dict:
        return {"n_atoms": self.n_atoms, "z": self.z, "bins": self.bins, "seed": self.seed}


def sample_thermal(beam: BeamConfig, n: int, rng: np.random.Generator):
    """Draw (v, alpha) pairs from the thermal density."""
    # v^3 exp(-v^2/2v0^2) dv becomes a Gamma(2) law in u = v^2 / (2 v0^2)
    u = rng.gamma(2.0, 1.0, n)
    v = beam.v0 * np.sqrt(2.0 * u)
    alpha = rng.normal(0.0, 1.0, n) * beam.alpha0 * beam.v0 / v
    return v, alpha


def deposition_density(
    z: float,
    mask: MaskConfig,
    beam: BeamConfig,
    n_atoms: int = 100_000,
    bins: int = 200,
    seed: int = 0,
    cfg: IntegratorConfig = IntegratorConfig(),
) -> DensityHistogram:
    """Histogram of folded atom positions at plane ``z``.

    Atoms start uniformly over one period; thermal beams also draw (v, alpha)
    from the thermal density.  Normalized so the density integrates to one.
    """
    if n_atoms < 1 or bins < 1:
        raise ConfigError("n_atoms and bins must be positive")
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(-PERIOD / 2, PERIOD / 2, n_atoms)
    if beam.kind == "thermal":
        v, alpha = sample_thermal(beam, n_atoms, rng)
        energies = v * v * (1.0 + alpha * alpha)
    else:
        energies = np.full(n_atoms, beam.energy)
        alpha = np.full(n_atoms, beam.alpha_in)
    zg = np.array([float(z)])
    finals = np.empty(n_atoms)
    for s in range(0, n_atoms, CHUNK):
        sl = slice(s, s + CHUNK)
        finals[sl] = propagate_batch(x0[sl], energies[sl], alpha[sl], zg, mask, cfg)[:, 0]
    edges = np.linspace(-PERIOD / 2, PERIOD / 2, bins + 1)
    counts, _ = np.histogram(fold(finals), bins=edges)
    density = counts / (n_atoms * np.diff(edges))
    return DensityHistogram(edges, density, int(n_atoms), float(z), seed)


def find_linear_focus(
    mask: MaskConfig,
    beam: BeamConfig = BeamConfig(),
    x0: float = 1e-3,
    z_max: float | None = None,
    cfg: IntegratorConfig = IntegratorConfig(),
) -> float:
    """First axis crossing of a paraxial ray behind the last layer's leading edge."""
    if beam.kind != "monoenergetic":
        raise ConfigError("find_linear_focus needs a monoenergetic beam")
    if mask.is_free:
        raise NoFocus("no light field")
    z_lo = mask.last_layer - mask.sigma_z
    if z_max is None:
        z_max = mask.last_layer + 50.0 * mask.sigma_z
    tr = propagate(x0, beam.energy, beam.alpha_in, z_max, mask, cfg)
    s = np.sign(tr.x)
    for j in np.flatnonzero(s[:-1] != s[1:]):
        a, b = max(tr.z[j], z_lo), tr.z[j + 1]
        if b <= z_lo:
            continue
        xa, xb = tr.at(a)[0], tr.at(b)[0]
        if xa == 0.0:
            return float(a)
        if np.sign(xa) == np.sign(xb):
            continue
        return float(bisect(lambda t: tr.at(t)[0], a, b, xtol=1e-9))
    raise NoFocus(f"paraxial ray does not cross the axis before z={z_max:g}")


