"""Atom trajectories through the light mask.

The production propagator integrates the ray equations in z,

    dx/dz = alpha
    dalpha/dz = (1 + alpha^2) / (2 (E - U)) * (alpha dU/dz - c dU/dx)

with ``c = 1`` (form obtained by eliminating time from Newton's equations) or
``c = 1 + alpha^2`` (the alternative written form, selectable for comparison).
Stepping uses the Dormand-Prince 5(4) pair compiled with numba; values between
accepted steps come from cubic Hermite interpolation.

``oracle_propagate_2d`` integrates Newton's equations in time with scipy's
DOP853 instead, and serves as an independent check.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from numba import njit, prange
from scipy.integrate import solve_ivp

from .core_model import MaskConfig, field_kernel, potential, potential_gradient
from .errors import ConfigError, RayError, SingularEnergy, StepLimitExceeded

# the TBB layer shipped with some numba builds is too old and only warns
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

ENERGY_GUARD = 1e-9

_OK, _SINGULAR, _STEP_LIMIT = 0, 1, 2

# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71 / 57600,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    z_start_factor: float = 4.0
    max_steps: int = 100_000
    # largest step allowed while inside the light field, in units of sigma_z
    max_step_in_field: float = 0.25
    # also multiply U_x by (1 + alpha^2); the default follows Newton's equations
    scaled_transverse_force: bool = False

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ConfigError("integrator tolerances must be > 0")
        if self.z_start_factor < 3:
            raise ConfigError("integrator.z_start_factor must be >= 3")
        if self.max_steps < 1:
            raise ConfigError("integrator.max_steps must be >= 1")
        if not self.max_step_in_field > 0:
            raise ConfigError("integrator.max_step_in_field must be > 0")

    def z_start(self, mask: MaskConfig) -> float:
        return -self.z_start_factor * mask.sigma_z

    def halved(self) -> "IntegratorConfig":
        return IntegratorConfig(
            self.rel_tol / 2,
            self.abs_tol / 2,
            self.z_start_factor,
            self.max_steps,
            self.max_step_in_field,
            self.scaled_transverse_force,
        )


@dataclass(frozen=True)
class RayState:
    x: float
    alpha: float
    z: float


@njit(cache=True)
def _slope_rhs(z, x, a, energy, pref, i1, i2, sep, sig, delta, scaled):
    u, u_x, u_z = field_kernel(x, z, pref, i1, i2, sep, sig, delta)
    kin = energy - u
    if kin <= ENERGY_GUARD * energy:
        return a, 0.0, False
    q = 1.0 + a * a
    c = q if scaled else 1.0
    return a, q / (2.0 * kin) * (a * u_z - c * u_x), True


@njit(cache=True)
def _hermite(theta, h, y0, y1, d0, d1):
    t2 = theta * theta
    t3 = t2 * theta
    return (
        (2 * t3 - 3 * t2 + 1) * y0
        + (t3 - 2 * t2 + theta) * h * d0
        + (-2 * t3 + 3 * t2) * y1
        + (t3 - t2) * h * d1
    )


@njit(cache=True)
def _integrate_ray(
    x0, a0, energy, z0, zgrid, pref, i1, i2, sep, sig, delta,
    rtol, atol, hmax, field_end, max_steps, scaled, record,
):
    n = zgrid.size
    xg = np.empty(n)
    ag = np.empty(n)
    cap = max_steps + 1 if record else 1
    rz = np.empty(cap)
    rx = np.empty(cap)
    ra = np.empty(cap)
    rf = np.empty(cap)

    k = 0
    while k < n and zgrid[k] <= z0:
        xg[k] = x0 + a0 * (zgrid[k] - z0)
        ag[k] = a0
        k += 1
    z_end = zgrid[n - 1] if n > 0 else z0

    z, x, a = z0, x0, a0
    fx, fa, ok = _slope_rhs(z, x, a, energy, pref, i1, i2, sep, sig, delta, scaled)
    if not ok:
        return xg, ag, _SINGULAR, 0, rz, rx, ra, rf, 0
    nrec = 0
    if record:
        rz[0], rx[0], ra[0], rf[0] = z, x, a, fa
        nrec = 1

    h = min(hmax, 0.1 * hmax + 1.0)
    steps = 0
    while z < z_end:
        if steps >= max_steps:
            return xg, ag, _STEP_LIMIT, steps, rz, rx, ra, rf, nrec
        if z < field_end and h > hmax:
            h = hmax
        last = False
        if z + h >= z_end:
            h = z_end - z
            last = True

        k2x, k2a, ok2 = _slope_rhs(z + _C2 * h, x + h * _A21 * fx, a + h * _A21 * fa,
                                   energy, pref, i1, i2, sep, sig, delta, scaled)
        k3x, k3a, ok3 = _slope_rhs(z + _C3 * h, x + h * (_A31 * fx + _A32 * k2x),
                                   a + h * (_A31 * fa + _A32 * k2a),
                                   energy, pref, i1, i2, sep, sig, delta, scaled)
        k4x, k4a, ok4 = _slope_rhs(z + _C4 * h, x + h * (_A41 * fx + _A42 * k2x + _A43 * k3x),
                                   a + h * (_A41 * fa + _A42 * k2a + _A43 * k3a),
                                   energy, pref, i1, i2, sep, sig, delta, scaled)
        k5x, k5a, ok5 = _slope_rhs(
            z + _C5 * h,
            x + h * (_A51 * fx + _A52 * k2x + _A53 * k3x + _A54 * k4x),
            a + h * (_A51 * fa + _A52 * k2a + _A53 * k3a + _A54 * k4a),
            energy, pref, i1, i2, sep, sig, delta, scaled)
        k6x, k6a, ok6 = _slope_rhs(
            z + h,
            x + h * (_A61 * fx + _A62 * k2x + _A63 * k3x + _A64 * k4x + _A65 * k5x),
            a + h * (_A61 * fa + _A62 * k2a + _A63 * k3a + _A64 * k4a + _A65 * k5a),
            energy, pref, i1, i2, sep, sig, delta, scaled)
        xn = x + h * (_B1 * fx + _B3 * k3x + _B4 * k4x + _B5 * k5x + _B6 * k6x)
        an = a + h * (_B1 * fa + _B3 * k3a + _B4 * k4a + _B5 * k5a + _B6 * k6a)
        zn = z_end if last else z + h
        k7x, k7a, ok7 = _slope_rhs(zn, xn, an, energy, pref, i1, i2, sep, sig, delta, scaled)
        steps += 1
        if not (ok2 and ok3 and ok4 and ok5 and ok6 and ok7):
            return xg, ag, _SINGULAR, steps, rz, rx, ra, rf, nrec

        ex = h * (_E1 * fx + _E3 * k3x + _E4 * k4x + _E5 * k5x + _E6 * k6x + _E7 * k7x)
        ea = h * (_E1 * fa + _E3 * k3a + _E4 * k4a + _E5 * k5a + _E6 * k6a + _E7 * k7a)
        sx = atol + rtol * max(abs(x), abs(xn))
        sa = atol + rtol * max(abs(a), abs(an))
        err = max(abs(ex) / sx, abs(ea) / sa)
        if not (err == err):
            return xg, ag, _SINGULAR, steps, rz, rx, ra, rf, nrec

        if err <= 1.0:
            while k < n and zgrid[k] <= zn:
                theta = (zgrid[k] - z) / h
                xg[k] = _hermite(theta, h, x, xn, fx, k7x)
                ag[k] = _hermite(theta, h, a, an, fa, k7a)
                k += 1
            z, x, a, fx, fa = zn, xn, an, k7x, k7a
            if record:
                rz[nrec], rx[nrec], ra[nrec], rf[nrec] = z, x, a, fa
                nrec += 1
            fac = 5.0 if err == 0.0 else min(5.0, 0.9 * err ** -0.2)
            h = h * fac
        else:
            h = h * max(0.2, 0.9 * err ** -0.2)
    while k < n:
        xg[k] = x
        ag[k] = a
        k += 1
    return xg, ag, _OK, steps, rz, rx, ra, rf, nrec


@njit(cache=True, parallel=True)
def _integrate_batch(
    x0s, a0s, energies, z0, zgrid, pref, i1, i2, sep, sig, delta,
    rtol, atol, hmax, field_end, max_steps, scaled,
):
    m = x0s.size
    xs = np.empty((m, zgrid.size))
    alphas = np.empty((m, zgrid.size))
    status = np.empty(m, dtype=np.int64)
    for j in prange(m):
        xg, ag, st, _, _, _, _, _, _ = _integrate_ray(
            x0s[j], a0s[j], energies[j], z0, zgrid, pref, i1, i2, sep, sig, delta,
            rtol, atol, hmax, field_end, max_steps, scaled, False,
        )
        xs[j, :] = xg
        alphas[j, :] = ag
        status[j] = st
    return xs, alphas, status


def _raise_status(status, energy, steps):
    if status == _SINGULAR:
        raise SingularEnergy(f"E - U fell below {ENERGY_GUARD:g} E (E={energy:g})")
    if status == _STEP_LIMIT:
        raise StepLimitExceeded(f"max_steps={steps} reached before z_end")


def _kernel_args(mask: MaskConfig, cfg: IntegratorConfig):
    hmax = cfg.max_step_in_field * mask.sigma_z
    field_end = mask.last_layer + cfg.z_start_factor * mask.sigma_z
    return hmax, field_end


@dataclass
class Trajectory:
    """Accepted integrator steps of one ray plus its launch record.

    ``slope_derivative`` holds dalpha/dz at each sample, which makes the cubic
    Hermite interpolation in ``at`` consistent with the integrator's own.
    """

    z: np.ndarray
    x: np.ndarray
    alpha: np.ndarray
    slope_derivative: np.ndarray
    x0: float
    energy: float
    alpha_in: float
    velocity: float = field(init=False)

    def __post_init__(self):
        self.velocity = math.sqrt(self.energy / (1.0 + self.alpha_in**2))

    @property
    def final(self) -> RayState:
        return RayState(float(self.x[-1]), float(self.alpha[-1]), float(self.z[-1]))

    def at(self, z):
        """Interpolated (x, alpha) at ``z`` (scalar or array) inside the sampled range."""
        zq = np.atleast_1d(np.asarray(z, float))
        if np.any(zq < self.z[0]) or np.any(zq > self.z[-1]):
            raise ValueError("z outside the integrated range")
        j = np.clip(np.searchsorted(self.z, zq, side="right") - 1, 0, self.z.size - 2)
        h = self.z[j + 1] - self.z[j]
        theta = (zq - self.z[j]) / h
        xq = _hermite.py_func(theta, h, self.x[j], self.x[j + 1], self.alpha[j], self.alpha[j + 1])
        aq = _hermite.py_func(
            theta, h, self.alpha[j], self.alpha[j + 1],
            self.slope_derivative[j], self.slope_derivative[j + 1],
        )
        if np.ndim(z) == 0:
            return float(xq[0]), float(aq[0])
        return xq, aq

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(
            f"# x0={self.x0!r} v={self.velocity!r} alpha_in={self.alpha_in!r} E={self.energy!r}\n"
        )
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["z", "x", "alpha"])
        for row in zip(self.z, self.x, self.alpha):
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            from .io_utils import atomic_write_text

            atomic_write_text(path, text)
        return text


def propagate(
    x0: float,
    energy: float,
    alpha_in: float,
    z_end: float,
    mask: MaskConfig,
    cfg: IntegratorConfig = IntegratorConfig(),
) -> Trajectory:
    """Trace one atom from z_start = -z_start_factor * sigma_z to ``z_end``."""
    z0 = cfg.z_start(mask)
    if not z_end > z0:
        raise ConfigError(f"z_end={z_end} must exceed z_start={z0}")
    if mask.is_free:
        zs = np.array([z0, z_end])
        xs = x0 + alpha_in * (zs - z0)
        al = np.full(2, float(alpha_in))
        return Trajectory(zs, xs, al, np.zeros(2), x0, energy, alpha_in)
    hmax, field_end = _kernel_args(mask, cfg)
    _, _, status, steps, rz, rx, ra, rf, nrec = _integrate_ray(
        float(x0), float(alpha_in), float(energy), z0, np.array([float(z_end)]),
        *mask.params(), cfg.rel_tol, cfg.abs_tol, hmax, field_end,
        cfg.max_steps, cfg.scaled_transverse_force, True,
    )
    _raise_status(status, energy, cfg.max_steps)
    return Trajectory(
        rz[:nrec].copy(), rx[:nrec].copy(), ra[:nrec].copy(), rf[:nrec].copy(),
        float(x0), float(energy), float(alpha_in),
    )


def propagate_batch(
    x0s,
    energies,
    alphas_in,
    z_grid,
    mask: MaskConfig,
    cfg: IntegratorConfig = IntegratorConfig(),
    return_slopes: bool = False,
):
    """Transverse positions of many rays on a common increasing z grid.

    ``x0s``, ``energies`` and ``alphas_in`` broadcast against each other.
    Returns an array of shape (n_rays, len(z_grid)); rays are integrated
    independently so row order never affects the values.
    """
    x0s, energies, alphas_in = np.broadcast_arrays(
        np.asarray(x0s, float), np.asarray(energies, float), np.asarray(alphas_in, float)
    )
    x0s = np.ascontiguousarray(x0s.ravel())
    energies = np.ascontiguousarray(energies.ravel())
    alphas_in = np.ascontiguousarray(alphas_in.ravel())
    zg = np.ascontiguousarray(np.atleast_1d(np.asarray(z_grid, float)))
    if zg.size > 1 and np.any(np.diff(zg) <= 0):
        raise ConfigError("z_grid must be strictly increasing")
    z0 = cfg.z_start(mask)
    if mask.is_free:
        xs = x0s[:, None] + alphas_in[:, None] * (zg[None, :] - z0)
        sl = np.broadcast_to(alphas_in[:, None], xs.shape).copy()
        return (xs, sl) if return_slopes else xs
    hmax, field_end = _kernel_args(mask, cfg)
    xs, sl, status = _integrate_batch(
        x0s, alphas_in, energies, z0, zg, *mask.params(),
        cfg.rel_tol, cfg.abs_tol, hmax, field_end, cfg.max_steps, cfg.scaled_transverse_force,
    )
    bad = np.flatnonzero(status != _OK)
    if bad.size:
        j = int(bad[0])
        try:
            _raise_status(int(status[j]), energies[j], cfg.max_steps)
        except (SingularEnergy, StepLimitExceeded) as exc:
            raise RayError(j, exc) from exc
    return (xs, sl) if return_slopes else xs


def set_threads(n: int | None) -> None:
    """Cap the number of worker threads used by batch propagation."""
    if n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def launch_velocity(energy: float, alpha: float, mass: float = 1.0):
    """(vx, vz) for a free atom of the given energy and slope, kinetic = m v^2 / 2."""
    speed = math.sqrt(2.0 * energy / mass)
    vz = speed / math.sqrt(1.0 + alpha * alpha)
    return alpha * vz, vz


@dataclass(frozen=True)
class OracleResult:
    x: float
    z: float
    vx: float
    vz: float
    energy_drift: float
    t: float


def oracle_propagate_2d(
    x0: float,
    z0: float,
    vx0: float,
    vz0: float,
    t_end: float,
    mask: MaskConfig,
    rtol: float = 1e-12,
    atol: float = 1e-12,
    z_stop: float | None = None,
    max_steps: int = 1_000_000,
) -> OracleResult:
    """Newton's equations in time with unit mass, integrated by scipy's DOP853.

    With ``z_stop`` given, integration halts when the atom crosses that plane
    (before ``t_end``).  ``energy_drift`` is |E(t) - E(0)| / |E(0)| with
    E = (vx^2 + vz^2)/2 + U.
    """
    if not vz0 > 0:
        raise ConfigError("vz0 must be > 0")

    def rhs(t, y):
        gx, gz = potential_gradient(y[0], y[1], mask)
        return [y[2], y[3], -gx, -gz]

    def energy(y):
        return 0.5 * (y[2] ** 2 + y[3] ** 2) + float(potential(y[0], y[1], mask))

    events = None
    if z_stop is not None:
        def crossing(t, y):
            return y[1] - z_stop

        crossing.terminal = True
        crossing.direction = 1
        events = crossing

    y0 = [x0, z0, vx0, vz0]
    sol = solve_ivp(
        rhs, (0.0, t_end), y0, method="DOP853", rtol=rtol, atol=atol,
        events=events, dense_output=False,
    )
    if sol.status == -1:
        raise StepLimitExceeded(sol.message)
    if z_stop is not None and sol.t_events[0].size:
        yf = sol.y_events[0][0]
        tf = float(sol.t_events[0][0])
    else:
        yf = sol.y[:, -1]
        tf = float(sol.t[-1])
    e0 = energy(y0)
    drift = abs(energy(yf) - e0) / abs(e0)
    return OracleResult(float(yf[0]), float(yf[1]), float(yf[2]), float(yf[3]), drift, tf)
