"""Light-mask model: scaled units, mask/beam parameters and the dipole potential.

Units are fixed throughout the package: lengths in optical wavelengths,
frequencies in recoil units ``omega_r = hbar k^2 / 2m`` and energies in recoil
energies ``hbar omega_r``.  Velocities are scaled so that an atom with speed
``v`` and slope ``alpha`` carries the energy ``E = v**2 * (1 + alpha**2)``.
In these units ``k = 2 pi`` and a standing wave has period 1/2.

The field formulas below are written once as plain numpy expressions and
compiled with numba for the trajectory integrator, so both paths evaluate the
same arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Literal

import numpy as np
from numba import njit
from scipy.optimize import minimize_scalar

from .errors import ConfigError

WAVENUMBER = 2.0 * np.pi
PERIOD = 0.5

# Chromium deposition parameters in scaled units.
BASELINE = {"gamma": 238.0, "delta": 9500.0, "sigma_z": 120.0, "energy": 3.0e9}


def _envelope(z, i1, i2, sep, sigma):
    s2 = sigma * sigma
    return i1 * np.exp(-2.0 * z * z / s2) + i2 * np.exp(-2.0 * (z - sep) ** 2 / s2)


def _envelope_dz(z, i1, i2, sep, sigma):
    s2 = sigma * sigma
    return (-4.0 * z / s2) * i1 * np.exp(-2.0 * z * z / s2) + (
        -4.0 * (z - sep) / s2
    ) * i2 * np.exp(-2.0 * (z - sep) ** 2 / s2)


def _saturation(x, z, pref, i1, i2, sep, sigma):
    s = np.sin(WAVENUMBER * x)
    return pref * _envelope(z, i1, i2, sep, sigma) * s * s


def _potential(x, z, pref, i1, i2, sep, sigma, delta):
    return 0.5 * delta * np.log1p(_saturation(x, z, pref, i1, i2, sep, sigma))


def _potential_gradient(x, z, pref, i1, i2, sep, sigma, delta):
    s = np.sin(WAVENUMBER * x)
    env = _envelope(z, i1, i2, sep, sigma)
    p = pref * env * s * s
    scale = 0.5 * delta / (1.0 + p)
    # d/dx sin^2(kx) = k sin(2kx)
    p_x = pref * env * WAVENUMBER * np.sin(2.0 * WAVENUMBER * x)
    p_z = pref * s * s * _envelope_dz(z, i1, i2, sep, sigma)
    return scale * p_x, scale * p_z


_envelope_nb = njit(cache=True)(_envelope)
_envelope_dz_nb = njit(cache=True)(_envelope_dz)


@njit(cache=True)
def field_kernel(x, z, pref, i1, i2, sep, sigma, delta):
    """Scalar (U, dU/dx, dU/dz) for the compiled integrators."""
    s = math.sin(WAVENUMBER * x)
    env = _envelope_nb(z, i1, i2, sep, sigma)
    p = pref * env * s * s
    u = 0.5 * delta * math.log1p(p)
    scale = 0.5 * delta / (1.0 + p)
    u_x = scale * pref * env * WAVENUMBER * math.sin(2.0 * WAVENUMBER * x)
    u_z = scale * pref * s * s * _envelope_dz_nb(z, i1, i2, sep, sigma)
    return u, u_x, u_z


@dataclass(frozen=True)
class MaskConfig:
    """Two Gaussian standing-wave layers centred at z=0 and z=separation.

    Intensities are peak values in saturation units (I/I_s).  ``i2 = 0`` is a
    single-layer mask.
    """

    i1: float = 1000.0
    i2: float = 0.0
    separation: float = 0.0
    sigma_z: float = BASELINE["sigma_z"]
    gamma: float = BASELINE["gamma"]
    delta: float = BASELINE["delta"]

    def __post_init__(self):
        for name in ("i1", "i2", "separation"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"mask.{name} must be finite and >= 0, got {v!r}")
        if not math.isfinite(self.sigma_z) or self.sigma_z <= 0:
            raise ConfigError(f"mask.sigma_z must be > 0, got {self.sigma_z!r}")
        if not math.isfinite(self.gamma) or self.gamma <= 0:
            raise ConfigError(f"mask.gamma must be > 0, got {self.gamma!r}")
        if not math.isfinite(self.delta) or self.delta == 0:
            raise ConfigError(f"mask.delta must be finite and nonzero, got {self.delta!r}")

    @property
    def prefactor(self) -> float:
        """Saturation prefactor gamma^2 / (gamma^2 + 4 delta^2), in (0, 1]."""
        g2 = self.gamma * self.gamma
        return g2 / (g2 + 4.0 * self.delta * self.delta)

    @property
    def is_free(self) -> bool:
        return self.i1 == 0.0 and self.i2 == 0.0

    @property
    def last_layer(self) -> float:
        """Centre of the last illuminated layer."""
        return self.separation if self.i2 > 0 else 0.0

    def with_separation(self, separation: float) -> "MaskConfig":
        return replace(self, separation=float(separation))

    def params(self) -> tuple:
        """Positional arguments for the compiled field kernels."""
        return (
            self.prefactor,
            float(self.i1),
            float(self.i2),
            float(self.separation),
            float(self.sigma_z),
            float(self.delta),
        )

    def max_envelope(self) -> float:
        """Global maximum of the summed Gaussian envelope over z."""
        if self.is_free:
            return 0.0
        lo, hi = -self.sigma_z, self.separation + self.sigma_z
        z = np.linspace(lo, hi, 4001)
        env = _envelope(z, self.i1, self.i2, self.separation, self.sigma_z)
        j = int(np.argmax(env))
        # polish on the local bracket
        a, b = z[max(j - 1, 0)], z[min(j + 1, z.size - 1)]
        res = minimize_scalar(
            lambda t: -_envelope(t, self.i1, self.i2, self.separation, self.sigma_z),
            bounds=(a, b),
            method="bounded",
            options={"xatol": 1e-9},
        )
        return float(max(env[j], -res.fun))

    def max_potential(self) -> float:
        """Largest value of U anywhere (0 for red detuning, attained at nodes)."""
        if self.delta < 0:
            return 0.0
        return 0.5 * self.delta * math.log1p(self.prefactor * self.max_envelope())

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BeamConfig:
    """Incoming atomic beam.

    ``kind="monoenergetic"``: every atom has energy ``energy`` and slope
    ``alpha_in``.  ``kind="thermal"``: ``energy`` is the mean energy, giving
    ``v0 = sqrt(energy)``, and ``alpha0`` is the angular width.
    """

    kind: Literal["monoenergetic", "thermal"] = "monoenergetic"
    energy: float = BASELINE["energy"]
    alpha0: float = 0.0
    alpha_in: float = 0.0

    def __post_init__(self):
        if self.kind not in ("monoenergetic", "thermal"):
            raise ConfigError(f"beam.kind must be 'monoenergetic' or 'thermal', got {self.kind!r}")
        if not math.isfinite(self.energy) or self.energy <= 0:
            raise ConfigError(f"beam.energy must be > 0, got {self.energy!r}")
        if not math.isfinite(self.alpha0) or self.alpha0 < 0:
            raise ConfigError(f"beam.alpha0 must be >= 0, got {self.alpha0!r}")
        if self.kind == "thermal" and self.alpha0 == 0:
            raise ConfigError("beam.alpha0 must be > 0 for a thermal beam")
        if not math.isfinite(self.alpha_in):
            raise ConfigError(f"beam.alpha_in must be finite, got {self.alpha_in!r}")

    @property
    def v0(self) -> float:
        return math.sqrt(self.energy)

    def check_against(self, mask: MaskConfig) -> None:
        """Raise ConfigError unless the beam energy clears the potential barrier."""
        u_max = mask.max_potential()
        if self.energy <= u_max:
            raise ConfigError(
                f"beam.energy={self.energy:g} does not exceed the potential maximum {u_max:g}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


def saturation_parameter(x, z, mask: MaskConfig):
    """Saturation parameter p(x, z); broadcasts over array inputs."""
    pref, i1, i2, sep, sig, _ = mask.params()
    return _saturation(np.asarray(x, float), np.asarray(z, float), pref, i1, i2, sep, sig)


def potential(x, z, mask: MaskConfig):
    """Dipole potential U = (delta/2) ln(1 + p) in recoil energies."""
    return _potential(np.asarray(x, float), np.asarray(z, float), *mask.params())


def potential_gradient(x, z, mask: MaskConfig):
    """Analytic partials (dU/dx, dU/dz)."""
    return _potential_gradient(np.asarray(x, float), np.asarray(z, float), *mask.params())
