import numpy as np
import pytest
from scipy import integrate

from atomask import (
    BeamConfig,
    ConfigError,
    MaskConfig,
    NoFocus,
    ThermalQuadrature,
    averaged_localization_factor,
    deposition_density,
    find_linear_focus,
    localization_curve,
    localization_factor,
)
from atomask.metrics import fold, sample_thermal, thermal_density, x0_nodes

THERMAL = BeamConfig(kind="thermal", energy=3e9, alpha0=1e-4)
FREE = MaskConfig(i1=0.0)


def test_x0_nodes_cover_one_period():
    x = x0_nodes(200)
    assert x.size == 200
    assert x[0] == pytest.approx(-0.25 + 0.00125)
    np.testing.assert_allclose(x, -x[::-1], atol=1e-15)


def test_thermal_density_normalized():
    v0, a0 = THERMAL.v0, THERMAL.alpha0
    val, _ = integrate.dblquad(
        lambda a, v: thermal_density(v, a, v0, a0),
        1e-6 * v0, 12 * v0,
        lambda v: -12 * a0 * v0 / v, lambda v: 12 * a0 * v0 / v,
        epsabs=1e-10, epsrel=1e-10,
    )
    assert val == pytest.approx(1.0, abs=1e-6)


def test_thermal_density_shape():
    v0, a0 = 2.0, 0.1
    v = np.linspace(0.01, 8.0, 80001)
    on_axis = thermal_density(v, 0.0, v0, a0)
    assert v[np.argmax(on_axis)] == pytest.approx(2 * v0, abs=1e-3)
    # ratio between two slopes at one speed is a Gaussian in alpha * v
    r = thermal_density(3.0, 0.05, v0, a0) / thermal_density(3.0, 0.0, v0, a0)
    assert r == pytest.approx(np.exp(-(0.05 * 3.0) ** 2 / (2 * (a0 * v0) ** 2)), rel=1e-12)


def test_quadrature_normalization():
    assert ThermalQuadrature().normalization(THERMAL) == pytest.approx(1.0, abs=1e-3)
    coarse = ThermalQuadrature(n_alpha=1)
    assert coarse.normalization(THERMAL) == pytest.approx(1.0, abs=1e-3)


def test_sampler_moments():
    rng = np.random.default_rng(1)
    v, a = sample_thermal(THERMAL, 200_000, rng)
    u = v**2 / (2 * THERMAL.energy)
    assert u.mean() == pytest.approx(2.0, rel=0.01)
    t = a * v / (THERMAL.alpha0 * THERMAL.v0)
    assert t.std() == pytest.approx(1.0, rel=0.01)


def test_free_flight_localization_is_one():
    z = np.linspace(0, 3000, 7)
    np.testing.assert_allclose(localization_factor(z, FREE), 1.0, atol=1e-12)
    L = averaged_localization_factor(z, FREE, THERMAL, ThermalQuadrature(n_x0=50, n_v=6, n_alpha=4))
    np.testing.assert_allclose(L, 1.0, atol=1e-12)


def test_localization_returns_scalar_for_scalar(thin_mask):
    L = localization_factor(1300.0, thin_mask)
    assert isinstance(L, float)
    assert 0.0 <= L <= 2.0


def test_mirror_halving_matches_full_set(double_mask):
    z = np.array([500.0, 1450.0, 2000.0])
    a = localization_factor(z, double_mask, mirror=True)
    b = localization_factor(z, double_mask, mirror=False)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_x0_node_doubling(double_mask):
    z = np.linspace(1000, 2000, 11)
    a = localization_factor(z, double_mask, n_x0=200)
    b = localization_factor(z, double_mask, n_x0=400)
    assert np.max(np.abs(a - b)) < 1e-3


def test_thermal_reduces_to_monoenergetic(thin_mask):
    # one speed node at v0 with no slope spread is the monoenergetic beam
    beam = BeamConfig(kind="thermal", energy=3e9, alpha0=1e-4)
    quad = ThermalQuadrature(n_v=1, v_cut=2.0, v_split=None, n_alpha=1)
    z = np.linspace(600, 1600, 6)
    np.testing.assert_allclose(
        averaged_localization_factor(z, thin_mask, beam, quad),
        localization_factor(z, thin_mask),
        atol=1e-3,
    )


def test_thermal_node_doubling(thin_mask):
    z = np.array([900.0, 975.0, 1050.0])
    base = ThermalQuadrature(n_x0=100)
    fine = ThermalQuadrature(n_x0=100, n_v=48, n_alpha=32)
    a = averaged_localization_factor(z, thin_mask, THERMAL, base)
    b = averaged_localization_factor(z, thin_mask, THERMAL, fine)
    assert np.max(np.abs(a - b)) < 1e-3


def test_beam_kind_checked(thin_mask):
    with pytest.raises(ConfigError):
        localization_factor(100.0, thin_mask, THERMAL)
    with pytest.raises(ConfigError):
        averaged_localization_factor(100.0, thin_mask, BeamConfig())


def test_curve_minimum_and_csv(tmp_path, thin_mask):
    curve = localization_curve(np.arange(1200.0, 1401.0, 10.0), thin_mask, BeamConfig())
    z_m, L_m = curve.minimum()
    assert L_m <= curve.L_values.min()
    assert 1200 < z_m < 1400
    curve.write(tmp_path / "c.csv", tmp_path / "c.json")
    rows = np.loadtxt(tmp_path / "c.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(rows[:, 1], curve.L_values)


def test_fold():
    x = np.linspace(-3, 3, 1001)
    f = fold(x)
    assert np.all((f >= -0.25) & (f < 0.25))
    np.testing.assert_allclose(fold(x + 0.5), f, atol=1e-12)
    np.testing.assert_allclose(np.cos(4 * np.pi * f), np.cos(4 * np.pi * x), atol=1e-12)


def test_histogram_normalized(double_mask):
    h = deposition_density(1450.0, double_mask, BeamConfig(), n_atoms=20_000, bins=200)
    assert h.integral() == pytest.approx(1.0, abs=1e-12)
    assert h.bins == 200
    assert h.at(0.5) == h.at(0.0)


def test_histogram_flat_without_field():
    n, bins = 100_000, 200
    h = deposition_density(500.0, FREE, BeamConfig(), n_atoms=n, bins=bins)
    counts = h.density * n * np.diff(h.edges)
    mean = n / bins
    assert np.max(np.abs(counts - mean)) < 5 * np.sqrt(mean)


def test_histogram_seeded(thin_mask):
    a = deposition_density(1300.0, thin_mask, THERMAL, n_atoms=5000, seed=7)
    b = deposition_density(1300.0, thin_mask, THERMAL, n_atoms=5000, seed=7)
    np.testing.assert_array_equal(a.density, b.density)
    assert a.integral() == pytest.approx(1.0, abs=1e-12)


def test_linear_focus_independent_of_ray(thin_mask):
    zs = [find_linear_focus(thin_mask, x0=x0) for x0 in (1e-4, 1e-3, 1e-2)]
    assert max(zs) - min(zs) < 0.01 * zs[0]


def test_no_focus():
    with pytest.raises(NoFocus):
        find_linear_focus(FREE)
    with pytest.raises(NoFocus):
        find_linear_focus(MaskConfig(i1=1000.0), z_max=400.0)


def test_best_plane_lies_beyond_linear_focus(thin_mask):
    z_f = find_linear_focus(thin_mask)
    curve = localization_curve(np.arange(0.0, 2501.0, 5.0), thin_mask, BeamConfig())
    z_m, _ = curve.minimum()
    assert z_m > z_f
