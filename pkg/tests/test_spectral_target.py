import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ch4map.errors import CoverageGap, ShapeMismatch
from ch4map.scope import Scope
from ch4map.target import (
    UnitAbsorptionSpectrum,
    build_target,
    builtin_absorption,
    load_absorption,
    resample_absorption,
)

GRID = np.round(np.arange(2200.0, 2400.0 + 1e-9, 0.05), 6)


def test_constant_spectrum_is_srf_invariant():
    spec = UnitAbsorptionSpectrum(GRID, np.full(GRID.size, 3e-6))
    k = resample_absorption(spec, [2250.0, 2300.0, 2350.0], [9.0, 5.0, 12.0])
    np.testing.assert_allclose(k, 3e-6, rtol=1e-12)


def test_spike_outside_support_gives_zero():
    k = np.zeros(GRID.size)
    k[np.argmin(abs(GRID - 2330.0))] = 1.0
    spec = UnitAbsorptionSpectrum(GRID, k)
    sigma = 9.0 / 2.3548
    assert 2330.0 - 2300.0 > 4 * sigma
    assert resample_absorption(spec, [2300.0], [9.0])[0] == 0.0


def _brute(spec_fn, center, fwhm):
    sigma = fwhm / 2.3548
    x = np.arange(center - 4 * sigma, center + 4 * sigma, 0.001)
    g = np.exp(-0.5 * ((x - center) / sigma) ** 2)
    return np.sum(spec_fn(x) * g) / np.sum(g)


@pytest.mark.parametrize("sigma_k", [0.5, 2.0, 6.0])
def test_gaussian_line_against_fine_quadrature(sigma_k):
    center, fwhm = 2300.0, 9.0
    line = lambda x: 1e-5 * np.exp(-0.5 * ((x - center) / sigma_k) ** 2)
    spec = UnitAbsorptionSpectrum(GRID, line(GRID))
    got = resample_absorption(spec, [center], [fwhm])[0]
    np.testing.assert_allclose(got, _brute(line, center, fwhm), rtol=1e-4)
    # untruncated analytic scaling, the +-4 sigma cut moves it by < 1e-3 relative
    sigma_b = fwhm / 2.3548
    np.testing.assert_allclose(got, 1e-5 * sigma_k / np.hypot(sigma_k, sigma_b), rtol=2e-3)


def test_coverage_gap():
    spec = UnitAbsorptionSpectrum(GRID, np.ones(GRID.size))
    with pytest.raises(CoverageGap):
        resample_absorption(spec, [2201.0], [9.0])


def test_coarse_grid_rejected():
    grid = np.arange(2200.0, 2400.0, 0.5)
    with pytest.raises(CoverageGap):
        resample_absorption(UnitAbsorptionSpectrum(grid, np.ones(grid.size)), [2300.0], [9.0])


def test_invalid_spectrum():
    with pytest.raises(Exception):
        UnitAbsorptionSpectrum([1.0, 0.5], [0.0, 0.0])
    with pytest.raises(Exception):
        UnitAbsorptionSpectrum([1.0, 2.0], [0.0, -1.0])


def test_build_target_examples():
    t = build_target(np.array([1.0, 2.0]), np.array([0.1, 0.0]), Scope("scene", 0))
    np.testing.assert_array_equal(t.t, [-0.1, 0.0])
    assert np.all(build_target(np.zeros(2), np.array([0.1, 0.2]), Scope("scene", 0)).t == 0)
    with pytest.raises(ShapeMismatch):
        build_target(np.ones(3), np.ones(2), Scope("scene", 0))


@given(st.lists(st.just(0.0) | st.floats(1e-6, 1e3), min_size=1, max_size=20), st.floats(1e-3, 1e3))
def test_build_target_linear(mu, c):
    mu = np.array(mu)
    k = np.linspace(0, 1e-5, mu.size)
    a = build_target(mu, k, Scope("scene", 0)).t
    b = build_target(c * mu, k, Scope("scene", 0)).t
    np.testing.assert_allclose(b, c * a, rtol=1e-12, atol=0)
    np.testing.assert_array_equal(build_target(2 * mu, k, Scope("scene", 0)).t, 2 * a)


@given(st.floats(0, 5000), st.floats(0.1, 10))
def test_first_order_beer_lambert(dx, level):
    k = builtin_absorption()
    wl = np.linspace(2150, 2400, 20)
    k_band = resample_absorption(k, wl, np.full(20, 9.0))
    mu = np.full(20, level)
    t = build_target(mu, k_band, Scope("scene", 0)).t
    exact = mu * np.exp(-k_band * dx) - mu
    assert np.all(np.abs(exact - t * dx) <= 0.5 * mu * (k_band * dx) ** 2 + 1e-15)


def test_file_round_trip(tmp_path):
    spec = builtin_absorption()
    spec.save(tmp_path / "k.txt")
    text = (tmp_path / "k.txt").read_text()
    (tmp_path / "k2.txt").write_text("# comment line\n" + text)
    back = load_absorption(tmp_path / "k2.txt")
    np.testing.assert_allclose(back.grid_nm, spec.grid_nm)
    np.testing.assert_allclose(back.k, spec.k, rtol=1e-12)


def test_builtin_spectrum_is_valid():
    spec = builtin_absorption()
    assert np.all(np.diff(spec.grid_nm) <= 0.1 + 1e-9)
    assert np.all(spec.k >= 0) and spec.k.max() > 0
