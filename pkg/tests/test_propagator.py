import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import epsim.propagator as prop
from conftest import random_field
from epsim.dispersion import BandCutoffs, ConfigError, eval_p
from epsim.fields import Grid3, RealField, transform_forward
from epsim.propagator import (
    DecayTrace,
    KernelRequest,
    QuadratureError,
    apply_halfwave,
    bessel_tilde,
    decay_scan,
    fit_decay_exponent,
    kernel_radial,
    kernel_radial_full,
)

# J_{1/2}(10)/sqrt(10) from mpmath.besselj (40 digits), frozen
J_HALF_10 = -0.043406604512945174505
# (2 pi)^-3 4 pi int psi_crit(r) r^2 dr by mpmath.quad over the cutoff, frozen
KERNEL_T0_X0 = 0.1694144192401918


def test_bessel_tilde():
    lim = math.sqrt(2 / math.pi)
    assert bessel_tilde(0.0) == pytest.approx(lim, rel=1e-15)
    assert np.isfinite(bessel_tilde(1e-9))
    assert bessel_tilde(5e-5) == pytest.approx(lim * math.sin(5e-5) / 5e-5, rel=1e-15)
    assert abs(bessel_tilde(math.pi)) < 1e-15
    assert bessel_tilde(10.0) == pytest.approx(J_HALF_10, abs=1e-12)


@given(st.floats(1e-6, 200.0))
def test_bessel_tilde_against_mpmath(s):
    ref = float(mpmath.besselj(0.5, s) / mpmath.sqrt(s))
    assert abs(bessel_tilde(s) - ref) <= 1e-14 * max(1.0, abs(ref)) + 1e-15


def test_kernel_at_origin_time_zero():
    assert kernel_radial(0.0, 0.0, "crit").real == pytest.approx(KERNEL_T0_X0, rel=1e-9)
    req = KernelRequest(0.0, 0.0, "crit", 0.3)
    assert kernel_radial(req) == pytest.approx(KERNEL_T0_X0, rel=1e-9)


@pytest.fixture(scope="module")
def fft_route():
    g = Grid3(128, 128.0)
    cut = BandCutoffs(0.3)(("crit"), g.kabs)

    def at(t, xs):
        u = g.ifft(cut * np.exp(1j * t * eval_p(g.kabs)))
        return np.array([u[int(round(x / g.spacing)), 0, 0] for x in xs])

    return at


def test_kernel_matches_fft_at_time_zero(fft_route):
    xs = np.array([0.0, 1.0, 2.0, 5.0, 10.0])
    K = kernel_radial(0.0, xs, "crit")
    # errors are measured against sup|K| = K(0,0)
    assert np.abs(K - fft_route(0.0, xs)).max() / KERNEL_T0_X0 < 1e-6


@pytest.mark.parametrize("t", [0.0, 1.0, 5.0])
def test_kernel_quadrature_vs_fft(fft_route, t):
    xs = np.array([0.0, 1.0, 10.0])
    K = kernel_radial(t, xs, "crit")
    assert np.abs(K - fft_route(t, xs)).max() / KERNEL_T0_X0 < 1e-4


def test_kernel_modulus_bounded_by_origin():
    rng = np.random.default_rng(8)
    k00 = abs(kernel_radial(0.0, 0.0, "crit"))
    for t in rng.uniform(-50, 50, 8):
        xs = rng.uniform(0, 80, 16)
        assert np.all(np.abs(kernel_radial(t, xs, "crit")) <= k00 * (1 + 1e-9))


def test_kernel_errors_and_tail(monkeypatch):
    with pytest.raises(ConfigError):
        kernel_radial(1.0, -1.0, "crit")
    assert math.isinf(kernel_radial_full(1.0, [0.0], "high").tail_bound)
    assert kernel_radial_full(1.0, [0.0], "high", sigma=1.0).tail_bound < 1e-20
    # a phase far stiffer than the panel sizing expects cannot converge
    monkeypatch.setattr(prop, "eval_p", lambda r: 1e4 * np.asarray(r) ** 3)
    with pytest.raises(QuadratureError) as info:
        kernel_radial_full(10.0, [1.0], "crit", max_refine=1)
    assert np.isfinite(info.value.error)


# --------------------------------------------------------------------------
# spectral route

G = Grid3(16, 16.0)


def _spec(rng):
    return transform_forward(RealField(G, rng.standard_normal(G.shape)))


def test_halfwave_identity_at_zero(rng):
    F = _spec(rng)
    out = apply_halfwave(0.0, F)
    assert np.array_equal(out.data, F.data) and out.data is not F.data


@given(st.floats(-1e3, 1e3, allow_nan=False), st.integers(0, 999))
def test_halfwave_unitary_and_group(t, seed):
    F = _spec(np.random.default_rng(seed))
    U = apply_halfwave(t, F)
    assert abs(U.l2_norm() - F.l2_norm()) <= 1e-12 * F.l2_norm()
    back = apply_halfwave(-t, U)
    assert np.abs(back.data - F.data).max() <= 1e-12 * np.abs(F.data).max()


# --------------------------------------------------------------------------
# fitting and traces


def test_fit_recovers_power_law():
    t = np.geomspace(10, 3000, 24)
    slope, pref, win = fit_decay_exponent(t, 3.0 * t ** (-4.0 / 3.0))
    assert slope == pytest.approx(-4 / 3, abs=1e-12)
    assert pref == pytest.approx(3.0, rel=1e-10)
    assert win == pytest.approx((100.0, 3000.0))  # default [t_max/30, t_max]
    slope, _, _ = fit_decay_exponent(t, t ** -1.5 * (1 + (t < 50)), window=(60, 3000))
    assert slope == pytest.approx(-1.5, abs=1e-12)


def test_fit_and_scan_errors():
    t = np.geomspace(10, 3000, 24)
    with pytest.raises(ConfigError):
        fit_decay_exponent(t, t ** -1.0, window=(2000, 3000))
    with pytest.raises(ConfigError):
        decay_scan("crit", "sup", times=np.geomspace(10, 100, 8))
    with pytest.raises(ConfigError):
        decay_scan("crit", "sup", times=np.geomspace(0.1, 100, 12))
    with pytest.raises(ConfigError):
        decay_scan("crit", "l7", times=t)
    with pytest.raises(ConfigError):
        DecayTrace(np.array([1.0, 1.0]), np.array([1.0, 2.0]), 0.0, (1, 1), "sup")


def test_grid_field_l2_is_conserved():
    g = Grid3(32, 64.0)
    tr = decay_scan("crit", "l2", "grid_field", np.geomspace(1, 100, 12), grid=g, window=(1, 100))
    assert np.ptp(tr.values) <= 1e-12 * tr.values.max()
    assert abs(tr.fitted_exponent) < 1e-10


def test_band_limited_datum_is_real(rng):
    g = Grid3(32, 32.0)
    f = prop.band_limited_gaussian(g, "crit", 0.3, 2.0)
    u = g.ifft(f.data)
    assert np.abs(u.imag).max() < 1e-12 * np.abs(u.real).max()
    assert random_field(rng, g).shape == g.shape
