import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.spatial.transform import Rotation

from conftest import band_limited, random_field, solver_quadratic_part
from epsim.dispersion import ConfigError, eval_phase, phase_bound_rhs
from epsim.fields import Grid3, ShapeError, lp_bump
from epsim.multiplier import (
    KERNEL_CONVENTION,
    bilinear_ratio,
    derivative_bound_rhs,
    m1_eval,
    omega_weight,
    phi1_gradients,
    pseudo_product,
    quadratic_kernel_eval,
    resolvable_scales,
    sample_multiplier,
    sample_triples,
    slice_norm_estimate,
    verify_phase_bound,
    verify_phi1_derivative_bounds,
)
from epsim.solver import AlphaPair, FluidState, to_alpha
from epsim.fields import RealField

# |p(2) - 2 p(1)| / (2 / (3 * 2)) by mpmath at 40 digits, frozen
COLLINEAR_RATIO = 0.7757985382875410547


def test_collinear_ratio():
    xi, eta = np.array([2.0, 0, 0]), np.array([1.0, 0, 0])
    ratio = abs(eval_phase(1, xi, eta)) / phase_bound_rhs(xi, eta)
    assert ratio == pytest.approx(COLLINEAR_RATIO, rel=1e-13)


def test_sampler_ordering_and_relabel():
    rng = np.random.default_rng(3)
    xi, eta, n_cone = sample_triples(rng, 20000)
    re, rz = np.linalg.norm(eta, axis=1), np.linalg.norm(xi - eta, axis=1)
    assert np.all(re <= rz * (1 + 1e-12)) and np.all(re <= np.linalg.norm(xi, axis=1) * (1 + 1e-12))
    assert n_cone == 5000
    with pytest.raises(ConfigError):
        sample_triples(rng, 10, radius_range=(0, 1))


def test_phase_report_is_reproducible():
    a = verify_phase_bound(20000, seed=4)
    b = verify_phase_bound(20000, seed=4)
    assert a.min_ratio == b.min_ratio and a.violations == 0
    assert a.hist_counts.sum() == 20000
    assert a.min_ratio_cone >= a.min_ratio
    assert any(line.startswith("min_ratio:") for line in a.lines())


@given(st.integers(0, 2 ** 31))
def test_phase_and_bound_rotation_invariant(seed):
    rng = np.random.default_rng(seed)
    xi, eta, _ = sample_triples(rng, 50)
    R = Rotation.random(random_state=seed).as_matrix()
    r0 = np.abs(eval_phase(1, xi, eta)) / phase_bound_rhs(xi, eta)
    r1 = np.abs(eval_phase(1, xi @ R.T, eta @ R.T)) / phase_bound_rhs(xi @ R.T, eta @ R.T)
    assert np.allclose(r0, r1, rtol=1e-9)
    b0 = np.array(derivative_bound_rhs(xi, eta))
    b1 = np.array(derivative_bound_rhs(xi @ R.T, eta @ R.T))
    assert np.allclose(b0, b1, rtol=1e-8)


def test_gradients_against_finite_differences():
    rep = verify_phi1_derivative_bounds(2000, seed=2, fd_points=50)
    assert rep.fd_max_rel_error < 1e-8
    assert all(np.isfinite(v) for v in rep.max_ratio.values())
    assert rep.max_ratio["phixi_half_angle"] < 10 and rep.max_ratio["phieta_half_angle"] < 10


def test_laplacians_against_finite_differences():
    rng = np.random.default_rng(5)
    xi = rng.uniform(0.5, 2, (20, 1)) * rng.standard_normal((20, 3))
    eta = rng.uniform(0.5, 2, (20, 1)) * rng.standard_normal((20, 3))
    _, _, lx, le = phi1_gradients(xi, eta)
    h = 1e-3
    fd_x = sum(
        (eval_phase(1, xi + h * e, eta) - 2 * eval_phase(1, xi, eta) + eval_phase(1, xi - h * e, eta)) / h ** 2
        for e in np.eye(3)
    )
    fd_e = sum(
        (eval_phase(1, xi, eta + h * e) - 2 * eval_phase(1, xi, eta) + eval_phase(1, xi, eta - h * e)) / h ** 2
        for e in np.eye(3)
    )
    assert np.allclose(lx, fd_x, rtol=1e-4, atol=1e-5)
    assert np.allclose(le, fd_e, rtol=1e-4, atol=1e-5)


def test_half_angle_beats_sine_when_antiparallel():
    xi = np.array([1e-3, 0, 0])
    eta = np.array([1.0, 1e-6, 0])  # eta nearly anti-parallel to xi - eta
    s = derivative_bound_rhs(xi, eta, "sin")[1]
    h = derivative_bound_rhs(xi, eta, "half")[1]
    assert h > 100 * s


# --------------------------------------------------------------------------
# the weighted multiplier


def test_m1_near_small_eta():
    xi = np.array([1.3, 0.4, -0.2])
    d = np.array([0.3, -0.7, 0.5])
    vals = [abs(m1_eval(xi, 10.0 ** -k * d, 1.25)) for k in range(1, 9)]
    assert max(vals) < 1e3
    assert m1_eval(xi, xi, 1.25) == 0.0
    assert m1_eval(xi, np.zeros(3)) == 0.0


def test_m1_sign_follows_phase():
    rng = np.random.default_rng(9)
    xi, eta, _ = sample_triples(rng, 500, (1e-2, 1e2))
    m = m1_eval(xi, eta, 0.5)
    assert np.all(np.sign(m) == np.sign(eval_phase(1, xi, eta)))


def test_omega_weight():
    xi, eta = np.array([3.0, 0, 0]), np.array([2.0, 0, 0])
    assert omega_weight(xi, eta, "eta") == pytest.approx(5 ** -0.25)
    assert omega_weight(xi, eta, "xi_minus_eta") == pytest.approx(2 ** -0.25)
    assert omega_weight(np.full(3, 0.01), np.zeros(3)) == 0.0


def test_resolvable_scales():
    assert resolvable_scales(Grid3(64, 16.0), 0.5, 8.0) == [0.5, 1.0, 2.0, 4.0]
    assert resolvable_scales(Grid3(16, 16.0)) == [0.5, 1.0]
    with pytest.raises(ConfigError):
        slice_norm_estimate(1.0, 1.0, [[1.0, 0, 0]], eta_grid=(16, 16.0), scales=[0.5, 4.0])


def _gauss_slice(N, s):
    # (2 pi)^-3 int |z|^{2s} phi(z/N)^2 |pi^{3/2} e^{-|z|^2/4}|^2 dz
    f = lambda r: r ** (2 * s + 2) * lp_bump(r / N) ** 2 * math.pi ** 3 * math.exp(-r * r / 2)  # noqa: E731
    return math.sqrt(4 * math.pi * quad(f, 0, 4 * N, limit=200, epsabs=0)[0] / (2 * math.pi) ** 3)


@pytest.mark.parametrize("s", [0.5, 1.2])
def test_slice_norm_of_gaussian(s):
    rep = slice_norm_estimate(
        # the lattice spacing 2 pi / L must be fine against the smallest annulus
        0.0, s, [[1.0, 0, 0]], eta_grid=(128, 64.0), scales=[0.5, 1.0, 2.0], multiplier=lambda a, b: np.exp(-np.sum(b * b, axis=-1)),
        roles=("eta",),
    )
    expect = np.array([_gauss_slice(N, s) for N in rep.scales])
    assert np.allclose(rep.per_scale["eta"], expect, rtol=1e-4)
    assert rep.summed["eta"] == pytest.approx(expect.sum(), rel=1e-4)


def test_slice_norm_monotone_in_s_above_unit_scale():
    xs = [[1.0, 0.5, 0.0], [2.0, 0.0, 0.3]]
    a = slice_norm_estimate(1.25, 1.0, xs, eta_grid=(32, 8.0), scales=[1.0, 2.0])
    b = slice_norm_estimate(1.25, 1.4, xs, eta_grid=(32, 8.0), scales=[1.0, 2.0])
    # scale N=1 reaches |z| < 1, so only N=2 is compared
    for role in ("eta", "xi"):
        assert b.per_scale[role][1] >= a.per_scale[role][1]
    assert a.estimate == max(a.summed.values())


# --------------------------------------------------------------------------
# pseudo-products

G = Grid3(16, 16.0)


def test_pseudo_product_with_unit_weight(rng):
    f, g = random_field(rng, G), random_field(rng, G)
    B = pseudo_product(lambda a, b: np.ones(b.shape[0]), f, g, G)
    assert np.abs(B - f * g).max() < 1e-12


def test_pseudo_product_derivative_weight(rng):
    f, g = random_field(rng, G, width=2.0), random_field(rng, G, width=2.0)
    B = pseudo_product(lambda a, b: 1j * b[:, 0], f, g, G)
    dg = G.ifft(1j * G.wavenumbers[0] * G.fft(g))  # complex: keeps the Nyquist mode
    assert np.abs(B - f * dg).max() < 1e-12


def test_pseudo_product_table_and_bilinearity(rng):
    m = lambda a, b: m1_eval(a, b, 1.0)  # noqa: E731
    table = sample_multiplier(m, G)
    f1, f2, g = (random_field(rng, G, width=1.5) for _ in range(3))
    B1 = pseudo_product(table, f1, g, G)
    assert np.allclose(B1, pseudo_product(m, f1, g, G), atol=1e-13)
    lhs = pseudo_product(table, 2.5 * f1 - f2, g, G)
    assert np.abs(lhs - (2.5 * B1 - pseudo_product(table, f2, g, G))).max() < 1e-12 * np.abs(lhs).max()
    assert bilinear_ratio(B1, f1, g, 1.0, G) > 0
    with pytest.raises(ShapeError):
        pseudo_product(table[:10], f1, g, G)
    with pytest.raises(ConfigError):
        sample_multiplier(m, Grid3(32, 16.0))


# --------------------------------------------------------------------------
# quadratic kernel


def test_kernel_of_zero():
    z = np.zeros(G.shape, dtype=complex)
    assert np.abs(quadratic_kernel_eval(AlphaPair(z, z, G), 1)).max() == 0
    with pytest.raises(ConfigError):
        quadratic_kernel_eval(AlphaPair(z, z, G), 3)
    assert "both cross terms" in KERNEL_CONVENTION


@pytest.fixture(scope="module")
def kernel_case():
    rng = np.random.default_rng(11)
    rho, psi = band_limited(rng, G, 1.0), band_limited(rng, G, 1.0)
    pair = to_alpha(FluidState(RealField(G, rho), RealField(G, psi)))
    return rho, psi, pair, [quadratic_kernel_eval(pair, j) for j in (1, 2)]


def test_kernel_conjugate_symmetry(kernel_case):
    _, _, _, (Q1, Q2) = kernel_case
    q1, q2 = G.ifft(Q1), G.ifft(Q2)
    assert np.abs(q2 - np.conj(q1)).max() < 1e-12 * np.abs(q1).max()


@pytest.mark.parametrize("j", [1, 2])
def test_kernel_matches_solver(kernel_case, j):
    rho, psi, _, Q = kernel_case
    ref, mask = solver_quadratic_part(G, rho, psi, j)
    got = Q[j - 1][..., : G.n // 2 + 1]
    err = np.abs(np.where(mask, got - ref, 0)).max() / np.abs(np.where(mask, ref, 0)).max()
    assert err < 1e-5
