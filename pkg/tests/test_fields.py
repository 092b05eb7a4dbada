import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_field
from epsim.dispersion import ConfigError
from epsim.fields import (
    Grid3,
    NotAGradientError,
    RealField,
    ShapeError,
    SingularMultiplierError,
    SnapshotError,
    SpectralField,
    apply_radial_multiplier,
    dealias,
    dealias_mask,
    dyadic_range,
    littlewood_paley,
    read_snapshot,
    riesz_inverse_apply,
    spectral_gradient,
    transform_forward,
    transform_inverse,
    write_snapshot,
)

G = Grid3(16, 8.0)


def test_grid_validation():
    for n in (8, 15, 17.5):
        with pytest.raises(ConfigError):
            Grid3(n, 1.0)
    with pytest.raises(ConfigError):
        Grid3(16, 0.0)
    k = G.mode_index
    assert k.min() == -8 and k.max() == 7
    nz = k[k != -8]
    assert sorted(nz) == sorted(-nz)


def test_constant_and_cosine_spectra():
    F = transform_forward(RealField(G, np.ones(G.shape))).data
    assert abs(F[0, 0, 0] - G.volume) < 1e-10
    F[0, 0, 0] = 0
    assert np.abs(F).max() < 1e-10
    x1, _, _ = G.coords()
    f = np.cos(2 * math.pi * x1 / G.box_len) * np.ones(G.shape)
    F = transform_forward(RealField(G, f)).data
    nz = np.argwhere(np.abs(F) > 1e-9)
    assert {tuple(i) for i in nz} == {(1, 0, 0), (15, 0, 0)}
    assert np.allclose(F[1, 0, 0], np.conj(F[15, 0, 0]))


def test_roundtrip_parseval_hermitian(rng):
    f = rng.standard_normal(G.shape)
    F = transform_forward(RealField(G, f))
    back = transform_inverse(F).data
    assert np.abs(back - f).max() / np.abs(f).max() < 1e-12
    l2 = G.integrate(f ** 2)
    assert abs(F.l2_norm() ** 2 - l2) / l2 < 1e-12
    n = G.n
    idx = (-np.arange(n)) % n
    Fm = F.data[np.ix_(idx, idx, idx)]
    assert np.abs(Fm - np.conj(F.data)).max() < 1e-13 * np.abs(F.data).max()


def test_shape_errors():
    with pytest.raises(ShapeError):
        RealField(G, np.zeros((4, 4, 4)))
    with pytest.raises(ShapeError):
        SpectralField(G, np.zeros((16, 16, 8)))


def test_radial_multipliers(rng):
    f = random_field(rng, G)
    F = transform_forward(RealField(G, f))
    same = apply_radial_multiplier(F, lambda k: np.ones_like(k))
    assert np.array_equal(same.data, F.data)
    lap = apply_radial_multiplier(F, lambda k: 1 + k ** 2)
    back = apply_radial_multiplier(lap, lambda k: 1 / (1 + k ** 2))
    assert np.abs(back.data - F.data).max() < 1e-12 * np.abs(F.data).max()
    inv = apply_radial_multiplier(F, lambda k: 1 / k)
    back = apply_radial_multiplier(inv, lambda k: k)
    assert np.abs(back.data - F.data).max() < 1e-12 * np.abs(F.data).max()


def test_singular_multiplier_names_mode():
    F = transform_forward(RealField(G, np.ones(G.shape)))
    with pytest.raises(SingularMultiplierError, match="k=\\(0, 0, 0\\)"):
        apply_radial_multiplier(F, lambda k: 1 / k)


def test_multiplier_composition_exact(rng):
    F = transform_forward(RealField(G, rng.standard_normal(G.shape)))
    m1 = lambda k: np.exp(-k)  # noqa: E731
    m2 = lambda k: 1 + k ** 3  # noqa: E731
    a = apply_radial_multiplier(apply_radial_multiplier(F, m2), m1).data
    b = apply_radial_multiplier(F, lambda k: m1(k) * m2(k)).data
    assert np.allclose(a, b, rtol=1e-15, atol=0)
    # real symbol keeps real fields real
    out = G.ifft(a)
    assert np.abs(out.imag).max() < 1e-12 * np.abs(out.real).max()


def test_riesz_inverse():
    x1, _, _ = G.coords()
    k = 2 * math.pi / G.box_len
    psi = np.cos(k * x1) * np.ones(G.shape)
    v = [RealField(G, -k * np.sin(k * x1) * np.ones(G.shape)), RealField(G, np.zeros(G.shape)), RealField(G, np.zeros(G.shape))]
    out = riesz_inverse_apply(v).data
    assert np.abs(out - k * psi).max() < 1e-12
    zero = riesz_inverse_apply([RealField(G, np.zeros(G.shape))] * 3).data
    assert np.abs(zero).max() == 0


def test_riesz_inverse_random(rng):
    psi = random_field(rng, G, width=3.0)
    # without the Nyquist planes the spectral gradient of a real field is real
    P = dealias(transform_forward(RealField(G, psi)))
    v = [transform_inverse(c) for c in spectral_gradient(P)]
    a = riesz_inverse_apply(v).data
    b = transform_inverse(apply_radial_multiplier(P, lambda k: k)).data
    assert np.abs(a - b).max() < 1e-12 * np.abs(b).max()


def test_riesz_rejects_curl():
    x1, x2, _ = G.coords()
    k = 2 * math.pi / G.box_len
    v = [RealField(G, np.sin(k * x2) * np.ones(G.shape)), RealField(G, np.zeros(G.shape)), RealField(G, np.zeros(G.shape))]
    with pytest.raises(NotAGradientError):
        riesz_inverse_apply(v)


# --------------------------------------------------------------------------
# Littlewood-Paley


def test_lp_partition(rng):
    g = Grid3(32, 16.0)
    F = transform_forward(RealField(g, rng.standard_normal(g.shape)))
    total = sum(littlewood_paley(F, N).data for N in dyadic_range(g))
    expect = F.data.copy()
    expect[0, 0, 0] = 0
    assert np.abs(total - expect).max() < 1e-12 * np.abs(F.data).max()


def test_lp_single_mode_and_errors():
    g = Grid3(32, 2 * math.pi)  # integer wavenumbers
    x1, _, _ = g.coords()
    f = np.cos(4 * x1) * np.ones(g.shape)
    F = transform_forward(RealField(g, f))
    assert np.abs(littlewood_paley(F, 4.0).data - F.data).max() < 1e-12
    with pytest.raises(ConfigError):
        littlewood_paley(F, 3.0)
    with pytest.raises(ConfigError):
        littlewood_paley(F, 2.0 ** 10)


def test_lp_almost_orthogonal(rng):
    g = Grid3(32, 16.0)
    F = transform_forward(RealField(g, random_field(rng, g)))
    pieces = [littlewood_paley(F, N) for N in dyadic_range(g)]
    whole = sum(p.l2_norm() ** 2 for p in pieces)
    assert 0.5 * whole <= F.l2_norm() ** 2 <= 2 * whole


def test_bernstein_constant_stable():
    # a point mass (flat spectrum) is the extremal profile for Bernstein
    g = Grid3(64, 64.0)
    F = SpectralField(g, np.ones(g.shape))
    consts = []
    for N in (0.25, 0.5, 1.0, 2.0, 4.0):
        P = littlewood_paley(F, N)
        p = transform_inverse(P).data
        consts.append(np.abs(p).max() / (N ** 1.5 * P.l2_norm()))
    assert max(consts) / min(consts) < 10


# --------------------------------------------------------------------------
# dealiasing


def test_dealias():
    g = Grid3(24, 24.0)
    m = dealias_mask(g)
    F = np.where(m, 1.0 + 0j, 0)
    assert np.array_equal(dealias(SpectralField(g, F)).data, F)
    ny = np.zeros(g.shape, dtype=complex)
    ny[12, 0, 0] = 1.0
    assert np.abs(dealias(SpectralField(g, ny)).data).max() == 0


def test_dealiased_product_of_single_modes():
    g = Grid3(24, 2 * math.pi)
    x1, x2, _ = g.coords()
    a = np.cos(3 * x1) * np.ones(g.shape)
    b = np.cos(2 * x1 + 4 * x2)
    prod = dealias(transform_forward(RealField(g, a * b))).data
    # cos A cos B = (cos(A+B) + cos(A-B)) / 2, both inside the 2/3 ball
    exact = 0.5 * (np.cos(5 * x1 + 4 * x2) + np.cos(x1 - 4 * x2)) * np.ones(g.shape)
    assert np.abs(prod - g.fft(exact)).max() < 1e-10


# --------------------------------------------------------------------------
# snapshots


def test_snapshot_roundtrip(tmp_path, rng):
    rho = rng.standard_normal(G.shape)
    psi = rng.standard_normal(G.shape)
    path = tmp_path / "s.epi"
    write_snapshot(path, G, 1.25, rho, psi)
    raw = path.read_bytes()
    assert raw[:4] == b"EPI1"
    assert len(raw) == 4 + 4 + 8 + 8 + 2 * 8 * G.n ** 3
    # x (first index) varies fastest in the file
    first = np.frombuffer(raw, dtype="<f8", count=2, offset=24)
    assert np.array_equal(first, [rho[0, 0, 0], rho[1, 0, 0]])
    g, t, r2, p2 = read_snapshot(path)
    assert g == G and t == 1.25
    assert np.array_equal(r2, rho) and np.array_equal(p2, psi)


def test_snapshot_errors(tmp_path):
    bad = tmp_path / "bad.epi"
    bad.write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(SnapshotError):
        read_snapshot(bad)
    short = tmp_path / "short.epi"
    short.write_bytes(b"EP")
    with pytest.raises(SnapshotError):
        read_snapshot(short)
    with pytest.raises(ShapeError):
        write_snapshot(tmp_path / "x.epi", G, 0.0, np.zeros((2, 2, 2)), np.zeros(G.shape))


@given(st.floats(-1e3, 1e3, allow_nan=False), st.integers(0, 1000))
def test_parseval_scaling_property(c, seed):
    f = np.random.default_rng(seed).standard_normal(G.shape)
    F = transform_forward(RealField(G, c * f))
    assert abs(F.l2_norm() ** 2 - G.integrate((c * f) ** 2)) <= 1e-12 * max(G.integrate((c * f) ** 2), 1e-300)
