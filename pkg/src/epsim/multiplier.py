"""Sampled checks of the bilinear-multiplier estimates behind the normal form.

* the lower bound on the resonance phase ``Phi_1``,
* pointwise bounds on its first and second derivatives,
* the weighted multiplier ``M1 = |xi||xi-eta||eta| / (Phi_1 <xi-eta>^{2l} <eta>^{2l})``
  and its dyadic Sobolev-slice norms,
* pseudo-products ``B[f, g]`` with a general weight, and
* the Fourier-side quadratic kernel of the alpha equations, which is
  compared against the solver's pseudo-spectral nonlinearity.

Everything is measured; no constant is asserted here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dispersion import (
    ConfigError,
    eval_d2p,
    eval_dp,
    eval_p,
    eval_phase,
    eval_q,
    phase_bound_rhs,
    smooth_step,
)
from .fields import Grid3, ShapeError, lp_bump

__all__ = [
    "PhaseReport",
    "DerivativeReport",
    "MultiplierReport",
    "BilinearReport",
    "sample_triples",
    "verify_phase_bound",
    "phi1_gradients",
    "derivative_bound_rhs",
    "verify_phi1_derivative_bounds",
    "m1_eval",
    "omega_weight",
    "resolvable_scales",
    "slice_norm_estimate",
    "pseudo_product",
    "sample_multiplier",
    "bilinear_ratio",
    "bilinear_check",
    "quadratic_kernel_eval",
    "KERNEL_CONVENTION",
]


def _norm(v):
    return np.sqrt(np.sum(v * v, axis=-1))


def _random_directions(rng, n):
    v = rng.standard_normal((n, 3))
    return v / _norm(v)[:, None]


def _cone_directions(rng, axis, max_angle):
    """Unit vectors within ``max_angle`` of ``+axis`` or ``-axis`` (uniform on the caps)."""
    n = axis.shape[0]
    cos_t = 1.0 - rng.uniform(0.0, 1.0 - math.cos(max_angle), n)
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t ** 2))
    ph = rng.uniform(0.0, 2 * math.pi, n)
    # orthonormal frame around axis
    helper = np.where(np.abs(axis[:, :1]) < 0.9, np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]]))
    e1 = np.cross(axis, helper)
    e1 /= _norm(e1)[:, None]
    e2 = np.cross(axis, e1)
    d = cos_t[:, None] * axis + sin_t[:, None] * (np.cos(ph)[:, None] * e1 + np.sin(ph)[:, None] * e2)
    sign = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    return d * sign[:, None]


def sample_triples(rng, n, radius_range=(1e-3, 1e3), cone_fraction=0.25, cone_angle=0.1):
    """``n`` frequency pairs ``(xi, eta)`` with ``|eta| <= min(|xi|, |xi - eta|)``.

    Radii are log-uniform in ``radius_range`` and directions uniform; a
    ``cone_fraction`` of the samples puts ``eta`` within ``cone_angle`` of the
    line through ``xi``.  With ``a = xi``, ``b = xi - eta``, ``c = eta`` the
    pair is relabelled (``b <-> c``) whenever ``|b| < |c|``.
    """
    lo, hi = radius_range
    if not (0 < lo < hi and math.isfinite(hi)):
        raise ConfigError("radius_range must satisfy 0 < lo < hi, got %r" % (radius_range,))
    r = np.exp(rng.uniform(math.log(lo), math.log(hi), (n, 2)))
    ra, rc = r.max(axis=1), r.min(axis=1)
    da = _random_directions(rng, n)
    n_cone = int(round(cone_fraction * n))
    dc = np.empty_like(da)
    dc[:n_cone] = _cone_directions(rng, da[:n_cone], cone_angle)
    dc[n_cone:] = _random_directions(rng, n - n_cone)
    a = ra[:, None] * da
    c = rc[:, None] * dc
    b = a - c
    swap = _norm(b) < _norm(c)
    b[swap], c[swap] = c[swap].copy(), b[swap].copy()
    return a, c, n_cone


@dataclass
class PhaseReport:
    samples: int
    seed: int
    min_ratio: float
    argmin: tuple  # (xi, eta)
    degenerate: int
    violations: int
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    cone_samples: int = 0
    min_ratio_cone: float = float("nan")

    def lines(self):
        xi, eta = self.argmin
        return [
            "samples: %d" % self.samples,
            "seed: %d" % self.seed,
            "min_ratio: %.10g" % self.min_ratio,
            "min_ratio_cone: %.10g" % self.min_ratio_cone,
            "argmin_xi: %s" % " ".join("%.10g" % v for v in xi),
            "argmin_eta: %s" % " ".join("%.10g" % v for v in eta),
            "degenerate: %d" % self.degenerate,
            "violations: %d" % self.violations,
        ]


def verify_phase_bound(n_samples=10 ** 6, seed=1, radius_range=(1e-3, 1e3), chunk=200_000, bins=60) -> PhaseReport:
    """Smallest sampled ``|Phi_1| / rhs`` over seeded random triples."""
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    best = math.inf
    best_cone = math.inf
    arg = (np.zeros(3), np.zeros(3))
    degenerate = violations = total_cone = 0
    edges = np.linspace(-8.0, 4.0, bins + 1)
    counts = np.zeros(bins, dtype=np.int64)
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        xi, eta, n_cone = sample_triples(rng, m, radius_range)
        lhs = np.abs(eval_phase(1, xi, eta))
        rhs = np.asarray(phase_bound_rhs(xi, eta))
        ok = rhs > 0
        degenerate += int(np.sum(~ok))
        ratio = np.where(ok, lhs / np.where(ok, rhs, 1.0), np.inf)
        violations += int(np.sum(ok & ~(ratio > 0)))
        i = int(np.argmin(ratio))
        if ratio[i] < best:
            best = float(ratio[i])
            arg = (xi[i].copy(), eta[i].copy())
        if n_cone:
            best_cone = min(best_cone, float(np.min(ratio[:n_cone])))
        total_cone += n_cone
        fin = ratio[np.isfinite(ratio) & (ratio > 0)]
        counts += np.histogram(np.log10(np.clip(fin, 10 ** edges[0], 10 ** edges[-1])), bins=edges)[0]
        done += m
    return PhaseReport(n_samples, seed, best, arg, degenerate, violations, edges, counts, total_cone, best_cone)


# --------------------------------------------------------------------------
# derivative bounds


def _radial_grad(v, r):
    return eval_dp(r)[..., None] * v / r[..., None]


def _radial_lap(r):
    return eval_d2p(r) + 2.0 * eval_dp(r) / r


def phi1_gradients(xi, eta):
    """Analytic ``(grad_xi Phi_1, grad_eta Phi_1, Lap_xi Phi_1, Lap_eta Phi_1)``."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    zeta = xi - eta
    rx, re, rz = _norm(xi), _norm(eta), _norm(zeta)
    gz = _radial_grad(zeta, rz)
    g_xi = _radial_grad(xi, rx) - gz
    g_eta = gz - _radial_grad(eta, re)
    lap_xi = _radial_lap(rx) - _radial_lap(rz)
    lap_eta = -_radial_lap(rz) - _radial_lap(re)
    return g_xi, g_eta, lap_xi, lap_eta


def _sin_between(u, v):
    cr = _norm(np.cross(u, v))
    return cr / (_norm(u) * _norm(v))


def _half_angle(u, v):
    """``2 sin(theta/2) = |u/|u| - v/|v||`` for the angle ``theta`` between u and v."""
    return _norm(u / _norm(u)[..., None] - v / _norm(v)[..., None])


def derivative_bound_rhs(xi, eta, angle="sin"):
    """Right-hand sides of the four derivative bounds (implied constants dropped).

    ``angle='sin'`` uses ``|sin|`` of the angles as stated; ``'half'`` uses
    ``2 sin(theta/2)``, which is what the unit-vector difference actually
    gives and which stays away from 0 for anti-parallel vectors.
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    zeta = xi - eta
    rx, re, rz = _norm(xi), _norm(eta), _norm(zeta)

    def jap(r):
        return np.sqrt(1.0 + r * r)

    ang = _sin_between if angle == "sin" else _half_angle
    sin_gamma = ang(xi, zeta)  # angle between xi and xi - eta
    sin_beta = ang(eta, zeta)  # angle between eta and xi - eta
    big, small = np.maximum(rz, rx), np.minimum(rz, rx)
    r_xi = re / (jap(big) * jap(small) ** 2) + sin_gamma
    r_xixi = re / (jap(big) * jap(small) ** 3) + re / (rz * rx)
    big, small = np.maximum(rz, re), np.minimum(rz, re)
    r_eta = rx / (jap(big) * jap(small) ** 2) + sin_beta
    r_etaeta = 1.0 / small
    return r_xi, r_eta, r_xixi, r_etaeta


@dataclass
class DerivativeReport:
    samples: int
    seed: int
    resampled: int
    max_ratio: dict
    argmax: dict
    fd_max_rel_error: float
    fd_points: int

    def lines(self):
        out = ["samples: %d" % self.samples, "seed: %d" % self.seed, "resampled: %d" % self.resampled]
        out += ["max_ratio_%s: %.10g" % (k, v) for k, v in self.max_ratio.items()]
        out += ["fd_max_rel_error: %.3e" % self.fd_max_rel_error, "fd_points: %d" % self.fd_points]
        return out


def _fd_gradient(fun, x, h):
    """Five-point central differences of a scalar function of 3-vectors (rows of x)."""
    g = np.empty_like(x)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        g[:, i] = (-fun(x + 2 * e) + 8 * fun(x + e) - 8 * fun(x - e) + fun(x - 2 * e)) / (12 * h)
    return g


def verify_phi1_derivative_bounds(n_samples=10 ** 5, seed=1, radius_range=(1e-3, 1e3), fd_points=100):
    """Largest sampled LHS/RHS for the four derivative bounds, plus a finite-difference check."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    xi_list, eta_list = [], []
    have = resampled = 0
    while have < n_samples:
        m = n_samples - have
        xi, eta, _ = sample_triples(rng, m, radius_range)
        good = (_norm(xi) >= 1e-8) & (_norm(eta) >= 1e-8) & (_norm(xi - eta) >= 1e-8)
        resampled += int(np.sum(~good))
        xi_list.append(xi[good])
        eta_list.append(eta[good])
        have += int(np.sum(good))
    xi = np.concatenate(xi_list)[:n_samples]
    eta = np.concatenate(eta_list)[:n_samples]
    g_xi, g_eta, l_xi, l_eta = phi1_gradients(xi, eta)
    lhs = (_norm(g_xi), _norm(g_eta), np.abs(l_xi), np.abs(l_eta))
    rhs = derivative_bound_rhs(xi, eta)
    names = ("phixi", "phieta", "phixixi", "phietaeta")
    max_ratio, argmax = {}, {}
    for name, a, b in zip(names, lhs, rhs):
        ratio = a / b
        i = int(np.argmax(ratio))
        max_ratio[name] = float(ratio[i])
        argmax[name] = (xi[i].copy(), eta[i].copy())
    # the |sin beta| form degenerates when eta and xi - eta are anti-parallel
    half = derivative_bound_rhs(xi, eta, angle="half")
    for name, a, b in ((names[0], lhs[0], half[0]), (names[1], lhs[1], half[1])):
        max_ratio[name + "_half_angle"] = float(np.max(a / b))
    # finite-difference cross-check at generic points of moderate size
    frng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    xs = frng.uniform(0.5, 2.0, (fd_points, 1)) * _random_directions(frng, fd_points)
    es = frng.uniform(0.5, 2.0, (fd_points, 1)) * _random_directions(frng, fd_points)
    h = 1e-3
    ag_xi, ag_eta, _, _ = phi1_gradients(xs, es)
    fg_xi = _fd_gradient(lambda x: eval_phase(1, x, es), xs, h)
    fg_eta = _fd_gradient(lambda e: eval_phase(1, xs, e), es, h)
    err = max(
        float(np.max(_norm(ag_xi - fg_xi) / np.maximum(_norm(ag_xi), 1e-300))),
        float(np.max(_norm(ag_eta - fg_eta) / np.maximum(_norm(ag_eta), 1e-300))),
    )
    return DerivativeReport(n_samples, seed, resampled, max_ratio, argmax, err, fd_points)


# --------------------------------------------------------------------------
# the weighted multiplier


def m1_eval(xi, eta, lam=0.0):
    """``|xi||xi-eta||eta| / (Phi_1 <xi-eta>^{2 lam} <eta>^{2 lam})``, 0 where the numerator vanishes."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    xi, eta = np.broadcast_arrays(xi, eta)
    zeta = xi - eta
    rx, re, rz = _norm(xi), _norm(eta), _norm(zeta)
    num = rx * rz * re
    phi = eval_p(rx) - eval_p(rz) - eval_p(re)
    w = ((1.0 + rz * rz) * (1.0 + re * re)) ** lam
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(num > 0, num / (phi * w), 0.0)
    return float(val) if val.ndim == 0 else val


def omega_weight(xi, eta, which="eta"):
    """``chi / <eta>^{1/2}`` (or ``<xi-eta>^{1/2}``) with ``chi`` a smooth cutoff to ``max(|xi|,|xi-eta|,|eta|) >= 1``."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    zeta = xi - eta
    rmax = np.maximum(np.maximum(_norm(xi), _norm(eta)), _norm(zeta))
    chi = smooth_step((rmax - 0.5) / 0.5)
    r = _norm(eta) if which == "eta" else _norm(zeta)
    return chi / (1.0 + r * r) ** 0.25


@dataclass
class MultiplierReport:
    lam: float
    s: float
    scales: list
    per_scale: dict  # role -> array of sup-over-samples slice norms per scale
    summed: dict  # role -> sum over scales of the sup (the multiplier-norm estimate)
    max_of_sums: dict  # role -> max over samples of the per-sample sum
    sup_abs: float
    grid: tuple
    meta: dict = field(default_factory=dict)

    @property
    def estimate(self):
        return max(self.summed.values())

    def lines(self):
        out = ["lambda: %.6g" % self.lam, "s: %.6g" % self.s, "grid: n=%d L=%g" % self.grid]
        out.append("scales: %s" % " ".join("%g" % N for N in self.scales))
        for role in self.summed:
            out.append("summed_%s: %.10g" % (role, self.summed[role]))
            out.append("max_of_sums_%s: %.10g" % (role, self.max_of_sums[role]))
        out.append("sup_abs: %.10g" % self.sup_abs)
        return out


def resolvable_scales(grid: Grid3, lo=2.0 ** -4, hi=2.0 ** 4):
    """Dyadic ``N`` in ``[lo, hi]`` with ``kmin <= N`` and ``2N`` below the axis Nyquist."""
    nyq = math.pi * grid.n / grid.box_len
    out = []
    j = math.floor(math.log2(lo))
    while 2.0 ** j <= hi * (1 + 1e-12):
        N = 2.0 ** j
        if N >= lo * (1 - 1e-12) and N >= grid.kmin * (1 - 1e-12) and 2 * N <= nyq * (1 + 1e-12):
            out.append(N)
        j += 1
    return out


def _slice_norms(values, grid, scales, s):
    F = np.abs(grid.fft(values)) ** 2
    z = grid.kabs
    zs = z ** (2 * s)
    return np.array([math.sqrt(float(np.sum(zs * lp_bump(z / N) ** 2 * F)) / grid.volume) for N in scales])


def slice_norm_estimate(
    lam,
    s,
    xi_samples,
    eta_grid=(64, 16.0),
    scales=None,
    weight=None,
    multiplier=None,
    roles=("eta", "xi"),
) -> MultiplierReport:
    """Dyadic ``H^s`` slice norms of a multiplier, sup over the fixed-variable samples.

    For role ``'eta'`` each ``xi`` in ``xi_samples`` is fixed and
    ``m(xi, .)`` is sampled on a centred grid (``eta_grid = (n, L)``), Fourier
    transformed in ``eta``, restricted by ``phi(z / N)`` and measured in
    ``Hdot^s``.  Role ``'xi'`` swaps the variables.  The summed estimate is
    ``sum_N sup_samples ||P_N m||``.  ``multiplier(xi, eta)`` defaults to
    ``m1_eval(., ., lam)``; ``weight`` may be ``'eta'`` or ``'xi_minus_eta'``.
    """
    n, L = eta_grid
    grid = Grid3(int(n), float(L))
    if scales is None:
        scales = resolvable_scales(grid)
    else:
        ok = set(resolvable_scales(grid, min(scales), max(scales)))
        missing = [N for N in scales if N not in ok]
        if missing:
            raise ConfigError("grid n=%d L=%g cannot resolve dyadic scales %s" % (n, L, missing))
    if not scales:
        raise ConfigError("no dyadic scale is resolvable on grid n=%d L=%g" % (n, L))
    if multiplier is None:
        def multiplier(a, b):
            return m1_eval(a, b, lam)

    ax = grid.axis - 0.5 * grid.box_len
    pts = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)
    samples = np.atleast_2d(np.asarray(xi_samples, dtype=float))
    per_scale, summed, max_sums = {}, {}, {}
    sup_abs = 0.0
    for role in roles:
        best = np.zeros(len(scales))
        msum = 0.0
        for fixed in samples:
            if role == "eta":
                a, b = fixed[None, None, None, :], pts
            else:
                a, b = pts, fixed[None, None, None, :]
            vals = np.asarray(multiplier(a, b), dtype=float)
            if weight is not None:
                vals = vals * omega_weight(a, b, "eta" if weight == "eta" else "xi_minus_eta")
            if not np.all(np.isfinite(vals)):
                raise ArithmeticError("multiplier not finite on the %s-slice at %s" % (role, fixed))
            sup_abs = max(sup_abs, float(np.abs(vals).max()))
            norms = _slice_norms(vals, grid, scales, s)
            best = np.maximum(best, norms)
            msum = max(msum, float(norms.sum()))
        per_scale[role] = best
        summed[role] = float(best.sum())
        max_sums[role] = msum
    return MultiplierReport(lam, s, list(scales), per_scale, summed, max_sums, sup_abs, (grid.n, grid.box_len))


# --------------------------------------------------------------------------
# pseudo-products


def _grid_vectors(grid: Grid3):
    k1, k2, k3 = grid.wavenumbers
    kk = np.stack(np.broadcast_arrays(k1, k2, k3), axis=-1)
    return kk.reshape(-1, 3)


def _conv_index(grid: Grid3):
    n = grid.n
    idx = np.arange(n)
    i1, i2, i3 = np.meshgrid(idx, idx, idx, indexing="ij")
    return i1.ravel(), i2.ravel(), i3.ravel()


def sample_multiplier(m, grid: Grid3) -> np.ndarray:
    """Dense ``(n^3, n^3)`` table ``m(xi_i, eta_j)`` for repeated pseudo-products on a small grid."""
    if grid.n > 16:
        raise ConfigError("dense multiplier tables are limited to n <= 16")
    kv = _grid_vectors(grid)
    return np.asarray(m(kv[:, None, :], kv[None, :, :]))


def pseudo_product(m, f, g, grid: Grid3 | None = None):
    """``B[f,g]`` with ``B^(xi) = L^-3 sum_eta m(xi, eta) f^(xi - eta) g^(eta)``.

    ``m`` is a callable ``m(xi, eta)`` on 3-vectors (broadcasting over a
    leading axis) or a table from :func:`sample_multiplier`.  The
    difference ``xi - eta`` is taken modulo the grid, which is the discrete
    convolution theorem, so ``m = 1`` reproduces ``f g`` exactly.
    """
    f = np.asarray(getattr(f, "data", f))
    g = np.asarray(getattr(g, "data", g))
    if grid is None:
        grid = Grid3(f.shape[0], 64.0) if not hasattr(f, "grid") else f.grid
    if f.shape != grid.shape or g.shape != grid.shape:
        raise ShapeError("f and g must both have shape %r" % (grid.shape,))
    n = grid.n
    F = grid.fft(f)
    G = grid.fft(g).ravel()
    kv = _grid_vectors(grid)
    i1, i2, i3 = _conv_index(grid)
    table = None if callable(m) else np.asarray(m)
    if table is not None and table.shape != (n ** 3, n ** 3):
        raise ShapeError("multiplier table must have shape (n^3, n^3)")
    out = np.empty(n ** 3, dtype=complex)
    for j in range(n ** 3):
        a1, a2, a3 = i1[j], i2[j], i3[j]
        Fs = F[(a1 - i1) % n, (a2 - i2) % n, (a3 - i3) % n]
        w = table[j] if table is not None else m(kv[j][None, :], kv)
        out[j] = np.sum(w * Fs * G)
    B = grid.ifft(out.reshape(grid.shape) / grid.volume)
    if np.isrealobj(f) and np.isrealobj(g) and np.abs(B.imag).max() <= 1e-12 * max(np.abs(B.real).max(), 1e-300):
        return B.real
    return B


def bilinear_ratio(B, f, g, M, grid: Grid3):
    """``||B||_2 / (M ||f||_10 ||g||_2)``."""
    return grid.lp_norm(B, 2.0) / (M * grid.lp_norm(f, 10.0) * grid.lp_norm(g, 2.0))


@dataclass
class BilinearReport:
    pairs: int
    seed: int
    m_norm: float
    ratios: np.ndarray
    s: float
    lam: float

    @property
    def max_ratio(self):
        return float(np.max(self.ratios))

    def lines(self):
        r = self.ratios
        return [
            "pairs: %d" % self.pairs,
            "seed: %d" % self.seed,
            "lambda: %.6g" % self.lam,
            "s: %.6g" % self.s,
            "m_norm: %.10g" % self.m_norm,
            "ratio_max: %.10g" % r.max(),
            "ratio_median: %.10g" % np.median(r),
            "ratio_min: %.10g" % r.min(),
        ]


def _random_smooth_field(rng, grid: Grid3, width=2.0):
    """Real random field with Gaussian spectral envelope of width ``width`` (in wavenumber)."""
    noise = rng.standard_normal(grid.shape)
    F = grid.fft(noise) * np.exp(-0.5 * (grid.kabs / width) ** 2)
    return grid.ifft(F).real


def bilinear_check(n_pairs=50, seed=1, n=16, box_len=16.0, lam=1.25, s=1.2, m_norm=None, xi_samples=None):
    """Measured ``||B[f,g]||_2 / (M ||f||_10 ||g||_2)`` for ``M1`` over random smooth pairs.

    ``s = 6/5`` pairs ``L^2`` output with ``f in L^10`` and ``g in L^2``.  ``M``
    is the measured multiplier norm with ``xi`` as the slice variable.
    """
    grid = Grid3(n, box_len)
    if m_norm is None:
        if xi_samples is None:
            xi_samples = np.array([[0.3, 0.1, 0.0], [1.0, 0.4, 0.2], [1.9, 0.0, 0.5], [3.0, 1.0, 0.0]])
        rep = slice_norm_estimate(lam, s, xi_samples, eta_grid=(32, 16.0), roles=("xi",))
        m_norm = rep.summed["xi"]
    table = sample_multiplier(lambda a, b: m1_eval(a, b, lam), grid)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    ratios = []
    for _ in range(n_pairs):
        f = _random_smooth_field(rng, grid)
        g = _random_smooth_field(rng, grid)
        B = pseudo_product(table, f, g, grid)
        ratios.append(bilinear_ratio(B, f, g, m_norm, grid))
    return BilinearReport(n_pairs, seed, m_norm, np.array(ratios), s, lam)


# --------------------------------------------------------------------------
# Fourier-side quadratic kernel

KERNEL_CONVENTION = (
    "alpha_{1,2} = rho -/+ i q^{-1}|nabla|psi, v = grad psi; "
    "Q_j^(xi) = L^-3 sum_eta sum_{r,l} m_rl^j(xi,eta) alpha_r^(xi-eta) alpha_l^(eta); "
    "r indexes the factor at xi-eta, l the factor at eta; both cross terms (r,l)=(1,2),(2,1) kept"
)


def _kernel_terms(xi, eta, j):
    """The four weights ``m_rl^j(xi, eta)`` for ``(r, l)`` in ``11, 12, 21, 22``."""
    zeta = xi - eta
    rx, re, rz = _norm(xi), _norm(eta), _norm(zeta)
    with np.errstate(divide="ignore", invalid="ignore"):
        e_hat_dot = np.where(re > 0, np.sum(xi * eta, axis=-1) / np.where(re > 0, re, 1.0), 0.0)
        cosang = np.where((re > 0) & (rz > 0), np.sum(zeta * eta, axis=-1) / np.where((re > 0) & (rz > 0), re * rz, 1.0), 0.0)
    qe, qz, qx = eval_q(re), eval_q(rz), eval_q(rx)
    transport = 0.25j * e_hat_dot * qe  # from -div(rho v)
    c = cosang * qz * qe  # from -|v|^2/2
    w = 1.0 / ((1.0 + rx * rx) * (1.0 + rz * rz) * (1.0 + re * re))  # from the quadratic part of phi
    pot = (-1) ** j * 1j * rx / (8.0 * qx)
    m11 = transport + pot * (1.0 + w - c)
    m22 = -transport + pot * (1.0 + w - c)
    m12 = -transport + pot * (1.0 + w + c)
    m21 = transport + pot * (1.0 + w + c)
    return m11, m12, m21, m22


def quadratic_kernel_eval(alpha_pair, j=1, grid: Grid3 | None = None):
    """``Q_j^(xi)`` by a direct double sum over ``eta`` (full spectrum, O(n^6)).

    ``alpha_pair`` carries physical ``alpha1``, ``alpha2`` arrays (and a
    grid).  Returns the spectral coefficients in the :mod:`epsim.fields`
    normalisation.  See ``KERNEL_CONVENTION`` for the index convention.
    """
    if j not in (1, 2):
        raise ConfigError("j must be 1 or 2")
    grid = grid or alpha_pair.grid
    a1 = np.asarray(alpha_pair.alpha1)
    a2 = np.asarray(alpha_pair.alpha2)
    if a1.shape != grid.shape or a2.shape != grid.shape:
        raise ShapeError("alpha arrays must match the grid")
    if grid.n > 32:
        raise ConfigError("direct kernel evaluation is limited to n <= 32")
    n = grid.n
    A = [grid.fft(a1), grid.fft(a2)]
    Aflat = [x.ravel() for x in A]
    kv = _grid_vectors(grid)
    i1, i2, i3 = _conv_index(grid)
    out = np.empty(n ** 3, dtype=complex)
    for jj in range(n ** 3):
        xi = kv[jj][None, :]
        # xi - eta taken modulo the grid; the kernel uses the unwrapped mode vector
        idx = ((i1[jj] - i1) % n, (i2[jj] - i2) % n, (i3[jj] - i3) % n)
        zeta_vec = kv.reshape(n, n, n, 3)[idx]
        eta = xi - zeta_vec
        m11, m12, m21, m22 = _kernel_terms(xi, eta, j)
        Z = [A[0][idx], A[1][idx]]
        out[jj] = np.sum(m11 * Z[0] * Aflat[0] + m12 * Z[0] * Aflat[1] + m21 * Z[1] * Aflat[0] + m22 * Z[1] * Aflat[1])
    return out.reshape(grid.shape) / grid.volume
