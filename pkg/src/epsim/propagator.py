"""The half-wave group ``exp(i t p(|nabla|))`` in three dimensions.

Two evaluation routes are provided.  ``kernel_radial`` computes the
convolution kernel of a radially band-limited propagator as a 1-D
oscillatory integral over the frequency radius (panel Gauss-Legendre, panel
width tied to the local oscillation scale).  ``apply_halfwave`` applies the
same group as a spectral multiplier on a periodic grid.  ``decay_scan``
measures decay exponents from either route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import erfc

from .dispersion import (
    R0,
    Band,
    BandCutoffs,
    ConfigError,
    DEFAULT_BAND_EPSILON,
    eval_dp,
    eval_p,
)
from .fields import Grid3, SpectralField

__all__ = [
    "QuadratureError",
    "KernelRequest",
    "KernelResult",
    "DecayTrace",
    "NormKind",
    "bessel_tilde",
    "kernel_radial",
    "kernel_radial_full",
    "apply_halfwave",
    "fit_decay_exponent",
    "decay_scan",
    "gaussian_datum_hat",
    "band_limited_gaussian",
    "R_MAX_HIGH",
]

R_MAX_HIGH = 40.0
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
# 2 pi * C * sqrt(2/pi) sin(s)/s must equal the (2 pi)^-3 * 4 pi sin(s)/s of the inverse transform
_KERNEL_NORM = 1.0 / (4.0 * math.pi ** 3 * _SQRT_2_OVER_PI)


class QuadratureError(ArithmeticError):
    """Panel quadrature did not reach the requested agreement."""

    def __init__(self, msg, estimate=None, error=None):
        super().__init__(msg)
        self.estimate = estimate
        self.error = error


def bessel_tilde(s):
    """``s^{-1/2} J_{1/2}(s) = sqrt(2/pi) sin(s)/s`` with its series below ``s = 1e-4``."""
    s = np.asarray(s, dtype=float)
    small = np.abs(s) < 1e-4
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(small, 1.0 - s * s / 6.0 + s ** 4 / 120.0, np.sin(s) / np.where(small, 1.0, s))
    out = _SQRT_2_OVER_PI * out
    return float(out) if out.ndim == 0 else out


def gaussian_datum_hat(r, sigma):
    """Fourier transform of the unit-mass Gaussian of width ``sigma``: ``exp(-sigma^2 r^2 / 4)``."""
    return np.exp(-0.25 * (sigma * np.asarray(r, dtype=float)) ** 2)


@dataclass(frozen=True)
class KernelRequest:
    t: float
    x_abs: float
    band: Band = Band.CRIT
    epsilon: float = DEFAULT_BAND_EPSILON
    sigma: float | None = None  # Gaussian datum width; None means a point mass

    def __post_init__(self):
        if not math.isfinite(self.t):
            raise ConfigError("t must be finite")
        if not (self.x_abs >= 0 and math.isfinite(self.x_abs)):
            raise ConfigError("x_abs must be a finite non-negative number")


@dataclass
class KernelResult:
    value: np.ndarray
    error: np.ndarray
    tail_bound: float
    panels: int


_GL = {m: np.polynomial.legendre.leggauss(m) for m in (8, 12)}


def _band_interval(band: Band, cut: BandCutoffs, sigma):
    lo, hi = cut.support[band]
    tail = 0.0
    if math.isinf(hi):
        hi = R_MAX_HIGH
        if sigma is None:
            tail = math.inf
        else:
            # int_{rmax}^inf exp(-s^2 r^2/4) r^2 dr, times sup|J~| = sqrt(2/pi) and the kernel constant
            a = 0.5 * sigma
            g = math.exp(-(a * hi) ** 2)
            integral = hi * g / (2 * a * a) + math.sqrt(math.pi) * erfc(a * hi) / (4 * a ** 3)
            tail = 2 * math.pi * _KERNEL_NORM * _SQRT_2_OVER_PI * integral
    return lo, hi, tail


def _panel_nodes(lo, hi, h, order):
    npan = max(1, int(math.ceil((hi - lo) / h)))
    edges = np.linspace(lo, hi, npan + 1)
    xg, wg = _GL[order]
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    weights = (half[:, None] * wg[None, :]).ravel()
    return nodes, weights, npan


def kernel_radial_full(
    t,
    x_abs,
    band=Band.CRIT,
    epsilon=DEFAULT_BAND_EPSILON,
    sigma=None,
    rtol=1e-8,
    max_refine=4,
    chunk=48,
) -> KernelResult:
    """Kernel of ``exp(itp(|nabla|)) psi_band(|nabla|)`` (times a Gaussian datum) at radii ``x_abs``.

    ``2 pi C int exp(itp(r)) psi(r) g(r) J~(r|x|) r^2 dr`` with ``C`` fixed so
    that the value is the inverse Fourier transform in the ``(2 pi)^-3``
    convention.  The high and full bands are truncated at ``R_MAX_HIGH``; the
    truncation bound is returned in ``tail_bound`` (infinite for a point mass).
    """
    band = Band(band)
    cut = BandCutoffs(epsilon)
    x = np.atleast_1d(np.asarray(x_abs, dtype=float))
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ConfigError("x_abs must be finite and non-negative")
    lo, hi, tail = _band_interval(band, cut, sigma)
    order = np.argsort(x)
    xs = x[order]
    value = np.empty(xs.shape, dtype=complex)
    err = np.empty(xs.shape)
    vmax = float(np.max(eval_dp(np.linspace(lo, hi, 257))))
    total_panels = 0
    for start in range(0, xs.size, chunk):
        xc = xs[start:start + chunk]
        scale = min(
            2 * math.pi / (abs(t) * vmax) if t != 0 else math.inf,
            2 * math.pi / max(float(xc[-1]), 1.0),
        )
        h = min(scale / 8.0, (hi - lo) / 8.0, epsilon / 4.0)
        for level in range(max_refine + 1):
            est = []
            for m in (12, 8):
                r, w, npan = _panel_nodes(lo, hi, h, m)
                amp = cut(band, r) * r * r
                if sigma is not None:
                    amp = amp * gaussian_datum_hat(r, sigma)
                f = w * amp * np.exp(1j * t * eval_p(r))
                est.append(bessel_tilde(np.outer(xc, r)) @ f)
                if m == 12:
                    absint = np.abs(bessel_tilde(np.outer(xc, r))) @ np.abs(w * amp)
            hi_est, lo_est = est
            diff = np.abs(hi_est - lo_est)
            ok = (diff <= rtol * np.abs(hi_est)) | (diff <= 1e-13 * absint)
            if ok.all():
                break
            if level == max_refine:
                bad = int(np.argmin(ok))
                raise QuadratureError(
                    "kernel quadrature did not converge at t=%g, |x|=%g (estimate %r, error %.3e)"
                    % (t, xc[bad], 2 * math.pi * _KERNEL_NORM * hi_est[bad], 2 * math.pi * _KERNEL_NORM * diff[bad]),
                    estimate=2 * math.pi * _KERNEL_NORM * hi_est[bad],
                    error=2 * math.pi * _KERNEL_NORM * diff[bad],
                )
            h *= 0.5
        total_panels += npan
        value[start:start + chunk] = 2 * math.pi * _KERNEL_NORM * hi_est
        err[start:start + chunk] = 2 * math.pi * _KERNEL_NORM * diff
    out_v = np.empty_like(value)
    out_e = np.empty_like(err)
    out_v[order] = value
    out_e[order] = err
    return KernelResult(out_v, out_e, tail, total_panels)


def kernel_radial(req_or_t, x_abs=None, band=Band.CRIT, epsilon=DEFAULT_BAND_EPSILON, sigma=None, **kw):
    """Complex kernel value(s); accepts a KernelRequest or ``(t, x_abs, ...)``."""
    if isinstance(req_or_t, KernelRequest):
        req = req_or_t
        res = kernel_radial_full(req.t, req.x_abs, req.band, req.epsilon, req.sigma, **kw)
        return complex(res.value[0])
    res = kernel_radial_full(req_or_t, x_abs, band, epsilon, sigma, **kw)
    return complex(res.value[0]) if np.ndim(x_abs) == 0 else res.value


# --------------------------------------------------------------------------
# spectral route


def apply_halfwave(t: float, f: SpectralField, dispersion=eval_p) -> SpectralField:
    """Multiply every coefficient by ``exp(i t p(|xi|))``; ``t = 0`` returns an exact copy."""
    if t == 0:
        return SpectralField(f.grid, f.data.copy())
    phase = np.exp(1j * t * dispersion(f.grid.kabs))
    return SpectralField(f.grid, phase * f.data)


def band_limited_gaussian(grid: Grid3, band=Band.CRIT, epsilon=DEFAULT_BAND_EPSILON, sigma=1.0, center=None):
    """Spectrum of a unit-mass Gaussian at ``center`` filtered by a band cutoff.

    ``sigma=None`` drops the Gaussian factor (a point mass filtered by the band).
    """
    band = Band(band)
    cut = BandCutoffs(epsilon)
    if center is None:
        center = (0.5 * grid.box_len,) * 3
    k1, k2, k3 = grid.wavenumbers
    shift = np.exp(-1j * (k1 * center[0] + k2 * center[1] + k3 * center[2]))
    spec = cut(band, grid.kabs) * shift
    if sigma is not None:
        spec = spec * gaussian_datum_hat(grid.kabs, sigma)
    return SpectralField(grid, spec)


# --------------------------------------------------------------------------
# decay traces


class NormKind:
    SUP = "sup"
    L10 = "l10"
    L2 = "l2"

    @staticmethod
    def parse(kind: str) -> str:
        k = str(kind).lower()
        aliases = {"inf": "sup", "linf": "sup", "sup": "sup", "l10": "l10", "10": "l10", "l2": "l2", "2": "l2"}
        if k not in aliases:
            raise ConfigError("unknown norm kind %r" % kind)
        return aliases[k]


@dataclass
class DecayTrace:
    times: np.ndarray
    values: np.ndarray
    fitted_exponent: float
    fit_window: tuple
    norm_kind: str
    prefactor: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ConfigError("trace times must be strictly increasing")


def fit_decay_exponent(times, values, window=None, min_points=6):
    """Least-squares slope of ``log(value)`` against ``log(t)`` inside ``window``.

    Returns ``(exponent, prefactor, window)``; the default window is
    ``[t_max/30, t_max]``.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is None:
        window = (t.max() / 30.0, t.max())
    sel = (t >= window[0] * (1 - 1e-12)) & (t <= window[1] * (1 + 1e-12)) & (v > 0)
    if sel.sum() < min_points:
        raise ConfigError("only %d points inside the fit window %r (need %d)" % (sel.sum(), window, min_points))
    slope, icept = np.polyfit(np.log(t[sel]), np.log(v[sel]), 1)
    return float(slope), float(math.exp(icept)), (float(window[0]), float(window[1]))


def _sup_search_grid(t, band, cut, n_coarse=64, n_fine=200):
    lo, hi, _ = _band_interval(band, cut, 1.0)
    vmax = math.sqrt(2.0)
    coarse = np.concatenate([[0.0], np.geomspace(1e-2, 2 * vmax * abs(t) + 10.0, n_coarse)])
    crit = eval_dp(R0) * abs(t)
    fine = np.linspace(0.9 * crit, 1.1 * crit, n_fine)
    rr = np.linspace(max(lo, 1e-9), hi, 257)
    gv = eval_dp(rr)
    band_fine = np.linspace(gv.min() * abs(t), gv.max() * abs(t), n_fine)
    return np.unique(np.concatenate([coarse, fine, band_fine]))


def _radial_sup(t, band, epsilon, sigma):
    cut = BandCutoffs(epsilon)
    xs = _sup_search_grid(t, band, cut)
    vals = np.abs(kernel_radial_full(t, xs, band, epsilon, sigma).value)
    i = int(np.argmax(vals))
    a = xs[max(i - 1, 0)]
    b = xs[min(i + 1, xs.size - 1)]
    best_x, best = xs[i], vals[i]
    if b > a:
        res = minimize_scalar(
            lambda y: -abs(kernel_radial_full(t, y, band, epsilon, sigma).value[0]),
            bounds=(a, b),
            method="bounded",
            options={"xatol": 1e-6 * max(1.0, b)},
        )
        if -res.fun > best:
            best_x, best = float(res.x), float(-res.fun)
    return best, best_x


def _radial_lp(t, band, epsilon, sigma, p, n_per_unit=6):
    # |K|^p integrated against 4 pi x^2 dx up to beyond the fastest group velocity
    xmax = math.sqrt(2.0) * abs(t) + 40.0 + (4.0 * sigma if sigma else 0.0)
    xs = np.linspace(0.0, xmax, int(xmax * n_per_unit) + 2)
    vals = np.abs(kernel_radial_full(t, xs, band, epsilon, sigma).value)
    integrand = vals ** p * 4 * math.pi * xs ** 2
    return float(np.trapezoid(integrand, xs) ** (1.0 / p))


def decay_scan(
    band=Band.CRIT,
    norm_kind="sup",
    datum="radial_gaussian",
    times=None,
    *,
    epsilon=DEFAULT_BAND_EPSILON,
    sigma=None,
    grid: Grid3 | None = None,
    window=None,
    min_points=6,
) -> DecayTrace:
    """Norm of the band-limited propagated datum over ``times`` with a fitted exponent.

    ``datum='radial_gaussian'`` evaluates through ``kernel_radial`` (``sigma``
    None means the bare band kernel); ``datum='grid_field'`` propagates a
    band-limited Gaussian on ``grid`` with ``apply_halfwave``.
    """
    band = Band(band)
    kind = NormKind.parse(norm_kind)
    if times is None:
        times = np.geomspace(10.0, 3000.0, 24)
    times = np.asarray(times, dtype=float)
    if times.size < 12:
        raise ConfigError("a decay scan needs at least 12 times, got %d" % times.size)
    if times.min() < 1.0 or times.max() > 1e4:
        raise ConfigError("decay-scan times must lie in [1, 1e4]")
    values = []
    meta = {"band": band.value, "datum": datum, "epsilon": epsilon, "sigma": sigma}
    if datum == "radial_gaussian":
        argmax = []
        for t in times:
            if kind == "sup":
                v, xb = _radial_sup(t, band, epsilon, sigma)
                argmax.append(xb)
            elif kind == "l10":
                v = _radial_lp(t, band, epsilon, sigma, 10.0)
            else:
                v = _radial_lp(t, band, epsilon, sigma, 2.0)
            values.append(v)
        if argmax:
            meta["argmax_x"] = argmax
    elif datum == "grid_field":
        if grid is None:
            grid = Grid3(96, 128.0)
        f0 = band_limited_gaussian(grid, band, epsilon, sigma)
        for t in times:
            phase_step = np.exp(1j * t * eval_p(grid.kabs))
            u = grid.ifft(phase_step * f0.data)
            p = {"sup": math.inf, "l10": 10.0, "l2": 2.0}[kind]
            values.append(grid.lp_norm(u, p))
        meta["grid"] = (grid.n, grid.box_len)
    else:
        raise ConfigError("unknown datum %r" % (datum,))
    values = np.asarray(values)
    exponent, pref, win = fit_decay_exponent(times, values, window, min_points)
    return DecayTrace(times, values, exponent, win, kind, pref, meta)
