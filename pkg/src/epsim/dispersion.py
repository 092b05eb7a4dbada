"""Dispersion relation of the linearised ion Euler-Poisson system.

The relation is ``p(r) = r q(r)`` with ``q(r) = sqrt((2 + r^2) / (1 + r^2))``.
Everything here is a closed form evaluated in float64 and vectorised over
numpy arrays.  The module also owns the four quadratic resonance phases,
the phase lower-bound right-hand side, and the smooth frequency bands that
split the half-wave group into low / critical / high parts.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "DomainError",
    "ConfigError",
    "PhaseIndex",
    "Band",
    "DispersionProfile",
    "BandCutoffs",
    "eval_p",
    "eval_q",
    "eval_dq",
    "eval_dp",
    "eval_d2p",
    "eval_d3p",
    "critical_point",
    "R0",
    "Q0",
    "eval_phase",
    "phase_bound_rhs",
    "smooth_step",
    "band_cutoff",
    "DEFAULT_BAND_EPSILON",
]


class DomainError(ValueError):
    """Radius outside the domain of the dispersion relation."""


class ConfigError(ValueError):
    """Invalid configuration parameter (shared by all modules)."""


R0 = math.sqrt(1.0 + math.sqrt(7.0))
Q0 = math.sqrt(2.0)
DEFAULT_BAND_EPSILON = 0.3


def _radius(r):
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise DomainError("radius must be finite")
    if np.any(r < 0):
        raise DomainError("radius must be non-negative, got min %r" % float(np.min(r)))
    return r


def _out(r, value):
    return float(value) if np.ndim(r) == 0 else value


def eval_q(r):
    r = _radius(r)
    r2 = r * r
    # 1 + 1/(1+r^2) is exactly (2+r^2)/(1+r^2) without the large-r cancellation
    return _out(r, np.sqrt(1.0 + 1.0 / (1.0 + r2)))


def eval_q_minus_one(r):
    """``q(r) - 1`` without cancellation, ``1 / ((1 + r^2)(q + 1))``."""
    r = _radius(r)
    q = np.sqrt(1.0 + 1.0 / (1.0 + r * r))
    return _out(r, 1.0 / ((1.0 + r * r) * (q + 1.0)))


def eval_p(r):
    """Dispersion relation ``p(r) = r q(r)``; monotone increasing on ``[0, inf)``."""
    r = _radius(r)
    return _out(r, r * np.sqrt(1.0 + 1.0 / (1.0 + r * r)))


def eval_dq(r):
    r = _radius(r)
    a = 1.0 + r * r
    q = np.sqrt(1.0 + 1.0 / a)
    return _out(r, -r / (a * a * q))


def eval_dp(r):
    r = _radius(r)
    a = 1.0 + r * r
    b = a + 1.0
    return _out(r, (a + 1.0 / a) / np.sqrt(a * b))


def eval_d2p(r):
    r = _radius(r)
    r2 = r * r
    a = 1.0 + r2
    b = 2.0 + r2
    return _out(r, r * (r2 * r2 - 2.0 * r2 - 6.0) / (a * (a * b) ** 1.5))


def eval_d3p(r):
    # (r^4-2r^3-4r-2)(r^4+2r^3+4r-2) expanded in r^2
    r = _radius(r)
    u = r * r
    a = 1.0 + u
    b = 2.0 + u
    poly = (((u - 4.0) * u - 20.0) * u - 16.0) * u + 4.0
    return _out(r, -3.0 * poly / (a ** 3.5 * b ** 2.5))


def critical_point() -> float:
    """Unique positive root of ``p''``, bracketed on ``[1, 3]``."""
    return brentq(eval_d2p, 1.0, 3.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


@dataclass(frozen=True)
class DispersionProfile:
    """Stateless handle bundling the closed forms and the constants ``r0``, ``q0``."""

    r0: float = R0
    q0: float = Q0

    p = staticmethod(eval_p)
    q = staticmethod(eval_q)
    dq = staticmethod(eval_dq)
    dp = staticmethod(eval_dp)
    d2p = staticmethod(eval_d2p)
    d3p = staticmethod(eval_d3p)

    def table(self, radii):
        """Columns r, p, q, dp, d2p, d3p as a 2-D array."""
        r = np.asarray(radii, dtype=float)
        return np.column_stack([r, eval_p(r), eval_q(r), eval_dp(r), eval_d2p(r), eval_d3p(r)])


# --------------------------------------------------------------------------
# resonance phases


class PhaseIndex(enum.IntEnum):
    PHI1 = 1  # p(xi) - p(xi-eta) - p(eta)
    PHI2 = 2  # p(xi) + p(xi-eta) + p(eta)
    PHI3 = 3  # p(xi) - p(xi-eta) + p(eta)
    PHI4 = 4  # p(xi) + p(xi-eta) - p(eta)


_PHASE_SIGNS = {
    PhaseIndex.PHI1: (-1.0, -1.0),
    PhaseIndex.PHI2: (1.0, 1.0),
    PhaseIndex.PHI3: (-1.0, 1.0),
    PhaseIndex.PHI4: (1.0, -1.0),
}


def _norm(v):
    return np.sqrt(np.sum(np.asarray(v, dtype=float) ** 2, axis=-1))


def eval_phase(j, xi, eta):
    """Resonance phase ``Phi_j(xi, eta)`` for 3-vectors (broadcast over leading axes)."""
    s_mid, s_last = _PHASE_SIGNS[PhaseIndex(j)]
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    val = eval_p(_norm(xi)) + s_mid * eval_p(_norm(xi - eta)) + s_last * eval_p(_norm(eta))
    return _out(_norm(xi), val)


def _cos_between(u, v, nu, nv):
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.sum(u * v, axis=-1) / (nu * nv)
    return np.clip(np.nan_to_num(c, nan=1.0), -1.0, 1.0)


def phase_bound_rhs(xi, eta):
    """Right side of the phase lower bound, without its implied constant.

    With ``a = xi``, ``b = xi - eta``, ``c = eta`` (``b`` and ``c`` swapped if
    needed so that ``|c| <= |b|``) returns::

        |c| (1 - cos[c, a] + 1 - cos[b, a]) + |a||b||c| / ((1 + |a||b|)(1 + |c|^2))

    Degenerate triples with ``|a| = 0`` or ``|c| = 0`` give 0.
    """
    a = np.asarray(xi, dtype=float)
    c = np.asarray(eta, dtype=float)
    a, c = np.broadcast_arrays(a, c)
    b = a - c
    na, nb, nc = _norm(a), _norm(b), _norm(c)
    swap = nc > nb
    b, c = np.where(swap[..., None], c, b), np.where(swap[..., None], b, c)
    nb, nc = np.where(swap, nc, nb), np.where(swap, nb, nc)
    angular = nc * ((1.0 - _cos_between(c, a, nc, na)) + (1.0 - _cos_between(b, a, nb, na)))
    radial = na * nb * nc / ((1.0 + na * nb) * (1.0 + nc * nc))
    rhs = np.where((na == 0) | (nc == 0), 0.0, angular + radial)
    return _out(na, rhs)


# --------------------------------------------------------------------------
# smooth frequency bands


def _mollifier(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smooth_step(x):
    """C-infinity step: 0 for ``x <= 0``, 1 for ``x >= 1``, built from ``exp(-1/x)``."""
    x = np.asarray(x, dtype=float)
    f0 = _mollifier(x)
    f1 = _mollifier(1.0 - x)
    return _out(x, f0 / (f0 + f1))


class Band(str, enum.Enum):
    LOW = "low"
    CRIT = "crit"
    HIGH = "high"
    FULL = "full"


@dataclass(frozen=True)
class BandCutoffs:
    """Partition of unity ``psi_0 + psi_r0 + psi_inf = 1`` on ``r >= 0``.

    ``psi_r0`` is 1 on ``|r - r0| <= eps`` and 0 on ``|r - r0| >= 2 eps``;
    ``psi_0`` and ``psi_inf`` are the remainders of ``1 - psi_r0`` below and
    above ``r0``.
    """

    epsilon: float = DEFAULT_BAND_EPSILON

    def __post_init__(self):
        eps = self.epsilon
        if not (0.0 < eps < R0 / 4.0):
            raise ConfigError("band epsilon must lie in (0, r0/4), got %r" % (eps,))
        # the critical band relies on p''' keeping one sign across its support
        rr = np.linspace(R0 - 2 * eps, R0 + 2 * eps, 401)
        d3 = eval_d3p(rr)
        if not (np.all(d3 > 0) or np.all(d3 < 0)):
            raise ConfigError("p''' changes sign on [r0-2eps, r0+2eps] for eps=%r" % (eps,))

    @property
    def support(self):
        """Radial support ``(lo, hi)`` of each band; ``hi`` is ``inf`` for the high band."""
        eps = self.epsilon
        return {
            Band.LOW: (0.0, R0 - eps),
            Band.CRIT: (R0 - 2 * eps, R0 + 2 * eps),
            Band.HIGH: (R0 + eps, math.inf),
            Band.FULL: (0.0, math.inf),
        }

    def crit(self, r):
        r = _radius(r)
        eps = self.epsilon
        return _out(r, 1.0 - smooth_step((np.abs(r - R0) - eps) / eps))

    def low(self, r):
        r = _radius(r)
        rest = 1.0 - np.asarray(self.crit(r))
        return _out(r, np.where(r < R0, rest, 0.0))

    def high(self, r):
        r = _radius(r)
        rest = 1.0 - np.asarray(self.crit(r))
        return _out(r, np.where(r > R0, rest, 0.0))

    def __call__(self, band, r):
        band = Band(band)
        if band is Band.FULL:
            r = _radius(r)
            return _out(r, np.ones_like(r))
        return getattr(self, band.value)(r)


def band_cutoff(band, epsilon, r):
    """Evaluate the smooth cutoff of ``band`` ('low', 'crit', 'high') at radius ``r``."""
    return BandCutoffs(epsilon)(band, r)
