"""Sobolev-type norms on the periodic box and the energy bookkeeping built on them.

All spectral norms use ``||f||^2 = L^-3 sum |f^(xi)|^2 w(xi)`` with the
transform convention of :mod:`epsim.fields`; ``W^{k,p}`` norms are Bessel
potentials ``(1 - Delta)^{k/2}`` followed by cell-weighted ``L^p``
quadrature.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .dispersion import ConfigError
from .fields import Grid3, RealField, SpectralField

__all__ = [
    "NormKind",
    "NormSpec",
    "MeanError",
    "norm",
    "energy_weight",
    "EnergyReport",
    "energy_monotonicity_check",
]


class MeanError(ConfigError):
    """``|nabla|^{-1}`` requested on a field with nonzero mean."""


class NormKind(str, enum.Enum):
    L2 = "L2"
    HS = "Hs"
    HDOT = "Hdot"
    WKP = "Wkp"
    Y = "Y"
    XSNAP = "Xsnap"
    ENERGY = "Energy"


@dataclass(frozen=True)
class NormSpec:
    kind: NormKind
    s: float = 0.0
    k: float = 0.0
    p: float = 2.0
    t: float = 0.0
    tau: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", NormKind(self.kind))
        if not (self.p > 1):
            raise ConfigError("Lebesgue exponent must satisfy p > 1, got %r" % (self.p,))
        for name in ("s", "k", "t"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError("%s must be finite" % name)
        if self.tau < 0 or int(self.tau) != self.tau:
            raise ConfigError("energy order must be a non-negative integer")

    # convenience constructors
    @classmethod
    def L2(cls):
        return cls(NormKind.L2)

    @classmethod
    def Hs(cls, s):
        return cls(NormKind.HS, s=s)

    @classmethod
    def Hdot(cls, s):
        return cls(NormKind.HDOT, s=s)

    @classmethod
    def Wkp(cls, k, p):
        return cls(NormKind.WKP, k=k, p=p)

    @classmethod
    def Y(cls, k=5):
        return cls(NormKind.Y, k=k)

    @classmethod
    def Xsnap(cls, k=5, t=0.0):
        return cls(NormKind.XSNAP, k=k, t=t)

    @classmethod
    def Energy(cls, tau):
        return cls(NormKind.ENERGY, tau=int(tau))

    @classmethod
    def parse(cls, text: str) -> "NormSpec":
        """Parse ``'Hs(1.5)'``, ``'Wkp(2,10)'``, ``'Xsnap(5,3.0)'``, ``'L2'`` ..."""
        text = text.strip()
        name, _, rest = text.partition("(")
        args = [float(a) for a in rest.rstrip(")").split(",") if a.strip()] if rest else []
        try:
            kind = NormKind(name)
        except ValueError:
            raise ConfigError("unknown norm %r" % text) from None
        ctor = {
            NormKind.L2: cls.L2,
            NormKind.HS: cls.Hs,
            NormKind.HDOT: cls.Hdot,
            NormKind.WKP: cls.Wkp,
            NormKind.Y: cls.Y,
            NormKind.XSNAP: cls.Xsnap,
            NormKind.ENERGY: cls.Energy,
        }[kind]
        try:
            return ctor(*args)
        except TypeError:
            raise ConfigError("wrong number of parameters in %r" % text) from None


# --------------------------------------------------------------------------


def _spectrum(f, grid):
    """Full-spectrum coefficients and grid of a RealField/SpectralField/array."""
    if isinstance(f, SpectralField):
        return f.data, f.grid
    if isinstance(f, RealField):
        return f.grid.fft(f.data), f.grid
    if grid is None:
        raise ConfigError("a grid is required for raw arrays")
    return grid.fft(np.asarray(f)), grid


def _l2_weighted(F, grid, weight):
    return math.sqrt(float(np.sum(weight * np.abs(F) ** 2)) / grid.volume)


def _check_mean(F, grid, tol=1e-12):
    scale = float(np.abs(F).max()) or 1.0
    if abs(F[0, 0, 0]) > tol * scale:
        raise MeanError("|nabla|^-1 needs a mean-zero field (mean = %.3e)" % (abs(F[0, 0, 0]) / grid.volume))


def _inv_grad(grid):
    k = grid.kabs
    with np.errstate(divide="ignore"):
        return np.where(k > 0, 1.0 / np.where(k > 0, k, 1.0), 0.0)


def _hdot_weight(grid, s):
    k = grid.kabs
    if s >= 0:
        return k ** (2 * s)
    with np.errstate(divide="ignore"):
        return np.where(k > 0, np.where(k > 0, k, 1.0) ** (2 * s), 0.0)


def _bessel_lp(F, grid, k, p):
    g = grid.ifft((1.0 + grid.kabs ** 2) ** (0.5 * k) * F)
    if np.isrealobj(g) or np.abs(g.imag).max() <= 1e-13 * max(np.abs(g.real).max(), 1e-300):
        g = g.real
    return grid.lp_norm(g, p)


def energy_weight(grid: Grid3, tau: int) -> np.ndarray:
    """``sum_{|a| <= tau} xi^{2a}`` over multi-indices ``a`` (the spectral form of the derivative sum)."""
    k1, k2, k3 = (k ** 2 for k in grid.wavenumbers)
    w = np.zeros(grid.shape)
    for a, b in itertools.product(range(tau + 1), repeat=2):
        for c in range(tau + 1 - a - b) if a + b <= tau else ():
            w = w + k1 ** a * k2 ** b * k3 ** c
    return w


def _energy(state, tau):
    rho = state.rho
    grid = rho.grid
    W = energy_weight(grid, tau)
    if np.any(1.0 + rho.data <= 0):
        raise ConfigError("energy needs 1 + rho > 0")
    parts = [grid.fft(np.log1p(rho.data))]
    psi_hat = grid.fft(state.psi.data)
    parts += [1j * k * psi_hat for k in grid.wavenumbers]
    total = sum(float(np.sum(W * np.abs(P) ** 2)) for P in parts)
    R = grid.fft(rho.data)
    total += float(np.sum(W * np.abs(R) ** 2 / (1.0 + grid.kabs ** 2)))
    return total / grid.volume


def norm(f, spec: NormSpec, grid: Grid3 | None = None) -> float:
    """Evaluate ``spec`` on ``f``.

    ``f`` is a RealField, SpectralField or array (then ``grid`` is needed),
    real or complex.  ``Energy`` takes a state with ``rho`` and ``psi``
    attributes and returns the (squared, as in the energy identity) sum.
    """
    spec = spec if isinstance(spec, NormSpec) else NormSpec.parse(str(spec))
    if spec.kind is NormKind.ENERGY:
        return _energy(f, spec.tau)
    F, grid = _spectrum(f, grid)
    jap2 = 1.0 + grid.kabs ** 2
    kind = spec.kind
    if kind is NormKind.L2:
        return _l2_weighted(F, grid, 1.0)
    if kind is NormKind.HS:
        return _l2_weighted(F, grid, jap2 ** spec.s)
    if kind is NormKind.HDOT:
        if spec.s < 0:
            _check_mean(F, grid)
        return _l2_weighted(F, grid, _hdot_weight(grid, spec.s))
    if kind is NormKind.WKP:
        return _bessel_lp(F, grid, spec.k, spec.p)
    if kind is NormKind.Y:
        _check_mean(F, grid)
        ig = _inv_grad(grid)
        low = _l2_weighted(F, grid, ig ** 2 * jap2 ** (2 * spec.k + 1))
        return low + _bessel_lp(F, grid, spec.k + 12.0 / 5.0, 10.0 / 9.0)
    if kind is NormKind.XSNAP:
        _check_mean(F, grid)
        ig = _inv_grad(grid)
        low = _l2_weighted(F, grid, ig ** 2 * jap2 ** (2 * spec.k + 1))
        return low + (1.0 + spec.t) ** (16.0 / 15.0) * _bessel_lp(F, grid, spec.k, 10.0)
    raise ConfigError("unsupported norm kind %r" % kind)  # pragma: no cover


# --------------------------------------------------------------------------
# energy inequality bookkeeping


@dataclass
class EnergyReport:
    constant: float
    flagged: bool
    times: np.ndarray
    energy: np.ndarray
    integral: np.ndarray
    notes: list = field(default_factory=list)


def energy_monotonicity_check(diag=None, *, times=None, energy=None, xnorm=None) -> EnergyReport:
    """Measure ``C`` in ``E(t) <= E(0) + C int_0^t (1+s)^{-16/15} X(s)^3 ds``.

    From a Diagnostics object the energy is ``h2k^2`` and the X surrogate is
    ``hm1 + h2k + l10w``; explicit arrays may be passed instead.  ``C`` is the
    largest ratio ``(E - E0) / I`` over rows with ``I > 0`` (0 if ``E`` never
    exceeds ``E0``).  The run is flagged when ``E`` has at least doubled
    while the integral term is smaller than the growth it should explain.
    """
    if diag is not None:
        times = diag.column("t")
        h2k = diag.column("h2k")
        energy = h2k ** 2
        xnorm = diag.column("hm1") + h2k + diag.column("l10w")
    t = np.asarray(times, dtype=float)
    E = np.asarray(energy, dtype=float)
    X = np.asarray(xnorm, dtype=float)
    notes = []
    if t.size == 0:
        return EnergyReport(float("nan"), False, t, E, np.zeros(0), ["empty series"])
    integrand = (1.0 + t) ** (-16.0 / 15.0) * X ** 3
    I = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (integrand[1:] + integrand[:-1]))])
    growth = E - E[0]
    live = I > 0
    if not np.any(live) or np.all(growth[live] <= 0):
        C = 0.0 if np.any(live) else float("nan")
        if not np.any(live):
            notes.append("integral term vanishes; constant undefined")
    else:
        C = float(np.max(growth[live] / I[live]))
    doubled = (E >= 2.0 * E[0]) & (E[0] > 0)
    flagged = bool(np.any(doubled & (I < growth)))
    if flagged:
        notes.append("energy at least doubled while the cubic integral stayed below the growth")
    return EnergyReport(C, flagged, t, E, I, notes)
