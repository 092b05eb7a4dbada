"""Periodic 3-D spectral grids and Fourier-multiplier operators.

Transform convention: the forward transform approximates
``F(xi) = int f(x) exp(-i x.xi) dx`` by ``h^3 * fftn(f)`` with ``h = L/n``,
the inverse carries the ``(2 pi)^-3 d xi`` measure, which on the torus is
``1/L^3`` times a sum over modes.  With this choice Parseval reads
``||f||^2_{L2(box)} = sum |F|^2 / L^3`` and the coefficients of a product are
``(fg)^(xi) = L^-3 sum_eta F(xi - eta) G(eta)``.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

from .dispersion import ConfigError, smooth_step

__all__ = [
    "ShapeError",
    "SingularMultiplierError",
    "NotAGradientError",
    "SnapshotError",
    "Grid3",
    "RealField",
    "SpectralField",
    "fft_workers",
    "transform_forward",
    "transform_inverse",
    "apply_radial_multiplier",
    "riesz_inverse_apply",
    "spectral_gradient",
    "spectral_curl",
    "lp_bump",
    "dyadic_range",
    "littlewood_paley",
    "dealias",
    "dealias_mask",
    "write_snapshot",
    "read_snapshot",
    "SNAPSHOT_MAGIC",
]


class ShapeError(ValueError):
    pass


class SingularMultiplierError(ArithmeticError):
    """A multiplier is infinite/NaN at a mode where the field is nonzero."""


class NotAGradientError(ValueError):
    pass


class SnapshotError(ValueError):
    pass


def fft_workers() -> int:
    """Worker count for scipy.fft, capped by ``EPSIM_THREADS`` when set."""
    env = os.environ.get("EPSIM_THREADS")
    ncpu = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), ncpu))
        except ValueError:
            raise ConfigError("EPSIM_THREADS must be an integer, got %r" % env) from None
    return ncpu


@dataclass(frozen=True)
class Grid3:
    """Uniform periodic grid with ``n`` points per axis on ``[0, L)^3``."""

    n: int
    box_len: float = 64.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 16 or self.n % 2:
            raise ConfigError("grid n must be an even integer >= 16, got %r" % (self.n,))
        if not (self.box_len > 0 and math.isfinite(self.box_len)):
            raise ConfigError("box length must be positive, got %r" % (self.box_len,))

    # geometry
    @property
    def shape(self):
        return (self.n, self.n, self.n)

    @property
    def spacing(self) -> float:
        return self.box_len / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing ** 3

    @property
    def volume(self) -> float:
        return self.box_len ** 3

    @property
    def k_fundamental(self) -> float:
        return 2.0 * math.pi / self.box_len

    @cached_property
    def axis(self) -> np.ndarray:
        return self.spacing * np.arange(self.n)

    def coords(self):
        """Broadcastable coordinate arrays ``(x1, x2, x3)``."""
        a = self.axis
        return a[:, None, None], a[None, :, None], a[None, None, :]

    # wavenumbers
    @cached_property
    def mode_index(self) -> np.ndarray:
        """Integer mode numbers ``k`` in FFT order, ``k in [-n/2, n/2)``."""
        return np.fft.fftfreq(self.n, d=1.0 / self.n).round().astype(int)

    @cached_property
    def wavenumbers(self):
        k = self.k_fundamental * self.mode_index
        return k[:, None, None], k[None, :, None], k[None, None, :]

    @cached_property
    def kabs(self) -> np.ndarray:
        k1, k2, k3 = self.wavenumbers
        return np.sqrt(k1 ** 2 + k2 ** 2 + k3 ** 2)

    @cached_property
    def rwavenumbers(self):
        """Wavenumbers for the half spectrum returned by ``rfftn``."""
        k = self.k_fundamental * self.mode_index
        kr = self.k_fundamental * np.arange(self.n // 2 + 1)
        return k[:, None, None], k[None, :, None], kr[None, None, :]

    @cached_property
    def rkabs(self) -> np.ndarray:
        k1, k2, k3 = self.rwavenumbers
        return np.sqrt(k1 ** 2 + k2 ** 2 + k3 ** 2)

    @property
    def kmin(self) -> float:
        return self.k_fundamental

    @property
    def kmax(self) -> float:
        return math.sqrt(3.0) * math.pi / self.spacing

    # transforms on raw arrays
    def fft(self, f):
        return self.cell_volume * sfft.fftn(f, workers=fft_workers())

    def ifft(self, F):
        return sfft.ifftn(F, workers=fft_workers()) / self.cell_volume

    def rfft(self, f):
        return self.cell_volume * sfft.rfftn(f, workers=fft_workers())

    def irfft(self, F):
        return sfft.irfftn(F, s=self.shape, workers=fft_workers()) / self.cell_volume

    def integrate(self, f) -> float:
        return float(np.sum(f) * self.cell_volume)

    def lp_norm(self, f, p) -> float:
        """Discrete ``L^p(box)`` norm with cell-volume weights; ``p = inf`` allowed."""
        a = np.abs(f)
        if p == math.inf:
            return float(a.max())
        amax = a.max()
        if amax == 0:
            return 0.0
        return float(amax * (np.sum((a / amax) ** p) * self.cell_volume) ** (1.0 / p))


@dataclass
class RealField:
    grid: Grid3
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.shape != self.grid.shape:
            raise ShapeError("field shape %s does not match grid %s" % (self.data.shape, self.grid.shape))


@dataclass
class SpectralField:
    grid: Grid3
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.shape != self.grid.shape:
            raise ShapeError("spectrum shape %s does not match grid %s" % (self.data.shape, self.grid.shape))

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.data) ** 2) / self.grid.volume))


def transform_forward(f: RealField) -> SpectralField:
    return SpectralField(f.grid, f.grid.fft(f.data))


def transform_inverse(F: SpectralField, real: bool = True) -> RealField:
    """Inverse transform; ``real=True`` drops the (rounding-level) imaginary part."""
    out = F.grid.ifft(F.data)
    return RealField(F.grid, out.real if real else out)


def _multiplier_values(grid: Grid3, m, kabs=None):
    kabs = grid.kabs if kabs is None else kabs
    if callable(m):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            vals = np.asarray(m(kabs))
    else:
        vals = np.asarray(m)
    return np.broadcast_to(vals, kabs.shape)


def apply_radial_multiplier(F: SpectralField, m: Callable | np.ndarray, zero_tol: float = 1e-12) -> SpectralField:
    """Multiply each coefficient by ``m(|xi|)``.

    A non-finite symbol value is accepted only at modes whose coefficient is
    zero to ``zero_tol`` relative to the largest coefficient (the output is 0
    there); otherwise SingularMultiplierError names the offending mode.
    """
    vals = _multiplier_values(F.grid, m)
    bad = ~np.isfinite(vals)
    out = np.where(bad, 0.0, vals) * F.data
    if bad.any():
        scale = np.abs(F.data).max()
        live = bad & (np.abs(F.data) > zero_tol * scale)
        if live.any():
            idx = tuple(int(i) for i in np.argwhere(live)[0])
            kvec = tuple(int(F.grid.mode_index[i]) for i in idx)
            raise SingularMultiplierError(
                "multiplier is not finite at mode k=%s (|xi|=%.6g) where the field is nonzero"
                % (kvec, float(F.grid.kabs[idx]))
            )
    return SpectralField(F.grid, out)


def spectral_gradient(F: SpectralField):
    return [SpectralField(F.grid, 1j * k * F.data) for k in F.grid.wavenumbers]


def spectral_curl(V: Sequence[SpectralField]):
    k1, k2, k3 = V[0].grid.wavenumbers
    v1, v2, v3 = (v.data for v in V)
    g = V[0].grid
    return [
        SpectralField(g, 1j * (k2 * v3 - k3 * v2)),
        SpectralField(g, 1j * (k3 * v1 - k1 * v3)),
        SpectralField(g, 1j * (k1 * v2 - k2 * v1)),
    ]


def riesz_inverse_apply(v: Sequence[RealField], curl_tol: float = 1e-10) -> RealField:
    """``|nabla| psi`` from a gradient field ``v = grad psi``.

    Computed per mode as ``-i xi.v^ / |xi|`` with the zero mode set to 0.
    Raises NotAGradientError when the spectral curl exceeds ``curl_tol``
    (relative to ``max(1, ||grad v||)``).
    """
    if len(v) != 3:
        raise ShapeError("expected three velocity components")
    grid = v[0].grid
    V = [transform_forward(c) for c in v]
    curl = spectral_curl(V)
    curl_norm = math.sqrt(sum(c.l2_norm() ** 2 for c in curl))
    grad_norm = math.sqrt(sum(np.sum(np.abs(grid.kabs * c.data) ** 2) for c in V) / grid.volume)
    if curl_norm > curl_tol * max(1.0, grad_norm):
        raise NotAGradientError("velocity has spectral curl %.3e, not a gradient" % curl_norm)
    k1, k2, k3 = grid.wavenumbers
    div = 1j * (k1 * V[0].data + k2 * V[1].data + k3 * V[2].data)
    kabs = grid.kabs
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(kabs > 0, -div / kabs, 0.0)
    return transform_inverse(SpectralField(grid, out))


# --------------------------------------------------------------------------
# Littlewood-Paley


def _lp_cap(r):
    """1 on ``[0, 1]``, 0 on ``[2, inf)``, smooth in between."""
    return 1.0 - smooth_step(np.asarray(r, dtype=float) - 1.0)


def lp_bump(r):
    """Annulus bump ``phi(r) = cap(r) - cap(2r)`` supported in ``[1/2, 2]``, ``phi(1) = 1``.

    Dyadic dilates telescope, so ``sum_N phi(r/N) = 1`` for every ``r > 0``.
    """
    r = np.asarray(r, dtype=float)
    return _lp_cap(r) - _lp_cap(2.0 * r)


def dyadic_range(grid: Grid3):
    """All dyadic ``N = 2^j`` whose shells are needed to cover the grid's nonzero modes."""
    jlo = math.floor(math.log2(grid.kmin))
    jhi = math.ceil(math.log2(grid.kmax))
    return [2.0 ** j for j in range(jlo, jhi + 1)]


def littlewood_paley(F: SpectralField, N: float) -> SpectralField:
    """Smooth projection ``P_N`` onto ``|xi| ~ N``."""
    j = math.log2(N) if N > 0 else float("nan")
    if not math.isfinite(j) or abs(j - round(j)) > 1e-12:
        raise ConfigError("Littlewood-Paley scale must be a power of two, got %r" % (N,))
    rng = dyadic_range(F.grid)
    if not (rng[0] <= N <= rng[-1]):
        raise ConfigError("dyadic scale %g outside the grid range [%g, %g]" % (N, rng[0], rng[-1]))
    return SpectralField(F.grid, lp_bump(F.grid.kabs / N) * F.data)


# --------------------------------------------------------------------------
# dealiasing


def dealias_mask(grid: Grid3, half: bool = False) -> np.ndarray:
    """Boolean mask of modes kept by the 2/3 rule (all ``|k_i| <= n/3``)."""
    keep = np.abs(grid.mode_index) <= grid.n / 3.0
    kz = np.arange(grid.n // 2 + 1) <= grid.n / 3.0 if half else keep
    return keep[:, None, None] & keep[None, :, None] & kz[None, None, :]


def dealias(F: SpectralField) -> SpectralField:
    return SpectralField(F.grid, np.where(dealias_mask(F.grid), F.data, 0.0))


# --------------------------------------------------------------------------
# binary snapshots

SNAPSHOT_MAGIC = b"EPI1"
_HEADER = struct.Struct("<4sIdd")


def write_snapshot(path, grid: Grid3, t: float, rho, psi) -> None:
    """Write ``EPI1 | u32 n | f64 L | f64 t | rho | psi`` (little-endian, x fastest)."""
    rho = np.asarray(rho, dtype="<f8")
    psi = np.asarray(psi, dtype="<f8")
    if rho.shape != grid.shape or psi.shape != grid.shape:
        raise ShapeError("snapshot arrays must match the grid shape")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, grid.n, float(grid.box_len), float(t)))
        fh.write(rho.tobytes(order="F"))
        fh.write(psi.tobytes(order="F"))


def read_snapshot(path):
    """Return ``(grid, t, rho, psi)`` from a snapshot file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise SnapshotError("truncated snapshot header")
    magic, n, L, t = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotError("bad magic %r" % magic)
    count = n ** 3
    expect = _HEADER.size + 2 * 8 * count
    if len(raw) != expect:
        raise SnapshotError("snapshot has %d bytes, expected %d" % (len(raw), expect))
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    rho = body[:count].reshape((n, n, n), order="F").astype(float)
    psi = body[count:].reshape((n, n, n), order="F").astype(float)
    return Grid3(n, L), t, rho, psi
