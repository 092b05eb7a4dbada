"""Pseudo-spectral evolution of the ion Euler-Poisson system with Boltzmann electrons.

Unknowns are the density perturbation ``rho`` and the velocity potential
``psi`` (``v = grad psi``)::

    d_t rho = -div((1 + rho) grad psi)
    d_t psi = -|grad psi|^2 / 2 - ln(1 + rho) - phi
    Delta phi = exp(phi) - 1 - rho

Internally the state is the pair ``(alpha1^, alpha2^)`` on the rfft half
spectrum, where ``alpha_{1,2} = rho -/+ i q(|nabla|)^{-1} |nabla| psi``.  The
linear part of the system is then the scalar ``+/- i p(|xi|)`` and is
integrated exactly; only the nonlinear remainder goes through RK4.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields as dc_fields, replace

import numpy as np

from .dispersion import ConfigError, eval_p, eval_q
from .fields import (
    Grid3,
    RealField,
    ShapeError,
    dealias_mask,
    write_snapshot,
)

__all__ = [
    "Mode",
    "Integrator",
    "SolverConfig",
    "FluidState",
    "AlphaPair",
    "Diagnostics",
    "DensityError",
    "PoissonError",
    "CFLError",
    "RunAborted",
    "boltzmann_poisson_solve",
    "rhs",
    "to_alpha",
    "from_alpha",
    "step",
    "run",
    "vector_velocity_run",
    "gaussian_initial_state",
    "DIAG_COLUMNS",
]


class DensityError(ArithmeticError):
    """``1 + rho`` is not positive somewhere."""


class PoissonError(ArithmeticError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = list(history)


class CFLError(ArithmeticError):
    pass


class RunAborted(RuntimeError):
    """A run stopped on an error; ``diagnostics`` holds the rows written so far."""

    def __init__(self, msg, diagnostics):
        super().__init__(msg)
        self.diagnostics = diagnostics


class Mode(str, enum.Enum):
    EULER_POISSON = "euler_poisson"
    PURE_EULER = "pure_euler"


class Integrator(str, enum.Enum):
    IF_RK4 = "rk4_integrating_factor"
    ETDRK4 = "etdrk4"
    RK4 = "rk4"  # plain RK4 on the full right-hand side, used for cross-checks


@dataclass(frozen=True)
class SolverConfig:
    n: int = 64
    box_len: float = 64.0
    dt: float = 0.25
    t_end: float = 50.0
    poisson_tol: float = 1e-12
    poisson_max_iter: int = 200
    mode: Mode = Mode.EULER_POISSON
    integrator: Integrator = Integrator.IF_RK4
    snapshot_every: int = 4
    k_norm: int = 5
    # initial data
    amplitude: float = 1e-3
    sigma: float = 4.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "integrator", Integrator(self.integrator))
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("dt must be positive")
        if not (self.t_end >= 0):
            raise ConfigError("t_end must be non-negative")
        if self.poisson_tol <= 0 or self.poisson_max_iter < 1:
            raise ConfigError("poisson_tol must be > 0 and poisson_max_iter >= 1")
        if self.snapshot_every < 1:
            raise ConfigError("snapshot_every must be >= 1")
        if self.k_norm < 0:
            raise ConfigError("k_norm must be >= 0")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        Grid3(self.n, self.box_len)

    @property
    def grid(self) -> Grid3:
        return Grid3(self.n, self.box_len)

    @classmethod
    def from_mapping(cls, values: dict) -> "SolverConfig":
        """Build from string or typed values; unknown keys raise ConfigError."""
        known = {f.name: f for f in dc_fields(cls)}
        kw = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError("unknown config key %r" % key)
            default = known[key].default
            try:
                if isinstance(default, enum.Enum):
                    kw[key] = type(default)(raw)
                elif isinstance(default, bool):
                    kw[key] = raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes")
                elif isinstance(default, int):
                    kw[key] = int(raw)
                else:
                    kw[key] = float(raw)
            except ValueError as exc:
                raise ConfigError("bad value %r for %s: %s" % (raw, key, exc)) from None
        return cls(**kw)

    def as_dict(self):
        out = {}
        for f in dc_fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, enum.Enum) else v
        return out


@dataclass
class FluidState:
    rho: RealField
    psi: RealField
    t: float = 0.0

    def __post_init__(self):
        if self.rho.grid != self.psi.grid:
            raise ShapeError("rho and psi live on different grids")

    @property
    def grid(self) -> Grid3:
        return self.rho.grid


@dataclass
class AlphaPair:
    alpha1: np.ndarray
    alpha2: np.ndarray
    grid: Grid3


DIAG_COLUMNS = ("t", "mass", "sup_rho", "sup_v", "h2k", "hm1", "l10w", "poisson_res", "curl_res")


@dataclass
class Diagnostics:
    rows: list = field(default_factory=list)
    partial: str | None = None
    meta: dict = field(default_factory=dict)

    def column(self, name) -> np.ndarray:
        i = DIAG_COLUMNS.index(name)
        return np.array([np.nan if r[i] is None else r[i] for r in self.rows], dtype=float)

    def append(self, **kw):
        self.rows.append(tuple(kw.get(c) for c in DIAG_COLUMNS))


# --------------------------------------------------------------------------
# spectral helpers on the rfft half spectrum


class _Spectral:
    """Cached symbols for one grid and mode."""

    def __init__(self, grid: Grid3, mode: Mode):
        self.grid = grid
        self.mode = Mode(mode)
        k1, k2, k3 = grid.rwavenumbers
        self.k = (k1, k2, k3)
        self.kabs = grid.rkabs
        self.k2 = self.kabs ** 2
        self.mask = dealias_mask(grid, half=True)
        if self.mode is Mode.PURE_EULER:
            self.q = np.ones_like(self.kabs)
            self.p = self.kabs.copy()
        else:
            self.q = eval_q(self.kabs)
            self.p = eval_p(self.kabs)
        self.m = self.kabs / self.q  # |xi| / q
        with np.errstate(divide="ignore"):
            self.minv = np.where(self.kabs > 0, self.q / np.where(self.kabs > 0, self.kabs, 1.0), 0.0)
        # Parseval weights for the half spectrum
        w = np.full(self.kabs.shape, 2.0)
        w[..., 0] = 1.0
        if grid.n % 2 == 0:
            w[..., -1] = 1.0
        self.weights = w

    def l2sq(self, F):
        return float(np.sum(self.weights * np.abs(F) ** 2) / self.grid.volume)

    def fwd(self, f):
        return self.grid.rfft(f)

    def inv(self, F):
        return self.grid.irfft(F)

    def dealias(self, F):
        return np.where(self.mask, F, 0.0)


_CACHE: dict = {}


def _spectral(grid: Grid3, mode) -> _Spectral:
    key = (grid.n, grid.box_len, Mode(mode))
    sp = _CACHE.get(key)
    if sp is None:
        if len(_CACHE) > 8:
            _CACHE.clear()
        sp = _CACHE[key] = _Spectral(grid, mode)
    return sp


# --------------------------------------------------------------------------
# Poisson


def _poisson_spectral(sp: _Spectral, rho, tol, max_iter, phi_hat=None, rho_hat=None):
    """Fixed-point iteration ``(1 - Delta) phi_{k+1} = rho + phi_k - (e^{phi_k} - 1)``.

    Returns ``(phi, phi_hat, residual, history)``.  The residual of iterate
    ``k`` is ``(1 - Delta)(phi_{k+1} - phi_k)``, so it comes for free.
    """
    if rho_hat is None:
        rho_hat = sp.fwd(rho)
    den = 1.0 + sp.k2
    if phi_hat is None:
        phi_hat = rho_hat / den
    history = []
    for it in range(max_iter + 1):
        phi = sp.inv(phi_hat)
        g_hat = sp.fwd(rho + phi - np.expm1(phi))
        res = math.sqrt(sp.l2sq(g_hat - den * phi_hat))
        history.append(res)
        if res <= tol:
            return phi, phi_hat, res, history
        if not math.isfinite(res):
            break
        if len(history) > 10 and res > 0.999 * history[-11]:
            raise PoissonError("Poisson iteration stagnated at residual %.3e" % res, history)
        if it == max_iter:
            break
        phi_hat = g_hat / den
    raise PoissonError(
        "Poisson iteration did not reach tol %.1e in %d iterations (residual %.3e)" % (tol, max_iter, history[-1]),
        history,
    )


def boltzmann_poisson_solve(rho: RealField, tol=1e-12, max_iter=200, return_info=False):
    """Solve ``Delta phi = e^phi - 1 - rho`` on the periodic box.

    With ``return_info`` the residual history is returned as well.
    """
    r = np.asarray(rho.data, dtype=float)
    if np.any(1.0 + r <= 0):
        raise DensityError("1 + rho <= 0 (min rho = %.6g)" % r.min())
    sp = _spectral(rho.grid, Mode.EULER_POISSON)
    phi, _, res, hist = _poisson_spectral(sp, r, tol, max_iter)
    out = RealField(rho.grid, phi)
    if return_info:
        return out, {"residual": res, "history": hist, "iterations": len(hist) - 1}
    return out


def poisson_residual(rho: RealField, phi: RealField) -> float:
    """``||Delta phi - (e^phi - 1 - rho)||_{L^2(box)}``."""
    sp = _spectral(rho.grid, Mode.EULER_POISSON)
    lap = sp.inv(-sp.k2 * sp.fwd(phi.data))
    return math.sqrt(rho.grid.integrate((lap - np.expm1(phi.data) + rho.data) ** 2))


# --------------------------------------------------------------------------
# right-hand side


class _Rhs:
    """Nonlinear right-hand side for one grid/mode, with warm-started Poisson solves."""

    def __init__(self, grid, config: SolverConfig):
        self.sp = _spectral(grid, config.mode)
        self.cfg = config
        self.phi_hat = None
        self.last_res = 0.0
        self.last_sup_v = 0.0

    def fields(self, rho_hat, psi_hat):
        sp = self.sp
        rho = sp.inv(sp.dealias(rho_hat))
        grad = [sp.inv(1j * k * sp.dealias(psi_hat)) for k in sp.k]
        return rho, grad

    def phi(self, rho, rho_hat):
        if self.cfg.mode is Mode.PURE_EULER:
            self.last_res = 0.0
            return None
        _, self.phi_hat, self.last_res, _ = _poisson_spectral(
            self.sp, rho, self.cfg.poisson_tol, self.cfg.poisson_max_iter, self.phi_hat, rho_hat
        )
        return self.phi_hat

    def nonlinear(self, rho_hat, psi_hat):
        """Nonlinear parts ``(N_rho^, N_psi^)`` of the potential-form system."""
        sp = self.sp
        rho, grad = self.fields(rho_hat, psi_hat)
        rho_full = sp.inv(rho_hat)
        if np.any(1.0 + rho_full <= 0):
            raise DensityError("1 + rho <= 0 (min rho = %.6g)" % rho_full.min())
        self.last_sup_v = float(np.sqrt(sum(g * g for g in grad)).max())
        flux = [sp.fwd(rho * g) for g in grad]
        n_rho = -sp.dealias(1j * (sp.k[0] * flux[0] + sp.k[1] * flux[1] + sp.k[2] * flux[2]))
        quad = 0.5 * sum(g * g for g in grad) + (np.log1p(rho) - rho)
        n_psi = -sp.dealias(sp.fwd(quad))
        phi_hat = self.phi(rho_full, rho_hat)
        if phi_hat is not None:
            n_psi -= sp.dealias(phi_hat - rho_hat / (1.0 + sp.k2))
        n_psi[0, 0, 0] = 0.0  # gauge: mean(d_t psi) = 0
        return n_rho, n_psi

    def linear(self, rho_hat, psi_hat):
        sp = self.sp
        return sp.k2 * psi_hat, -(sp.q ** 2) * rho_hat

    # alpha form: state is (u, w) = (alpha1^, alpha2^) on the half spectrum
    def alpha_nonlinear(self, u, w, psi_mean_hat):
        sp = self.sp
        rho_hat, psi_hat = _uw_to_rho_psi(sp, u, w, psi_mean_hat)
        n_rho, n_psi = self.nonlinear(rho_hat, psi_hat)
        nb = sp.m * n_psi
        return n_rho - 1j * nb, n_rho + 1j * nb


def _rho_psi_to_uw(sp, rho_hat, psi_hat):
    b = sp.m * psi_hat
    return rho_hat - 1j * b, rho_hat + 1j * b


def _uw_to_rho_psi(sp, u, w, psi_mean_hat):
    rho_hat = 0.5 * (u + w)
    psi_hat = sp.minv * (0.5j * (u - w))
    psi_hat[0, 0, 0] = psi_mean_hat
    return rho_hat, psi_hat


def rhs(state: FluidState, config: SolverConfig | None = None):
    """``(d_t rho, d_t psi)`` as RealFields, products dealiased by the 2/3 rule."""
    config = config or SolverConfig(n=state.grid.n, box_len=state.grid.box_len)
    R = _Rhs(state.grid, config)
    sp = R.sp
    rho_hat = sp.fwd(state.rho.data)
    psi_hat = sp.fwd(state.psi.data)
    n_rho, n_psi = R.nonlinear(rho_hat, psi_hat)
    l_rho, l_psi = R.linear(rho_hat, psi_hat)
    l_psi[0, 0, 0] = 0.0
    g = state.grid
    return RealField(g, sp.inv(l_rho + n_rho)), RealField(g, sp.inv(l_psi + n_psi))


# --------------------------------------------------------------------------
# alpha variables


def _check_mean_zero(grid, f, name, tol=1e-12):
    f = np.asarray(f)
    scale = max(1.0, float(np.abs(f).max()))
    if abs(float(f.mean())) > tol * scale:
        raise ConfigError("%s must have zero mean (mean = %.3e)" % (name, float(f.mean())))


def to_alpha(state: FluidState, mode=Mode.EULER_POISSON) -> AlphaPair:
    """Physical-space ``alpha_{1,2} = rho -/+ i q(|nabla|)^{-1}|nabla| psi``."""
    _check_mean_zero(state.grid, state.rho.data, "rho")
    _check_mean_zero(state.grid, state.psi.data, "psi")
    sp = _spectral(state.grid, mode)
    b = sp.inv(sp.m * sp.fwd(state.psi.data))
    rho = np.asarray(state.rho.data, dtype=float)
    return AlphaPair(rho - 1j * b, rho + 1j * b, state.grid)


def from_alpha(pair: AlphaPair, t: float = 0.0, mode=Mode.EULER_POISSON) -> FluidState:
    """Inverse of ``to_alpha``: ``rho = Re alpha1``, ``psi = q |nabla|^{-1} Im alpha2``."""
    sp = _spectral(pair.grid, mode)
    rho = 0.5 * (pair.alpha1 + pair.alpha2).real
    b = (0.5j * (pair.alpha1 - pair.alpha2)).real
    psi = sp.inv(sp.minv * sp.fwd(b))
    return FluidState(RealField(pair.grid, rho), RealField(pair.grid, psi), t)


# --------------------------------------------------------------------------
# time stepping


class _Stepper:
    def __init__(self, grid, config: SolverConfig):
        self.cfg = config
        self.R = _Rhs(grid, config)
        self.sp = self.R.sp
        self._coef = {}

    def _exp(self, h):
        key = ("exp", h)
        if key not in self._coef:
            self._coef[key] = np.exp(1j * self.sp.p * h)
        return self._coef[key]

    def if_rk4(self, u, w, pm, h):
        """Lawson RK4 on the profile: the linear phase is exact, the local clock restarts each step."""
        N = self.R.alpha_nonlinear
        E2 = self._exp(0.5 * h)
        E = self._exp(h)
        E2c, Ec = np.conj(E2), np.conj(E)
        a1, b1 = N(u, w, pm)
        a2, b2 = N(E2 * (u + 0.5 * h * a1), E2c * (w + 0.5 * h * b1), pm)
        a3, b3 = N(E2 * u + 0.5 * h * a2, E2c * w + 0.5 * h * b2, pm)
        a4, b4 = N(E * u + h * E2 * a3, Ec * w + h * E2c * b3, pm)
        u_new = E * u + (h / 6.0) * (E * a1 + 2.0 * E2 * (a2 + a3) + a4)
        w_new = Ec * w + (h / 6.0) * (Ec * b1 + 2.0 * E2c * (b2 + b3) + b4)
        return u_new, w_new

    def _etd_coefficients(self, h):
        key = ("etd", h)
        if key in self._coef:
            return self._coef[key]
        # contour-integral evaluation of the phi-functions (Kassam & Trefethen);
        # the symbols are imaginary, so the full circle is needed
        M = 32
        roots = np.exp(2j * math.pi * (np.arange(1, M + 1) - 0.5) / M)
        z = 1j * self.sp.p * h
        out = []
        for sign in (1.0, -1.0):
            L = sign * z
            Lr = L[..., None] + roots
            eL = np.exp(Lr)
            Q = h * np.mean((np.exp(Lr / 2) - 1.0) / Lr, axis=-1)
            f1 = h * np.mean((-4.0 - Lr + eL * (4.0 - 3.0 * Lr + Lr ** 2)) / Lr ** 3, axis=-1)
            f2 = h * np.mean((2.0 + Lr + eL * (Lr - 2.0)) / Lr ** 3, axis=-1)
            f3 = h * np.mean((-4.0 - 3.0 * Lr - Lr ** 2 + eL * (4.0 - Lr)) / Lr ** 3, axis=-1)
            out.append((np.exp(L), np.exp(L / 2), Q, f1, f2, f3))
        self._coef[key] = out
        return out

    def etdrk4(self, u, w, pm, h):
        N = self.R.alpha_nonlinear
        (E, E2, Q, f1, f2, f3), (Ec, E2c, Qc, g1, g2, g3) = self._etd_coefficients(h)
        Nu, Nw = N(u, w, pm)
        au, aw = E2 * u + Q * Nu, E2c * w + Qc * Nw
        Nau, Naw = N(au, aw, pm)
        bu, bw = E2 * u + Q * Nau, E2c * w + Qc * Naw
        Nbu, Nbw = N(bu, bw, pm)
        cu, cw = E2 * au + Q * (2.0 * Nbu - Nu), E2c * aw + Qc * (2.0 * Nbw - Nw)
        Ncu, Ncw = N(cu, cw, pm)
        u_new = E * u + f1 * Nu + 2.0 * f2 * (Nau + Nbu) + f3 * Ncu
        w_new = Ec * w + g1 * Nw + 2.0 * g2 * (Naw + Nbw) + g3 * Ncw
        return u_new, w_new

    def plain_rk4(self, rho_hat, psi_hat, h):
        def F(r, s):
            nr, ns = self.R.nonlinear(r, s)
            lr, ls = self.R.linear(r, s)
            ls[0, 0, 0] = 0.0
            return lr + nr, ls + ns

        k1 = F(rho_hat, psi_hat)
        k2 = F(rho_hat + 0.5 * h * k1[0], psi_hat + 0.5 * h * k1[1])
        k3 = F(rho_hat + 0.5 * h * k2[0], psi_hat + 0.5 * h * k2[1])
        k4 = F(rho_hat + h * k3[0], psi_hat + h * k3[1])
        return (
            rho_hat + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            psi_hat + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
        )

    def advance(self, rho_hat, psi_hat, h):
        if self.cfg.integrator is Integrator.RK4:
            return self.plain_rk4(rho_hat, psi_hat, h)
        sp = self.sp
        pm = psi_hat[0, 0, 0]
        u, w = _rho_psi_to_uw(sp, rho_hat, psi_hat)
        if self.cfg.integrator is Integrator.ETDRK4:
            u, w = self.etdrk4(u, w, pm, h)
        else:
            u, w = self.if_rk4(u, w, pm, h)
        return _uw_to_rho_psi(sp, u, w, pm)


def step(state: FluidState, dt: float, config: SolverConfig | None = None) -> FluidState:
    """One time step of size ``dt`` (negative ``dt`` steps backward)."""
    grid = state.grid
    config = config or SolverConfig(n=grid.n, box_len=grid.box_len, dt=abs(dt) or 1.0)
    st = _Stepper(grid, config)
    sp = st.sp
    rho_hat, psi_hat = st.advance(sp.fwd(state.rho.data), sp.fwd(state.psi.data), dt)
    return FluidState(RealField(grid, sp.inv(rho_hat)), RealField(grid, sp.inv(psi_hat)), state.t + dt)


# --------------------------------------------------------------------------
# initial data and runs


def gaussian_initial_state(config: SolverConfig, seed: int | None = None) -> FluidState:
    """Irrotational Gaussian bump of amplitude ``config.amplitude``.

    ``rho0 = eps exp(-|x-xc|^2/sigma^2)`` and ``psi0 = eps sigma exp(...)``,
    both mean-subtracted.  A nonzero seed jitters the centre by up to ``L/16``
    per axis and ``sigma`` by up to 10%; seed 0 is the centred bump.
    """
    grid = config.grid
    seed = config.seed if seed is None else seed
    L = grid.box_len
    xc = np.full(3, 0.5 * L)
    sigma = config.sigma
    if seed:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        xc = xc + rng.uniform(-L / 16, L / 16, size=3)
        sigma = sigma * (1.0 + rng.uniform(-0.1, 0.1))
    x1, x2, x3 = grid.coords()
    # periodic distance so the bump is smooth across the box edge
    d2 = sum(((x - c + 0.5 * L) % L - 0.5 * L) ** 2 for x, c in zip((x1, x2, x3), xc))
    g = np.exp(-d2 / sigma ** 2)
    eps = config.amplitude
    rho = eps * g
    psi = eps * sigma * g
    return FluidState(RealField(grid, rho - rho.mean()), RealField(grid, psi - psi.mean()), 0.0)


def _diag_row(sp: _Spectral, rho_hat, psi_hat, t, k, poisson_res, curl_res=None):
    grid = sp.grid
    rho = sp.inv(rho_hat)
    grad = [sp.inv(1j * kk * psi_hat) for kk in sp.k]
    b_hat = sp.m * psi_hat
    jap2 = 1.0 + sp.k2
    h2k = math.sqrt(sp.l2sq(jap2 ** k * rho_hat) + sp.l2sq(jap2 ** k * b_hat))
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(sp.kabs > 0, 1.0 / sp.kabs, 0.0)
    hm1 = math.sqrt(sp.l2sq(inv * rho_hat) + sp.l2sq(inv * b_hat))
    s = jap2 ** (0.5 * k)
    amp = np.hypot(sp.inv(s * rho_hat), sp.inv(s * b_hat))
    l10w = (1.0 + t) ** (16.0 / 15.0) * grid.lp_norm(amp, 10.0)
    return dict(
        t=t,
        mass=float(rho_hat[0, 0, 0].real),
        sup_rho=float(np.abs(rho).max()),
        sup_v=float(np.sqrt(sum(g * g for g in grad)).max()),
        h2k=h2k,
        hm1=hm1,
        l10w=l10w,
        poisson_res=poisson_res,
        curl_res=curl_res,
    )


def _check_initial(state: FluidState, config: SolverConfig):
    if state.grid != config.grid:
        raise ConfigError("initial state grid %r does not match config grid %r" % (state.grid, config.grid))
    _check_mean_zero(state.grid, state.rho.data, "rho")
    if np.any(1.0 + state.rho.data <= 0):
        raise DensityError("initial density is not positive")


def run(config: SolverConfig, initial: FluidState | None = None, snapshot_dir=None, on_row=None) -> Diagnostics:
    """Integrate to ``config.t_end`` and return the diagnostics.

    A row is recorded every ``snapshot_every`` steps (and at the end); with
    ``snapshot_dir`` a binary snapshot is written alongside each row.  On
    any numerical error the run stops and RunAborted carries the partial
    diagnostics.
    """
    initial = gaussian_initial_state(config) if initial is None else initial
    _check_initial(initial, config)
    grid = config.grid
    st = _Stepper(grid, config)
    sp = st.sp
    rho_hat = sp.dealias(sp.fwd(initial.rho.data))
    psi_hat = sp.dealias(sp.fwd(initial.psi.data))
    rho_hat[0, 0, 0] = sp.fwd(initial.rho.data)[0, 0, 0]
    diag = Diagnostics(meta={"config": config.as_dict()})
    nsteps = int(math.ceil(config.t_end / config.dt - 1e-9))
    t = initial.t

    def record(t, res):
        row = _diag_row(sp, rho_hat, psi_hat, t, config.k_norm, res)
        diag.append(**row)
        if on_row is not None:
            on_row(row)
        if snapshot_dir is not None:
            import os

            path = os.path.join(str(snapshot_dir), "snap_%06d.epi" % len(diag.rows))
            write_snapshot(path, grid, t, sp.inv(rho_hat), sp.inv(psi_hat))

    try:
        if config.mode is Mode.EULER_POISSON:
            _, st.R.phi_hat, res0, _ = _poisson_spectral(
                sp, sp.inv(rho_hat), config.poisson_tol, config.poisson_max_iter
            )
        else:
            res0 = 0.0
        record(t, res0)
        max_res = 0.0
        for i in range(nsteps):
            h = min(config.dt, initial.t + config.t_end - t)
            if h <= 0:
                break
            rho_hat, psi_hat = st.advance(rho_hat, psi_hat, h)
            max_res = max(max_res, st.R.last_res)
            t = initial.t + (i + 1) * config.dt if h == config.dt else t + h
            cfl = h * st.R.last_sup_v * grid.n / grid.box_len
            if cfl >= 0.5:
                raise CFLError("advective CFL number %.3g >= 0.5 at t=%g" % (cfl, t))
            if (i + 1) % config.snapshot_every == 0 or i + 1 == nsteps:
                record(t, max_res)
                max_res = 0.0
    except (ArithmeticError, FloatingPointError) as exc:
        diag.partial = "%s at t=%g: %s" % (type(exc).__name__, t, exc)
        raise RunAborted(diag.partial, diag) from exc
    diag.meta["final_state"] = FluidState(RealField(grid, sp.inv(rho_hat)), RealField(grid, sp.inv(psi_hat)), t)
    return diag


# --------------------------------------------------------------------------
# velocity form


def vector_velocity_run(config: SolverConfig, rho0, v0, return_state=False):
    """Evolve ``(rho, v)`` directly (no potential) with plain RK4.

    ``d_t v = -(v.grad)v - grad ln(1+rho) - grad phi``.  The velocity is
    dealiased before every product, so the discrete curl of the update is a
    roundoff-level quantity when ``v`` starts as a gradient.  The
    ``curl_res`` column is ``||curl v||_{L^2}``.
    """
    grid = config.grid
    sp = _spectral(grid, config.mode)
    rho0 = np.asarray(getattr(rho0, "data", rho0), dtype=float)
    v0 = [np.asarray(getattr(c, "data", c), dtype=float) for c in v0]
    if len(v0) != 3 or any(c.shape != grid.shape for c in v0) or rho0.shape != grid.shape:
        raise ShapeError("expected rho and three velocity components on the config grid")
    _check_mean_zero(grid, rho0, "rho")
    R = _Rhs(grid, config)
    k = sp.k

    def curl_norm(V):
        c1 = 1j * (k[1] * V[2] - k[2] * V[1])
        c2 = 1j * (k[2] * V[0] - k[0] * V[2])
        c3 = 1j * (k[0] * V[1] - k[1] * V[0])
        return math.sqrt(sp.l2sq(c1) + sp.l2sq(c2) + sp.l2sq(c3))

    curl0 = curl_norm([sp.fwd(c) for c in v0])
    if curl0 > 1e-12 * max(1.0, math.sqrt(sum(sp.l2sq(sp.fwd(c)) for c in v0))):
        raise ConfigError("initial velocity has curl %.3e" % curl0)

    def F(rho_hat, V):
        rho_full = sp.inv(rho_hat)
        if np.any(1.0 + rho_full <= 0):
            raise DensityError("1 + rho <= 0 (min rho = %.6g)" % rho_full.min())
        Vd = [sp.dealias(c) for c in V]
        vel = [sp.inv(c) for c in Vd]
        rho_d = sp.inv(sp.dealias(rho_hat))
        R.last_sup_v = float(np.sqrt(sum(c * c for c in vel)).max())
        # linear flux v keeps all modes, the product rho v is dealiased
        flux = [c + sp.dealias(sp.fwd(rho_d * u)) for c, u in zip(V, vel)]
        drho = -1j * (k[0] * flux[0] + k[1] * flux[1] + k[2] * flux[2])
        # scalar potential part: ln(1+rho) + phi, its nonlinear remainder dealiased
        scal = sp.dealias(sp.fwd(np.log1p(rho_d) - rho_d)) + rho_hat
        phi_hat = R.phi(rho_full, rho_hat)
        if phi_hat is not None:
            scal = scal + rho_hat / (1.0 + sp.k2) + sp.dealias(phi_hat - rho_hat / (1.0 + sp.k2))
        dV = []
        for i in range(3):
            adv = sum(vel[j] * sp.inv(1j * k[j] * Vd[i]) for j in range(3))
            dV.append(-sp.dealias(sp.fwd(adv)) - 1j * k[i] * scal)
        return drho, dV

    rho_hat = sp.fwd(rho0)
    V = [sp.fwd(c) for c in v0]
    diag = Diagnostics(meta={"config": config.as_dict(), "formulation": "velocity"})
    t = 0.0
    h = config.dt
    nsteps = int(math.ceil(config.t_end / h - 1e-9))

    def record(t, res):
        row = _diag_row_velocity(sp, rho_hat, V, t, config.k_norm, res, curl_norm(V))
        diag.append(**row)

    if config.mode is Mode.EULER_POISSON:
        _, R.phi_hat, res0, _ = _poisson_spectral(sp, rho0, config.poisson_tol, config.poisson_max_iter)
    else:
        res0 = 0.0
    record(t, res0)
    max_res = 0.0
    try:
        for i in range(nsteps):
            k1 = F(rho_hat, V)
            r1 = R.last_res
            k2 = F(rho_hat + 0.5 * h * k1[0], [a + 0.5 * h * b for a, b in zip(V, k1[1])])
            k3 = F(rho_hat + 0.5 * h * k2[0], [a + 0.5 * h * b for a, b in zip(V, k2[1])])
            k4 = F(rho_hat + h * k3[0], [a + h * b for a, b in zip(V, k3[1])])
            max_res = max(max_res, r1, R.last_res)
            rho_hat = rho_hat + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            V = [a + h / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(V, k1[1], k2[1], k3[1], k4[1])]
            t = (i + 1) * h
            if (i + 1) % config.snapshot_every == 0 or i + 1 == nsteps:
                record(t, max_res)
                max_res = 0.0
    except ArithmeticError as exc:
        diag.partial = "%s at t=%g: %s" % (type(exc).__name__, t, exc)
        raise RunAborted(diag.partial, diag) from exc
    if return_state:
        return diag, sp.inv(rho_hat), [sp.inv(c) for c in V]
    return diag


def _diag_row_velocity(sp, rho_hat, V, t, k, poisson_res, curl_res):
    # same columns as the potential run; |nabla|^{-1} alpha uses the Riesz potential of v
    kk = sp.k
    div = 1j * (kk[0] * V[0] + kk[1] * V[1] + kk[2] * V[2])
    with np.errstate(divide="ignore", invalid="ignore"):
        psi_hat = np.where(sp.kabs > 0, -div / np.where(sp.kabs > 0, sp.k2, 1.0), 0.0)
    row = _diag_row(sp, rho_hat, psi_hat, t, k, poisson_res, curl_res)
    row["sup_v"] = float(np.sqrt(sum(sp.inv(c) ** 2 for c in V)).max())
    return row


def with_overrides(config: SolverConfig, **kw) -> SolverConfig:
    return replace(config, **kw)
