import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "epsim", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("epsim")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_field(rng, grid, width=None, mean_zero=True):
    """Smooth random real field; ``width`` limits the spectrum (Gaussian envelope)."""
    f = rng.standard_normal(grid.shape)
    if width is not None:
        F = grid.fft(f) * np.exp(-0.5 * (grid.kabs / width) ** 2)
        f = grid.ifft(F).real
    if mean_zero:
        f = f - f.mean()
    return f


def band_limited(rng, grid, amp, modes=2):
    """Mean-zero field with at most ``modes`` Fourier modes per axis, scaled to sup ``amp``.

    Products of two such fields stay inside the 2/3 dealiasing range.
    """
    F = grid.fft(random_field(rng, grid))
    idx = np.abs(np.fft.fftfreq(grid.n, 1.0 / grid.n))
    keep = (idx[:, None, None] <= modes) & (idx[None, :, None] <= modes) & (idx[None, None, :] <= modes)
    f = grid.ifft(np.where(keep, F, 0)).real
    return amp * f / np.abs(f).max()


def solver_quadratic_part(grid, rho, psi, j, eps=1e-3):
    """Quadratic part of the solver's alpha_j nonlinearity at (rho, psi), half spectrum.

    ``N(e) = e^2 Q + e^3 C + O(e^4)`` so ``(8 N(e) - N(2 e)) / (4 e^2) = Q + O(e^2)``.
    """
    from epsim.solver import SolverConfig, _Rhs, _rho_psi_to_uw

    cfg = SolverConfig(n=grid.n, box_len=grid.box_len, poisson_tol=1e-15)

    def N(e):
        R = _Rhs(grid, cfg)
        sp = R.sp
        u, w = _rho_psi_to_uw(sp, sp.fwd(e * rho), sp.fwd(e * psi))
        return R.alpha_nonlinear(u, w, 0.0)[j - 1], sp.mask

    n1, mask = N(eps)
    n2, _ = N(2 * eps)
    return (8 * n1 - n2) / (4 * eps ** 2), mask


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: (int(s.split()[1].rstrip(":").split("[")[0]), s)):
            terminalreporter.write_line(line)
