"""Dispersive decay and small-data dynamics for the ion Euler-Poisson system.

Submodules: ``dispersion`` (the symbol ``p`` and phases), ``fields`` (periodic
grids and spectral operators), ``propagator`` (linear decay measurements),
``solver`` (pseudo-spectral nonlinear runs), ``norms`` and ``multiplier``
(sampled multiplier estimates), ``cli``.
"""

__version__ = "0.1.0"

from .dispersion import ConfigError, DomainError  # noqa: E402,F401
