"""Simulation and analysis of two emitters coupled through a waveguide.

Modules
-------
model         parameters, Hamiltonian, dissipators and Liouvillian
dynamics      propagation, steady states, emission traces, Bloch vectors
correlations  g2(tau) by quantum regression and the weak-drive closed form
instrument    detector jitter and spectral diffusion
polarization  waveplates, dipoles and drive phases
analysis      dip, antidip and Rabi fit models
cli           the ``wgqed`` command
"""

__version__ = "0.1.0"

from .errors import ConfigError, NumericalError, WgqedError  # noqa: E402
from .model import DriveConfig, EmitterParams, Pulse, SystemParams, collective_rates, ghz  # noqa: E402

__all__ = [
    "ConfigError",
    "DriveConfig",
    "EmitterParams",
    "NumericalError",
    "Pulse",
    "SystemParams",
    "WgqedError",
    "__version__",
    "collective_rates",
    "ghz",
]
