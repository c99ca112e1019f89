"""
gravicav: a laboratory for the driven gravitational cavity
Classical sections and Lyapunov exponents, wavepacket propagation, revival
analysis and Floquet spectra of an atom bouncing on a modulated mirror
"""

__version__ = "1.0.0"
__license__ = "MIT"

from .core import SEED_POINTS, PhasePoint, RunConfig, SystemParams, potential
from .config import get_config, resolve_config, update_config
from .laboratory import CavityLaboratory

__all__ = [
    "SEED_POINTS",
    "PhasePoint",
    "RunConfig",
    "SystemParams",
    "potential",
    "CavityLaboratory",
    "get_config",
    "resolve_config",
    "update_config",
]
