"""
Exception hierarchy for the cavity laboratory

Library code raises these; only the command line converts them into exit codes.
"""

from typing import Optional


class GravicavError(Exception):
    """Base class for all laboratory errors"""

    exit_code = 1


class ConfigError(GravicavError, ValueError):
    """Invalid configuration value, unknown key or violated precondition"""

    exit_code = 2


class DomainError(GravicavError, ValueError):
    """Argument outside the domain of a physical formula"""

    exit_code = 2


class NumericalGuardError(GravicavError):
    """A numerical guard tripped during a run"""

    exit_code = 3


class DivergedOrbitError(NumericalGuardError):
    """Classical orbit left the trusted region"""

    def __init__(self, message: str, z: Optional[float] = None,
                 p: Optional[float] = None, t: Optional[float] = None):
        super().__init__(message)
        self.z = z
        self.p = p
        self.t = t


class AliasingError(NumericalGuardError):
    """Wavefunction mass reached the top of the momentum grid"""


class BoxTooSmallError(NumericalGuardError):
    """Wavefunction amplitude reached the edges of the position grid"""


class UnitarityError(NumericalGuardError):
    """One-period operator failed the unitarity check"""


class SingularityError(NumericalGuardError):
    """Revival formula evaluated too close to its pole"""


class EigenSolverError(NumericalGuardError):
    """Eigendecomposition did not converge"""


class AnalysisError(GravicavError):
    """Post-processing could not produce a result"""

    exit_code = 1


class GridMismatchError(AnalysisError):
    """Two wavepackets live on different grids"""


class SeriesTooShortError(AnalysisError):
    """Time series shorter than the detector needs"""


class InsufficientStatesError(AnalysisError):
    """Too few Floquet states selected for gap statistics"""
