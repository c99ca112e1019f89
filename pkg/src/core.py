"""
Dimensionless model of the modulated gravitational cavity

Everything is expressed in units where the drive period is exactly 2*pi:
    V(z, t) = z + V0 * exp(-kappa * (z - lambda * sin t))
The exponential wall is clamped at v_clamp so that positions deep inside the
mirror never overflow double precision.
"""

import math
from dataclasses import dataclass, replace
from typing import Dict, Tuple, Union

import numpy as np

from .errors import ConfigError, DomainError

ArrayLike = Union[float, np.ndarray]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SystemParams:
    """Physical configuration in scaled units plus the wall clamp"""

    V0: float = 1.0
    kappa: float = 1.0
    lam: float = 0.3
    kbar: float = 1.0
    v_clamp: float = 1.0e6

    def __post_init__(self):
        # V0 = 0 is the pure-gravity limit used by the analytic checks
        if not self.V0 >= 0.0:
            raise ConfigError(f"V0 must be non-negative, got {self.V0}")
        if not self.kappa > 0.0:
            raise ConfigError(f"kappa must be positive, got {self.kappa}")
        if not self.kbar > 0.0:
            raise ConfigError(f"kbar must be positive, got {self.kbar}")
        if not self.lam >= 0.0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if not self.v_clamp >= 1.0e3:
            raise ConfigError(f"v_clamp must be at least 1e3, got {self.v_clamp}")

    def with_lambda(self, lam: float) -> "SystemParams":
        """Copy with another modulation strength"""
        return replace(self, lam=float(lam))

    def to_dict(self) -> Dict[str, float]:
        return {
            "V0": self.V0,
            "kappa": self.kappa,
            "lambda": self.lam,
            "kbar": self.kbar,
            "v_clamp": self.v_clamp,
        }


@dataclass(frozen=True)
class PhysicalParams:
    """Laboratory quantities in SI units"""

    omega: float
    M: float
    g: float
    a: float
    hbar: float = 1.054571817e-34


@dataclass(frozen=True)
class RunConfig:
    """
    Numerical knobs of a quantum run

    Defaults: grid z in [-10, 80] with N = 2048 points, dt = 2*pi/1024,
    T_total = 800*pi, C^2 sampled every 4 steps, wall clamped at 1e6.
    """

    z_min: float = -10.0
    z_max: float = 80.0
    n: int = 2048
    dt: float = TWO_PI / 1024
    t_total: float = 800.0 * math.pi
    output_every: int = 4
    v_clamp: float = 1.0e6

    def __post_init__(self):
        if not self.z_min < 0.0 < self.z_max:
            raise ConfigError(f"grid must straddle z = 0, got [{self.z_min}, {self.z_max}]")
        if self.n < 256 or self.n & (self.n - 1):
            raise ConfigError(f"grid size must be a power of two >= 256, got {self.n}")
        if not self.dt > 0.0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not self.t_total > 0.0:
            raise ConfigError(f"t_total must be positive, got {self.t_total}")
        if self.output_every < 1:
            raise ConfigError(f"output_every must be >= 1, got {self.output_every}")
        if not self.v_clamp >= 1.0e3:
            raise ConfigError(f"v_clamp must be at least 1e3, got {self.v_clamp}")


@dataclass(frozen=True)
class PhasePoint:
    """Point (z, p) of the scaled phase plane"""

    z: float
    p: float

    def __post_init__(self):
        if not (math.isfinite(self.z) and math.isfinite(self.p)):
            raise DomainError(f"phase point must be finite, got ({self.z}, {self.p})")

    def as_tuple(self) -> Tuple[float, float]:
        return (self.z, self.p)


# a, b: center and edge of the 2:1 resonance; c, d: stochastic sea;
# e, f: secondary resonances left and right of z = 15
SEED_POINTS: Dict[str, PhasePoint] = {
    "a": PhasePoint(14.5, 1.45),
    "b": PhasePoint(15.0, 0.0),
    "c": PhasePoint(15.0, -1.0),
    "d": PhasePoint(15.0, -2.0),
    "e": PhasePoint(10.0, 0.0),
    "f": PhasePoint(25.0, 0.0),
}


def parse_seed(selector: str) -> Tuple[str, PhasePoint]:
    """
    Resolve a seed selector

    Args:
        selector: one of the letters a-f or an explicit "z,p" pair

    Returns:
        Tuple of (seed id, phase point)
    """
    key = selector.strip().lower()
    if key in SEED_POINTS:
        return key, SEED_POINTS[key]
    try:
        z_text, p_text = key.split(",")
        point = PhasePoint(float(z_text), float(p_text))
    except (ValueError, DomainError) as exc:
        raise ConfigError(f"seed must be one of a-f or 'z,p', got {selector!r}") from exc
    return f"z{point.z:g}_p{point.p:g}", point


def scale_to_dimensionless(phys: PhysicalParams) -> Tuple[float, float]:
    """
    Convert laboratory parameters to the scaled modulation strength and
    effective Planck constant

    Args:
        phys: Laboratory parameters

    Returns:
        Tuple of (lambda, kbar) with lambda = a w^2 / g and kbar = hbar w^3 / (M g^2)
    """
    for name in ("omega", "M", "g", "hbar"):
        value = getattr(phys, name)
        if not value > 0.0:
            raise DomainError(f"{name} must be positive, got {value}")
    if not phys.a >= 0.0:
        raise DomainError(f"modulation amplitude must be non-negative, got {phys.a}")

    lam = phys.a * phys.omega ** 2 / phys.g
    kbar = phys.hbar * phys.omega ** 3 / (phys.M * phys.g ** 2)
    return lam, kbar


def _wall(z: ArrayLike, t: ArrayLike, params: SystemParams):
    """Clamped wall term and the mask of points where the clamp is active"""
    if params.V0 == 0.0:
        zero = np.zeros(np.broadcast(z, t).shape)
        return zero, zero.astype(bool)
    exponent = -params.kappa * (np.asarray(z, dtype=float) - params.lam * np.sin(t))
    ceiling = math.log(params.v_clamp / params.V0)
    clamped = exponent > ceiling
    wall = params.V0 * np.exp(np.minimum(exponent, ceiling))
    return wall, clamped


def potential(z: ArrayLike, t: ArrayLike, params: SystemParams) -> ArrayLike:
    """
    Driven cavity potential z + V0 exp(-kappa (z - lambda sin t)), wall clamped

    Args:
        z: Position(s)
        t: Time(s), broadcast against z
        params: System parameters

    Returns:
        Potential energy, same shape as the broadcast inputs
    """
    wall, _ = _wall(z, t, params)
    result = np.asarray(z, dtype=float) + wall
    return float(result) if np.ndim(result) == 0 else result


def force(z: ArrayLike, t: ArrayLike, params: SystemParams) -> ArrayLike:
    """
    Force -dV/dz = -1 + kappa V0 exp(-kappa (z - lambda sin t))

    Inside the clamp region the potential is z + v_clamp, so the force there
    is pure gravity.
    """
    wall, clamped = _wall(z, t, params)
    result = -1.0 + np.where(clamped, 0.0, params.kappa * wall)
    return float(result) if np.ndim(result) == 0 else result


def static_potential(z: ArrayLike, params: SystemParams) -> ArrayLike:
    """Undriven potential z + V0 exp(-kappa z), i.e. the drive frozen at sin t = 0"""
    return potential(z, 0.0, params)


def classical_energy(z: ArrayLike, p: ArrayLike, params: SystemParams) -> ArrayLike:
    """Energy p^2/2 + z + V0 exp(-kappa z) of the undriven cavity"""
    return 0.5 * np.asarray(p, dtype=float) ** 2 + static_potential(z, params)
