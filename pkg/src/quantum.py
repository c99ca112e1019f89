"""
Split-operator propagation of the driven cavity Schrodinger equation

    i kbar dpsi/dt = [p^2/2 + V(z, t)] psi

Each Strang step applies half a potential kick, a full kinetic step in
momentum space and another half kick, with the potential sampled at the
midpoint t + dt/2. All factors are unit-modulus phases.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np

from .core import TWO_PI, PhasePoint, SystemParams, potential, static_potential
from .errors import AliasingError, BoxTooSmallError, ConfigError, GridMismatchError
from .persistence import atomic_write_bytes

logger = logging.getLogger(__name__)

SNAPSHOT_HEADER = np.dtype([
    ("n", "<u8"),
    ("z_min", "<f8"),
    ("z_max", "<f8"),
    ("t", "<f8"),
    ("kbar", "<f8"),
])


@dataclass(frozen=True)
class Grid:
    """Periodic position grid with spacing (z_max - z_min) / n"""

    z_min: float
    z_max: float
    n: int

    def __post_init__(self):
        if self.n < 2 or self.n & (self.n - 1):
            raise ConfigError(f"grid size must be a power of two, got {self.n}")
        if not self.z_max > self.z_min:
            raise ConfigError(f"empty grid [{self.z_min}, {self.z_max}]")

    @property
    def dz(self) -> float:
        return (self.z_max - self.z_min) / self.n

    @property
    def z(self) -> np.ndarray:
        return self.z_min + self.dz * np.arange(self.n)

    def momenta(self, kbar: float) -> np.ndarray:
        """Conjugate momentum grid kbar * 2*pi * k / (n dz) in FFT order"""
        return kbar * TWO_PI * np.fft.fftfreq(self.n, d=self.dz)

    def p_max(self, kbar: float) -> float:
        return math.pi * kbar / self.dz


@dataclass
class Wavepacket:
    """Complex amplitudes on a grid at time t"""

    amplitudes: np.ndarray
    grid: Grid
    t: float = 0.0

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.dz)

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def copy(self) -> "Wavepacket":
        return Wavepacket(self.amplitudes.copy(), self.grid, self.t)


@dataclass(frozen=True)
class GaussianSpec:
    """Minimum-uncertainty Gaussian centered at a phase point"""

    center: PhasePoint
    sigma_z: float = 1.0 / math.sqrt(2.0)

    def __post_init__(self):
        if not self.sigma_z > 0.0:
            raise ConfigError(f"sigma_z must be positive, got {self.sigma_z}")

    def sigma_p(self, kbar: float) -> float:
        return kbar / (2.0 * self.sigma_z)


def gaussian_amplitudes(spec: GaussianSpec, grid: Grid, kbar: float) -> np.ndarray:
    """Grid-normalized coherent-state amplitudes; also the Husimi coherent-state family"""
    z = grid.z
    z0, p0 = spec.center.z, spec.center.p
    psi = np.exp(-(z - z0) ** 2 / (4.0 * spec.sigma_z ** 2) + 1j * p0 * (z - z0) / kbar)
    return psi / math.sqrt(np.sum(np.abs(psi) ** 2) * grid.dz)


def init_gaussian(spec: GaussianSpec, grid: Grid, kbar: float) -> Wavepacket:
    """
    Prepare a minimum-uncertainty Gaussian wavepacket

    Args:
        spec: Center and position width
        grid: Position grid
        kbar: Effective Planck constant

    Returns:
        Normalized wavepacket at t = 0
    """
    margin = 5.0 * spec.sigma_z
    if spec.center.z - margin < grid.z_min or spec.center.z + margin > grid.z_max:
        raise ConfigError(
            f"packet at z = {spec.center.z} lies within 5 sigma of the grid edges "
            f"[{grid.z_min}, {grid.z_max}]"
        )
    return Wavepacket(gaussian_amplitudes(spec, grid, kbar), grid, 0.0)


def moments(psi: Wavepacket, kbar: float) -> Tuple[float, float, float, float]:
    """
    First and second moments of a wavepacket

    Returns:
        Tuple of (<z>, <p>, var z, var p)
    """
    z = psi.grid.z
    rho = psi.density * psi.grid.dz
    weight = rho.sum()
    mean_z = float(np.sum(z * rho) / weight)
    var_z = float(np.sum((z - mean_z) ** 2 * rho) / weight)

    p = psi.grid.momenta(kbar)
    phi = np.abs(np.fft.fft(psi.amplitudes)) ** 2
    mean_p = float(np.sum(p * phi) / phi.sum())
    var_p = float(np.sum((p - mean_p) ** 2 * phi) / phi.sum())
    return mean_z, mean_p, var_z, var_p


def spectral_tail_mass(psi: Wavepacket, kbar: float, tail_fraction: float = 0.1) -> float:
    """Share of the momentum distribution in the top tail_fraction of |p| bins"""
    p = np.abs(psi.grid.momenta(kbar))
    phi = np.abs(np.fft.fft(psi.amplitudes)) ** 2
    tail = p >= (1.0 - tail_fraction) * psi.grid.p_max(kbar)
    return float(phi[tail].sum() / phi.sum())


def edge_amplitude(psi: Wavepacket) -> float:
    """Largest modulus at the two grid edges"""
    return float(max(abs(psi.amplitudes[0]), abs(psi.amplitudes[-1])))


class SplitOperatorPropagator:
    """
    Strang split-operator stepper for the driven cavity

    The kinetic phase is precomputed; the potential phase is rebuilt each step
    at the midpoint time.
    """

    def __init__(self, grid: Grid, params: SystemParams, dt: float,
                 tail_fraction: float = 0.1, tail_tolerance: float = 1.0e-6,
                 edge_tolerance: float = 1.0e-6, guard_every: int = 256):
        """
        Initialize propagator

        Args:
            grid: Position grid
            params: System parameters
            dt: Time step, at most 2*pi/512
            tail_fraction: Top share of |p| bins watched for aliasing
            tail_tolerance: Largest tolerated mass in those bins
            edge_tolerance: Largest tolerated modulus at the grid edges
            guard_every: Guard check cadence in steps
        """
        if not 0.0 < dt <= TWO_PI / 512 * (1.0 + 1e-12):
            raise ConfigError(f"dt = {dt} must lie in (0, 2*pi/512]")
        self.grid = grid
        self.params = params
        self.dt = dt
        self.tail_fraction = tail_fraction
        self.tail_tolerance = tail_tolerance
        self.edge_tolerance = edge_tolerance
        self.guard_every = guard_every
        self._z = grid.z
        p = grid.momenta(params.kbar)
        self._kinetic = np.exp(-0.5j * p ** 2 * dt / params.kbar)

    def _kinetic_phase(self, h: float) -> np.ndarray:
        if h == self.dt:
            return self._kinetic
        p = self.grid.momenta(self.params.kbar)
        return np.exp(-0.5j * p ** 2 * h / self.params.kbar)

    def step(self, amplitudes: np.ndarray, t: float, h: Optional[float] = None) -> np.ndarray:
        """
        One Strang step of size h (default dt) from time t

        Works along axis 0, so a matrix of column states is stepped at once.
        """
        h = self.dt if h is None else h
        v = potential(self._z, t + 0.5 * h, self.params)
        half_kick = np.exp(-0.5j * v * h / self.params.kbar)
        kinetic = self._kinetic_phase(h)
        if amplitudes.ndim > 1:
            half_kick = half_kick[:, None]
            kinetic = kinetic[:, None]
        out = np.fft.fft(half_kick * amplitudes, axis=0)
        out = np.fft.ifft(kinetic * out, axis=0)
        return half_kick * out

    def check_guards(self, psi: Wavepacket):
        """Raise when the packet leaks through the box edges or aliases in momentum"""
        edge = edge_amplitude(psi)
        if edge >= self.edge_tolerance:
            raise BoxTooSmallError(
                f"amplitude {edge:.3e} at the grid edges at t = {psi.t:.6g}; enlarge the box"
            )
        tail = spectral_tail_mass(psi, self.params.kbar, self.tail_fraction)
        if tail > self.tail_tolerance:
            raise AliasingError(
                f"momentum tail mass {tail:.3e} at t = {psi.t:.6g}; refine the grid"
            )

    def evolve(self, psi: Wavepacket, t1: float,
               observer: Optional[Callable[[Wavepacket], None]] = None,
               sample_every: int = 1, check: bool = True) -> Wavepacket:
        """
        Propagate to t1, calling observer every sample_every steps

        Args:
            psi: Initial wavepacket (not modified)
            t1: Final time, reached exactly
            observer: Optional callback receiving the current wavepacket
            sample_every: Observer cadence in steps
            check: Apply the edge-leak and aliasing guards

        Returns:
            Wavepacket at t1
        """
        if psi.grid != self.grid:
            raise GridMismatchError("wavepacket grid differs from the propagator grid")
        if t1 < psi.t:
            raise ConfigError(f"cannot propagate backwards from {psi.t} to {t1}")
        t0 = psi.t
        n_full = int(math.floor((t1 - t0) / self.dt * (1.0 + 1e-12)))
        remainder = t1 - (t0 + n_full * self.dt)

        state = Wavepacket(psi.amplitudes.astype(complex, copy=True), self.grid, t0)
        for k in range(n_full):
            state.amplitudes = self.step(state.amplitudes, t0 + k * self.dt)
            state.t = t0 + (k + 1) * self.dt
            if check and (k + 1) % self.guard_every == 0:
                self.check_guards(state)
            if observer is not None and (k + 1) % sample_every == 0:
                observer(state)
        if remainder > 1e-12 * max(1.0, abs(t1)):
            state.amplitudes = self.step(state.amplitudes, t0 + n_full * self.dt, h=remainder)
        state.t = t1
        if check:
            self.check_guards(state)
        return state


def propagate(psi: Wavepacket, t1: float, dt: float, params: SystemParams, **kwargs) -> Wavepacket:
    """
    Propagate a wavepacket to time t1 with the split-operator scheme

    Args:
        psi: Initial wavepacket
        t1: Final time
        dt: Time step, at most 2*pi/512
        params: System parameters
        **kwargs: Guard settings forwarded to SplitOperatorPropagator

    Returns:
        Wavepacket at t1
    """
    return SplitOperatorPropagator(psi.grid, params, dt, **kwargs).evolve(psi, t1)


def expectation_energy(psi: Wavepacket, params: SystemParams) -> float:
    """
    Mean energy <p^2/2> + <z + V0 exp(-kappa z)> with the drive frozen at sin t = 0

    Args:
        psi: Wavepacket
        params: System parameters

    Returns:
        Mean energy E0
    """
    _, mean_p, _, var_p = moments(psi, params.kbar)
    kinetic = 0.5 * (var_p + mean_p ** 2)
    rho = psi.density * psi.grid.dz
    return float(kinetic + np.sum(static_potential(psi.grid.z, params) * rho) / rho.sum())


def autocorrelation(psi0: Wavepacket, psit: Wavepacket) -> float:
    """Squared overlap |<psi0|psit>|^2"""
    if psi0.grid != psit.grid:
        raise GridMismatchError("autocorrelation needs both states on the same grid")
    overlap = np.vdot(psi0.amplitudes, psit.amplitudes) * psi0.grid.dz
    return float(abs(overlap) ** 2)


def ehrenfest_time(times: np.ndarray, mean_z: np.ndarray, classical_z: np.ndarray,
                   sigma_z: float) -> Optional[float]:
    """
    First time the quantum centroid departs from the classical orbit by more
    than 2 sigma_z; None when it never does
    """
    departed = np.nonzero(np.abs(np.asarray(mean_z) - np.asarray(classical_z)) > 2.0 * sigma_z)[0]
    if departed.size == 0:
        return None
    return float(times[departed[0]])


def write_snapshot(path, psi: Wavepacket, kbar: float) -> bytes:
    """
    Encode a wavepacket in the little-endian snapshot format and write it

    Returns:
        The encoded bytes
    """
    header = np.array([(psi.grid.n, psi.grid.z_min, psi.grid.z_max, psi.t, kbar)], dtype=SNAPSHOT_HEADER)
    payload = np.ascontiguousarray(psi.amplitudes, dtype="<c16")
    data = header.tobytes() + payload.tobytes()
    if path is not None:
        atomic_write_bytes(Path(path), data)
    return data


def read_snapshot(source) -> Tuple[Wavepacket, float]:
    """
    Decode a snapshot from a path or bytes

    Returns:
        Tuple of (wavepacket, kbar)
    """
    data = source if isinstance(source, (bytes, bytearray)) else Path(source).read_bytes()
    header = np.frombuffer(data, dtype=SNAPSHOT_HEADER, count=1)[0]
    n = int(header["n"])
    payload = np.frombuffer(data, dtype="<c16", count=n, offset=SNAPSHOT_HEADER.itemsize)
    grid = Grid(float(header["z_min"]), float(header["z_max"]), n)
    return Wavepacket(payload.astype(complex), grid, float(header["t"])), float(header["kbar"])


def density_rows(psi: Wavepacket) -> List[Tuple[float, float]]:
    """(z, |psi|^2) rows for plotting"""
    return list(zip(psi.grid.z.tolist(), psi.density.tolist()))
