"""
Classical dynamics of the driven cavity

Hamilton's equations dz/dt = p, dp/dt = -dV/dz are integrated with a
kick-drift-kick Stormer-Verlet scheme. Step times are always rebuilt from
integer step counters, so strobe samples fall on t0 + 2*pi*n exactly.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .core import TWO_PI, PhasePoint, SystemParams, classical_energy, force, static_potential
from .errors import ConfigError, DivergedOrbitError, DomainError

logger = logging.getLogger(__name__)

DIVERGENCE_CUTOFF = 1.0e6
ZERO_THRESHOLD = 1.0e-3
CHAOTIC_THRESHOLD = 1.0e-2


@dataclass
class Trajectory:
    """Sampled orbit: times with the matching positions and momenta"""

    times: np.ndarray
    z: np.ndarray
    p: np.ndarray

    @property
    def final(self) -> PhasePoint:
        return PhasePoint(float(self.z[-1]), float(self.p[-1]))


@dataclass
class PoincareSection:
    """Stroboscopic samples of several orbits taken at t0 + 2*pi*n"""

    seed_ids: List[str]
    seeds: List[PhasePoint]
    strobe_phase: float
    n_periods: int
    points: Dict[str, np.ndarray] = field(default_factory=dict)    # seed id -> (n, 2)
    diverged: Dict[str, str] = field(default_factory=dict)         # seed id -> reason

    def rows(self) -> List[Tuple[str, int, float, float]]:
        """Flat (seed_id, n, z, p) rows in seed order"""
        out = []
        for seed_id in self.seed_ids:
            if seed_id not in self.points:
                continue
            for n, (z, p) in enumerate(self.points[seed_id]):
                out.append((seed_id, n, float(z), float(p)))
        return out


@dataclass
class LyapunovEstimate:
    """Benettin estimate of the maximal Lyapunov exponent"""

    exponent: float
    partial_sums: np.ndarray    # cumulative log-growth after each renormalization
    total_time: float
    transient_time: float
    classification: str = "undetermined"
    diverged_at: Optional[float] = None     # strobe time the orbit left the trusted region


class SymplecticIntegrator:
    """
    Kick-drift-kick Stormer-Verlet for the driven cavity

    Works on numpy arrays of any shape, so a batch of orbits shares one loop.
    """

    def __init__(self, params: SystemParams, dt: float):
        """
        Initialize integrator

        Args:
            params: System parameters
            dt: Step size
        """
        if not dt > 0.0:
            raise ConfigError(f"dt must be positive, got {dt}")
        self.params = params
        self.dt = dt

    def step(self, z: np.ndarray, p: np.ndarray, t: float, h: Optional[float] = None):
        """
        Advance one step of size h (default dt) starting at time t

        Returns:
            Tuple of (z, p) after the step
        """
        h = self.dt if h is None else h
        p_half = p + 0.5 * h * force(z, t, self.params)
        z_new = z + h * p_half
        p_new = p_half + 0.5 * h * force(z_new, t + h, self.params)
        return z_new, p_new

    def advance(self, z: np.ndarray, p: np.ndarray, t0: float, n_steps: int):
        """
        Advance n_steps full steps from time t0

        Returns:
            Tuple of (z, p) at t0 + n_steps * dt
        """
        for k in range(n_steps):
            z, p = self.step(z, p, t0 + k * self.dt)
        return z, p

    def retreat(self, z: np.ndarray, p: np.ndarray, t_end: float, n_steps: int):
        """Run n_steps steps backwards in time from t_end; inverts advance"""
        for k in range(n_steps, 0, -1):
            z, p = self.step(z, p, t_end - (n_steps - k) * self.dt, h=-self.dt)
        return z, p


def _check_step(dt: float, limit_steps: int = 200):
    if dt > TWO_PI / limit_steps * (1.0 + 1e-12):
        raise ConfigError(f"dt = {dt} does not resolve the drive (needs dt <= 2*pi/{limit_steps})")


def _escaped(z, p, cutoff: float) -> np.ndarray:
    z = np.asarray(z)
    p = np.asarray(p)
    return ~(np.isfinite(z) & np.isfinite(p)) | (np.abs(z) > cutoff) | (np.abs(p) > cutoff)


def integrate(x0: PhasePoint, t0: float, t1: float, dt: float, params: SystemParams,
              sample_every: int = 1, cutoff: float = DIVERGENCE_CUTOFF) -> Trajectory:
    """
    Integrate one orbit from t0 to t1

    Args:
        x0: Initial phase point
        t0: Start time
        t1: End time, reached exactly (the last step is shortened if needed)
        dt: Step size, at most 2*pi/200
        params: System parameters
        sample_every: Keep every this many steps (the final point is always kept)
        cutoff: |z| or |p| beyond which the orbit counts as diverged

    Returns:
        Sampled trajectory
    """
    _check_step(dt)
    if not t1 > t0:
        raise ConfigError(f"t1 must exceed t0, got t0={t0}, t1={t1}")
    if sample_every < 1:
        raise ConfigError(f"sample_every must be >= 1, got {sample_every}")

    integrator = SymplecticIntegrator(params, dt)
    n_full = int(math.floor((t1 - t0) / dt * (1.0 + 1e-12)))
    remainder = t1 - (t0 + n_full * dt)

    times, zs, ps = [t0], [x0.z], [x0.p]
    z, p = x0.z, x0.p
    for k in range(n_full):
        t = t0 + k * dt
        z_new, p_new = integrator.step(z, p, t)
        if _escaped(z_new, p_new, cutoff):
            raise DivergedOrbitError(f"orbit from ({x0.z}, {x0.p}) diverged near t = {t:.6g}",
                                     z=z, p=p, t=t)
        z, p = z_new, p_new
        if (k + 1) % sample_every == 0:
            times.append(t0 + (k + 1) * dt)
            zs.append(z)
            ps.append(p)

    if remainder > 1e-12 * max(1.0, abs(t1)):
        t_last = t0 + n_full * dt
        z_new, p_new = integrator.step(z, p, t_last, h=remainder)
        if _escaped(z_new, p_new, cutoff):
            raise DivergedOrbitError(f"orbit from ({x0.z}, {x0.p}) diverged near t = {t_last:.6g}",
                                     z=z, p=p, t=t_last)
        z, p = z_new, p_new
    if times[-1] != t1:
        times.append(t1)
        zs.append(z)
        ps.append(p)

    return Trajectory(np.asarray(times, dtype=float), np.asarray(zs, dtype=float),
                      np.asarray(ps, dtype=float))


def energy_drift(trajectory: Trajectory, params: SystemParams, z_floor: float = 10.0) -> float:
    """
    Maximal relative energy deviation over samples above z_floor

    Far from the wall the potential is linear and the integrator's conserved
    shadow energy coincides with the true energy, so deviations there measure
    secular drift instead of the bounded oscillation during each bounce.
    """
    mask = trajectory.z >= z_floor
    if mask.sum() < 2:
        raise ConfigError(f"fewer than two samples above z = {z_floor}")
    energy = classical_energy(trajectory.z[mask], trajectory.p[mask], params)
    return float(np.max(np.abs(energy - energy[0])) / abs(energy[0]))


def seed_grid(z_range: Sequence[float] = (2.0, 40.0), p_range: Sequence[float] = (-3.0, 3.0),
              count: int = 5) -> List[PhasePoint]:
    """Uniform count x count grid of seeds over the given ranges"""
    zs = np.linspace(z_range[0], z_range[1], count)
    ps = np.linspace(p_range[0], p_range[1], count)
    return [PhasePoint(float(z), float(p)) for z in zs for p in ps]


def _strobe_batch(z: np.ndarray, p: np.ndarray, n_periods: int, steps_per_period: int,
                  params: SystemParams, cutoff: float):
    """Strobe a batch of orbits once per period; escaped orbits turn into NaN"""
    integrator = SymplecticIntegrator(params, TWO_PI / steps_per_period)
    samples = np.empty((n_periods + 1, z.size, 2))
    samples[0, :, 0] = z
    samples[0, :, 1] = p
    alive = ~_escaped(z, p, cutoff)
    for n in range(n_periods):
        # restart each period at exactly 2*pi*n
        z, p = integrator.advance(z, p, TWO_PI * n, steps_per_period)
        escaped = _escaped(z, p, cutoff)
        alive &= ~escaped
        z = np.where(alive, z, np.nan)
        p = np.where(alive, p, np.nan)
        samples[n + 1, :, 0] = z
        samples[n + 1, :, 1] = p
    return samples, alive


def poincare(seeds: Sequence[PhasePoint], n_periods: int, params: SystemParams,
             steps_per_period: int = 1024, seed_ids: Optional[Sequence[str]] = None,
             workers: int = 1, cutoff: float = DIVERGENCE_CUTOFF) -> PoincareSection:
    """
    Build a Poincare surface of section at strobe phase t0 = 0

    Args:
        seeds: Initial phase points
        n_periods: Number of drive periods per orbit
        params: System parameters
        steps_per_period: Integrator steps per drive period
        seed_ids: Labels for the seeds, defaults to their index
        workers: Number of threads; seeds are split in contiguous chunks
        cutoff: Divergence cutoff

    Returns:
        Section with one sample per seed per period (diverged orbits excluded)
    """
    if n_periods < 1:
        raise ConfigError(f"n_periods must be >= 1, got {n_periods}")
    _check_step(TWO_PI / steps_per_period)
    seeds = list(seeds)
    seed_ids = [str(i) for i in range(len(seeds))] if seed_ids is None else list(seed_ids)
    if len(seed_ids) != len(seeds):
        raise ConfigError("seed_ids and seeds differ in length")

    z0 = np.array([s.z for s in seeds], dtype=float)
    p0 = np.array([s.p for s in seeds], dtype=float)
    chunks = [c for c in np.array_split(np.arange(len(seeds)), max(1, workers)) if c.size]

    def run(indices):
        return _strobe_batch(z0[indices], p0[indices], n_periods, steps_per_period, params, cutoff)

    if len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(chunks[0])]

    section = PoincareSection(seed_ids=seed_ids, seeds=seeds, strobe_phase=0.0, n_periods=n_periods)
    for indices, (samples, alive) in zip(chunks, results):
        for column, index in enumerate(indices):
            seed_id = seed_ids[index]
            if alive[column]:
                section.points[seed_id] = samples[:, column, :].copy()
            else:
                section.diverged[seed_id] = "orbit left the trusted region"
                logger.warning("seed %s diverged and is excluded from the section", seed_id)
    return section


def occupied_cells(points: np.ndarray, cell: float = 0.5) -> int:
    """Number of distinct cell x cell boxes visited by a set of (z, p) points"""
    points = np.asarray(points)
    points = points[np.all(np.isfinite(points), axis=1)]
    boxes = np.floor(points / cell).astype(np.int64)
    return int(np.unique(boxes, axis=0).shape[0])


def classify(exponent: float, zero_threshold: float = ZERO_THRESHOLD,
             chaotic_threshold: float = CHAOTIC_THRESHOLD) -> str:
    """Label an exponent regular, chaotic or undetermined"""
    if exponent < zero_threshold:
        return "regular"
    if exponent > chaotic_threshold:
        return "chaotic"
    return "undetermined"


def lyapunov_batch(seeds: Sequence[PhasePoint], params: SystemParams, T: float,
                   steps_per_period: int = 1024, separation: float = 1.0e-8,
                   transient_fraction: float = 0.1, min_periods: int = 1000,
                   cutoff: float = DIVERGENCE_CUTOFF,
                   zero_threshold: float = ZERO_THRESHOLD,
                   chaotic_threshold: float = CHAOTIC_THRESHOLD) -> List[LyapunovEstimate]:
    """
    Benettin two-trajectory estimate for several seeds in one integration loop

    Each reference orbit carries a shadow displaced by `separation` in z. The
    pair is renormalized back to that distance after every drive period; log
    growth before the transient time is discarded. A pair that leaves the
    trusted region is frozen and reported with classification "diverged"; the
    other seeds keep running.

    Args:
        seeds: Initial phase points
        params: System parameters
        T: Total integration time
        steps_per_period: Integrator steps per drive period
        separation: Initial (and renormalized) distance of the shadow orbit
        transient_fraction: Share of T discarded before accumulating
        min_periods: Smallest accepted T in drive periods
        cutoff: Divergence cutoff
        zero_threshold: Exponents below this are labelled regular
        chaotic_threshold: Exponents above this are labelled chaotic

    Returns:
        One estimate per seed, in seed order
    """
    n_periods = int(round(T / TWO_PI))
    if n_periods < min_periods:
        raise ConfigError(f"T covers {n_periods} periods, at least {min_periods} required")
    _check_step(TWO_PI / steps_per_period)
    n_transient = int(round(transient_fraction * n_periods))
    if n_transient >= n_periods:
        raise ConfigError("transient must be shorter than the run")
    if not zero_threshold <= chaotic_threshold:
        raise ConfigError(f"zero_threshold {zero_threshold} exceeds chaotic_threshold {chaotic_threshold}")

    seeds = list(seeds)
    start_z = np.array([[s.z, s.z + separation] for s in seeds], dtype=float)
    start_p = np.array([[s.p, s.p] for s in seeds], dtype=float)
    z, p = start_z.copy(), start_p.copy()
    integrator = SymplecticIntegrator(params, TWO_PI / steps_per_period)
    partial = np.zeros((n_periods - n_transient, len(seeds)))
    running = np.zeros(len(seeds))
    alive = np.ones(len(seeds), dtype=bool)
    diverged_at = np.full(len(seeds), np.nan)

    for n in range(n_periods):
        z, p = integrator.advance(z, p, TWO_PI * n, steps_per_period)
        escaped = _escaped(z, p, cutoff).any(axis=1) & alive
        if escaped.any():
            for row in np.nonzero(escaped)[0]:
                logger.warning("orbit from (%g, %g) diverged during period %d",
                               seeds[row].z, seeds[row].p, n)
            alive &= ~escaped
            diverged_at[escaped] = TWO_PI * n
        # dead pairs restart from their seed every period to keep the batch finite
        z[~alive] = start_z[~alive]
        p[~alive] = start_p[~alive]
        dz = z[:, 1] - z[:, 0]
        dp = p[:, 1] - p[:, 0]
        distance = np.hypot(dz, dp)
        scale = separation / distance
        z[:, 1] = z[:, 0] + dz * scale
        p[:, 1] = p[:, 0] + dp * scale
        if n >= n_transient:
            running[alive] += np.log(distance[alive] / separation)
            partial[n - n_transient] = running
        if n and n % 1000 == 0:
            logger.debug("lyapunov: %d / %d periods", n, n_periods)

    window = TWO_PI * (n_periods - n_transient)
    estimates = []
    for i in range(len(seeds)):
        if alive[i]:
            exponent = float(running[i] / window)
            estimates.append(LyapunovEstimate(
                exponent=exponent,
                partial_sums=partial[:, i].copy(),
                total_time=TWO_PI * n_periods,
                transient_time=TWO_PI * n_transient,
                classification=classify(exponent, zero_threshold, chaotic_threshold),
            ))
        else:
            estimates.append(LyapunovEstimate(
                exponent=math.nan,
                partial_sums=np.empty(0),
                total_time=TWO_PI * n_periods,
                transient_time=TWO_PI * n_transient,
                classification="diverged",
                diverged_at=float(diverged_at[i]),
            ))
    return estimates


def lyapunov(x0: PhasePoint, params: SystemParams, T: float, **kwargs) -> LyapunovEstimate:
    """
    Maximal Lyapunov exponent of one orbit

    Args:
        x0: Initial phase point
        params: System parameters
        T: Total integration time, at least 1000 drive periods
        **kwargs: Numerical knobs forwarded to lyapunov_batch

    Returns:
        Lyapunov estimate

    Raises:
        DivergedOrbitError: If the orbit leaves the trusted region
    """
    estimate = lyapunov_batch([x0], params, T, **kwargs)[0]
    if estimate.classification == "diverged":
        raise DivergedOrbitError(
            f"orbit from ({x0.z}, {x0.p}) diverged near t = {estimate.diverged_at:.6g}",
            t=estimate.diverged_at,
        )
    return estimate


def turning_points(E: float, params: SystemParams) -> Tuple[float, float]:
    """
    Inner and outer turning points of the undriven cavity at energy E

    Raises:
        DomainError: Without a wall, or when E does not exceed the potential minimum
    """
    if not (params.V0 > 0.0 and params.kappa > 0.0):
        raise DomainError("the undriven cavity needs a wall (V0 > 0, kappa > 0)")
    z_min = math.log(params.kappa * params.V0) / params.kappa

    def excess(z: float) -> float:
        return float(static_potential(z, params)) - E

    if not excess(z_min) < 0.0:
        raise DomainError(f"E = {E} does not exceed the cavity minimum {E + excess(z_min):.6g}")
    reach = 1.0
    while excess(z_min - reach) < 0.0:
        reach *= 2.0
    inner = brentq(excess, z_min - reach, z_min, xtol=1e-12)
    outer = brentq(excess, z_min, max(E, z_min) + 1.0, xtol=1e-12)
    return inner, outer


def bounce_period(E: float, params: SystemParams) -> float:
    """
    Period of the undriven soft-wall bounce at energy E

    T(E) = 2 * integral dz / sqrt(2 (E - V)) between the turning points, with
    z = mid - half * cos(theta) removing the square-root endpoint singularities.
    """
    inner, outer = turning_points(E, params)
    mid = 0.5 * (inner + outer)
    half = 0.5 * (outer - inner)

    def integrand(theta: float) -> float:
        gap = E - float(static_potential(mid - half * math.cos(theta), params))
        if gap <= 0.0:
            return 0.0
        return half * math.sin(theta) / math.sqrt(2.0 * gap)

    value, _ = quad(integrand, 0.0, math.pi, limit=200, epsabs=1e-10, epsrel=1e-10)
    return 2.0 * value


def locked_ratio(E: float, params: SystemParams, max_denominator: int = 3) -> Fraction:
    """
    Drive-period ratio m/q the bounce at energy E locks onto under modulation

    The undriven period T(E) / 2pi is rounded to the closest fraction with
    denominator at most max_denominator: q bounces every m drive periods.
    """
    if max_denominator < 1:
        raise ConfigError(f"max_denominator must be >= 1, got {max_denominator}")
    ratio = Fraction(bounce_period(E, params) / TWO_PI).limit_denominator(max_denominator)
    return max(ratio, Fraction(1, max_denominator))
