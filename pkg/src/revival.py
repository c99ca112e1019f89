"""
Recurrences, collapses and revivals of the autocorrelation C^2(t)

Analytic side: the triangular-well and soft-wall bounce periods, resonance
energies and the revival times of the undriven and driven cavity. Numerical
side: C^2(t) series from split-operator runs, a deterministic peak/revival
detector and a scan of revival survival against the modulation strength.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy.ndimage import maximum_filter1d, uniform_filter1d

from .classical import bounce_period, locked_ratio
from .core import TWO_PI, RunConfig, SystemParams
from .errors import (AnalysisError, ConfigError, DomainError, GravicavError,
                     SeriesTooShortError, SingularityError)
from .quantum import (GaussianSpec, Grid, SplitOperatorPropagator, Wavepacket,
                      autocorrelation, expectation_energy, init_gaussian)

logger = logging.getLogger(__name__)

REVIVAL_THRESHOLD = 0.5
LAMBDA_U_THRESHOLD = 0.2
# revival heights and the collapse test are read off this envelope, not raw C^2
HEIGHT_MEASURE = "running max of C^2 over t_cl_hint, then moving average over t_cl_hint"


@dataclass
class AutocorrSeries:
    """C^2(t) on a uniform time cadence with its provenance"""

    times: np.ndarray
    values: np.ndarray
    params: Optional[SystemParams] = None
    spec: Optional[GaussianSpec] = None
    mean_z: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.times.shape or values.size < 2:
            raise AnalysisError("times and values must be matching arrays of length >= 2")
        if values.min() < -1e-12 or values.max() > 1.0 + 1e-10:
            raise AnalysisError("C^2 values must lie in [0, 1]")
        if abs(values[0] - 1.0) > 1e-10:
            raise AnalysisError(f"C^2(0) must be 1, got {values[0]!r}")
        self.values = np.clip(values, 0.0, 1.0)

    @property
    def cadence(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])


@dataclass
class RevivalReport:
    """Outcome of the revival detector"""

    peak_times: np.ndarray
    peak_heights: np.ndarray
    revival_time: float
    revival_height: float
    collapse_time: Optional[float]
    collapse_depth: float
    revival_present: bool
    t_cl_hint: float
    thresholds: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "peak_times": self.peak_times.tolist(),
            "peak_heights": self.peak_heights.tolist(),
            "revival_time": self.revival_time,
            "revival_height": self.revival_height,
            "collapse_time": self.collapse_time,
            "collapse_depth": self.collapse_depth,
            "revival_present": self.revival_present,
            "t_cl_hint": self.t_cl_hint,
            "thresholds": dict(self.thresholds),
            "height_measure": HEIGHT_MEASURE,
        }


@dataclass(frozen=True)
class ResonanceModel:
    """Nth resonance seen from a packet of mean energy E0"""

    N: int
    E_N: float
    r: float
    a: float

    def __post_init__(self):
        if not (self.E_N > 0.0 and self.r > 0.0 and self.a > 0.0):
            raise DomainError(f"resonance model needs positive E_N, r, a, got {self}")

    @classmethod
    def from_order(cls, N: int, E0: float, kbar: float) -> "ResonanceModel":
        """Model of resonance N with E_N from the triangular-well inversion"""
        if not (E0 > 0.0 and kbar > 0.0):
            raise DomainError(f"E0 and kbar must be positive, got {E0}, {kbar}")
        E_N = resonance_energy(N)
        r = math.sqrt(E_N / E0)
        return cls(N=N, E_N=E_N, r=r, a=r * r * kbar / (4.0 * E0))


class ModulatedRevival(NamedTuple):
    time: float
    factor: float
    out_of_regime: bool


def t_classical(E: float) -> float:
    """Bounce period 2 sqrt(2E) of the triangular-well approximation"""
    if not E > 0.0:
        raise DomainError(f"energy must be positive, got {E}")
    return 2.0 * math.sqrt(2.0 * E)


def resonance_energy(N: int) -> float:
    """Energy (N pi)^2 / 2 whose triangular-well period is N drive periods"""
    if N < 1:
        raise DomainError(f"resonance order must be >= 1, got {N}")
    return (N * math.pi) ** 2 / 2.0


def nearest_resonance(E0: float) -> int:
    """Resonance order closest to the packet's own bounce period"""
    return max(1, int(round(t_classical(E0) / TWO_PI)))


def t_revival_unmodulated(E0: float, kbar: float) -> float:
    """Revival time 16 E0^2 / (pi kbar) of the undriven cavity"""
    if not (E0 > 0.0 and kbar > 0.0):
        raise DomainError(f"E0 and kbar must be positive, got {E0}, {kbar}")
    return 16.0 * E0 ** 2 / (math.pi * kbar)


def peak_period(E0: float, params: SystemParams, max_denominator: int = 3) -> float:
    """
    Spacing of the classical-period recurrences of C^2(t)

    Undriven, this is the soft-wall bounce period at E0. Under modulation the
    bounce locks onto the closest resonance, q bounces every m drive periods
    with q <= max_denominator, and the packet returns every 2 pi m / q.
    Without a wall the triangular-well period is returned.
    """
    if params.V0 == 0.0:
        return t_classical(E0)
    if params.lam == 0.0:
        return bounce_period(E0, params)
    return TWO_PI * float(locked_ratio(E0, params, max_denominator))


def t_revival_semiclassical(E0: float, params: SystemParams) -> float:
    """
    Revival time T^3 / (pi kbar |dT/dE|) of the undriven soft-wall cavity

    T(E) is the soft-wall bounce period; for the triangular well this reduces
    to 16 E0^2 / (pi kbar). Without a wall that value is returned.
    """
    if params.V0 == 0.0:
        return t_revival_unmodulated(E0, params.kbar)
    step = 1.0e-3 * max(E0, 1.0)
    period = bounce_period(E0, params)
    slope = (bounce_period(E0 + step, params) - bounce_period(E0 - step, params)) / (2.0 * step)
    if slope == 0.0:
        raise SingularityError(f"bounce period is stationary at E = {E0}")
    return period ** 3 / (math.pi * params.kbar * abs(slope))


def t_revival_modulated(E0: float, model: ResonanceModel, lam: float, kbar: float,
                        pole_tolerance: float = 1.0e-6, regime_limit: float = 0.5) -> ModulatedRevival:
    """
    Revival time of the driven cavity

        T = T0 [1 - (1/8) (lambda/E0)^2 (3(1-r)^2 + a^2) / ((1-r)^2 - a^2)^3]

    Args:
        E0: Mean packet energy
        model: Resonance model supplying r and a
        lam: Modulation strength
        kbar: Effective Planck constant
        pole_tolerance: Smallest accepted |(1-r)^2 - a^2|
        regime_limit: |factor - 1| above which the result is flagged

    Returns:
        ModulatedRevival with the time, the bracketed factor and the regime flag
    """
    if not lam >= 0.0:
        raise DomainError(f"lambda must be non-negative, got {lam}")
    T0 = t_revival_unmodulated(E0, kbar)
    detuning = (1.0 - model.r) ** 2
    gap = detuning - model.a ** 2
    if abs(gap) < pole_tolerance:
        raise SingularityError(f"(1-r)^2 - a^2 = {gap:.3e} is within {pole_tolerance} of the pole")
    correction = (lam / E0) ** 2 * (3.0 * detuning + model.a ** 2) / (8.0 * gap ** 3)
    factor = 1.0 - correction
    return ModulatedRevival(time=T0 * factor, factor=factor, out_of_regime=abs(correction) > regime_limit)


def autocorr_series(spec: GaussianSpec, params: SystemParams, run: RunConfig,
                    horizon: Optional[float] = None, **guards) -> AutocorrSeries:
    """
    Propagate a Gaussian packet and sample C^2(t) and <z>(t)

    Args:
        spec: Initial packet
        params: System parameters
        run: Grid, step and output cadence
        horizon: Final time, defaults to run.t_total
        **guards: Guard settings forwarded to the propagator

    Returns:
        Autocorrelation series starting at t = 0
    """
    grid = Grid(run.z_min, run.z_max, run.n)
    psi0 = init_gaussian(spec, grid, params.kbar)
    horizon = run.t_total if horizon is None else horizon
    propagator = SplitOperatorPropagator(grid, params, run.dt, **guards)

    times, values, mean_z = [0.0], [1.0], [float(np.sum(grid.z * psi0.density) * grid.dz)]

    def observe(state: Wavepacket):
        times.append(state.t)
        values.append(autocorrelation(psi0, state))
        mean_z.append(float(np.sum(grid.z * state.density) * grid.dz))

    # stop on the last full sampling instant so the cadence stays uniform
    n_samples = int(math.floor(horizon / (run.dt * run.output_every) * (1.0 + 1e-12)))
    t_end = n_samples * run.output_every * run.dt
    propagator.evolve(psi0, t_end, observer=observe, sample_every=run.output_every)
    logger.debug("C^2 series from (%g, %g): %d samples to t = %g",
                 spec.center.z, spec.center.p, len(times), t_end)
    return AutocorrSeries(np.asarray(times), np.asarray(values), params, spec, np.asarray(mean_z))


def smooth_envelope(series: AutocorrSeries, period: float) -> np.ndarray:
    """
    Revival envelope of C^2(t)

    Running maximum over one classical period (upper envelope of the bounce
    recurrences), followed by a moving average over one classical period.
    """
    width = max(1, int(round(period / series.cadence)))
    envelope = maximum_filter1d(series.values, size=width, mode="nearest")
    return uniform_filter1d(envelope, size=width, mode="nearest")


def detect(series: AutocorrSeries, T_cl_hint: float,
           revival_threshold: float = REVIVAL_THRESHOLD,
           collapse_fraction: float = 0.5,
           window_fraction: float = 0.25) -> RevivalReport:
    """
    Find the classical-period peak train, the first collapse and the revival

    Args:
        series: C^2 series, at least 3 classical periods long
        T_cl_hint: Classical period used for windows and smoothing
        revival_threshold: Envelope maximum above which a revival is present
        collapse_fraction: Share of the envelope at 1.5 T_cl_hint marking the collapse
        window_fraction: Half-width of the peak windows in classical periods

    Returns:
        Revival report
    """
    if not T_cl_hint > 0.0:
        raise DomainError(f"classical period must be positive, got {T_cl_hint}")
    if series.duration < 3.0 * T_cl_hint:
        raise SeriesTooShortError(
            f"series covers {series.duration:.4g}, detector needs {3.0 * T_cl_hint:.4g}"
        )
    t = series.times - series.times[0]
    values = series.values

    peak_times, peak_heights = [], []
    n = 1
    while (n + window_fraction) * T_cl_hint <= t[-1]:
        window = np.nonzero((t >= (n - window_fraction) * T_cl_hint)
                            & (t <= (n + window_fraction) * T_cl_hint))[0]
        if window.size:
            best = window[np.argmax(values[window])]
            peak_times.append(float(series.times[best]))
            peak_heights.append(float(values[best]))
        n += 1

    smooth = smooth_envelope(series, T_cl_hint)
    start = int(np.searchsorted(t, 1.5 * T_cl_hint))
    below = np.nonzero(smooth[start:] <= collapse_fraction * smooth[start])[0]
    collapse_index = start + int(below[0]) if below.size else None
    search_from = start if collapse_index is None else collapse_index
    # the revival peak lies past the first trough of the decaying envelope
    rising = np.nonzero(np.diff(smooth[search_from:]) > 0.0)[0]
    trough = search_from + int(rising[0]) if rising.size else len(smooth) - 1
    revival_index = trough + int(np.argmax(smooth[trough:]))
    collapse_depth = float(np.min(smooth[start:revival_index + 1]))
    revival_height = float(smooth[revival_index])

    return RevivalReport(
        peak_times=np.asarray(peak_times),
        peak_heights=np.asarray(peak_heights),
        revival_time=float(series.times[revival_index]),
        revival_height=revival_height,
        collapse_time=None if collapse_index is None else float(series.times[collapse_index]),
        collapse_depth=collapse_depth,
        revival_present=revival_height >= revival_threshold,
        t_cl_hint=float(T_cl_hint),
        thresholds={
            "envelope_revival_threshold": revival_threshold,
            "envelope_collapse_fraction": collapse_fraction,
            "peak_window_fraction": window_fraction,
        },
    )


@dataclass
class LambdaScan:
    """Revival time and height against modulation strength"""

    entries: List[Dict[str, Any]]
    lambda_u: Optional[float]
    lambda_u_threshold: float
    E0: float
    T0: float
    T_semiclassical: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "entries": self.entries,
            "lambda_u": self.lambda_u,
            "lambda_u_threshold": self.lambda_u_threshold,
            "E0": self.E0,
            "T0": self.T0,
            "T_semiclassical": self.T_semiclassical,
        }


def lambda_scan(spec: GaussianSpec, lambdas: Sequence[float], horizon: float,
                params: SystemParams, run: RunConfig, T_cl_hint: Optional[float] = None,
                resonance_order: Optional[int] = None, lock_denominator: int = 3,
                revival_threshold: float = REVIVAL_THRESHOLD,
                lambda_u_threshold: float = LAMBDA_U_THRESHOLD,
                collapse_fraction: float = 0.5, pole_tolerance: float = 1.0e-6,
                regime_limit: float = 0.5, workers: int = 1, **guards) -> LambdaScan:
    """
    Track the revival while the modulation strength grows

    Args:
        spec: Initial packet
        lambdas: Sorted non-negative modulation strengths
        horizon: Propagation time per entry
        params: System parameters (lambda replaced per entry)
        run: Grid, step and cadence
        T_cl_hint: Classical period for the detector, defaults per entry to
            peak_period at that entry's modulation strength
        resonance_order: Resonance used for the predicted revival time
        lock_denominator: Largest bounce count per locked cycle, see peak_period
        revival_threshold: Height marking a present revival
        lambda_u_threshold: Height below which revivals count as destroyed
        collapse_fraction: Forwarded to detect
        pole_tolerance: Forwarded to t_revival_modulated
        regime_limit: Forwarded to t_revival_modulated
        workers: Parallel propagations
        **guards: Guard settings forwarded to the propagator

    Returns:
        Scan table in lambda order with the empirical lambda_u estimate
    """
    lambdas = [float(v) for v in lambdas]
    if not lambdas:
        raise ConfigError("lambda scan needs at least one value")
    if any(v < 0.0 for v in lambdas) or lambdas != sorted(lambdas):
        raise ConfigError(f"lambdas must be non-negative and sorted, got {lambdas}")

    grid = Grid(run.z_min, run.z_max, run.n)
    E0 = expectation_energy(init_gaussian(spec, grid, params.kbar), params)
    T0 = t_revival_unmodulated(E0, params.kbar)
    order = nearest_resonance(E0) if resonance_order is None else resonance_order
    model = ResonanceModel.from_order(order, E0, params.kbar)

    def run_entry(lam: float) -> Dict[str, Any]:
        entry: Dict[str, Any] = {"lambda": lam, "resonance_order": order, "t_cl_hint": None}
        try:
            prediction = t_revival_modulated(E0, model, lam, params.kbar, pole_tolerance, regime_limit)
            entry["predicted_time"] = prediction.time
            entry["predicted_out_of_regime"] = prediction.out_of_regime
        except SingularityError as exc:
            entry["predicted_time"] = None
            entry["predicted_out_of_regime"] = True
            logger.warning("lambda = %g: %s", lam, exc)
        try:
            entry_params = params.with_lambda(lam)
            hint = T_cl_hint if T_cl_hint is not None else peak_period(E0, entry_params, lock_denominator)
            entry["t_cl_hint"] = hint
            series = autocorr_series(spec, entry_params, run, horizon=horizon, **guards)
            report = detect(series, hint, revival_threshold=revival_threshold,
                            collapse_fraction=collapse_fraction)
            entry.update(revival_time=report.revival_time, revival_height=report.revival_height,
                         revival_present=report.revival_present, error=None)
        except GravicavError as exc:
            logger.warning("lambda = %g failed: %s", lam, exc)
            entry.update(revival_time=None, revival_height=None, revival_present=False,
                         error=f"{type(exc).__name__}: {exc}")
        return entry

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(run_entry, lambdas))
    else:
        entries = [run_entry(lam) for lam in lambdas]

    lambda_u = next((e["lambda"] for e in entries
                     if e["revival_height"] is not None and e["revival_height"] < lambda_u_threshold), None)
    T_sc = t_revival_semiclassical(E0, params.with_lambda(0.0))
    return LambdaScan(entries=entries, lambda_u=lambda_u, lambda_u_threshold=lambda_u_threshold,
                      E0=E0, T0=T0, T_semiclassical=T_sc)
