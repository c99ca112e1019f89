"""
Floquet analysis of the driven cavity

The one-period evolution operator is built column by column with the
split-operator stepper, then diagonalized. Localization diagnostics
(coherent-state overlaps, mean actions and Husimi maps) select the states of a
phase-space region, and gap statistics along the selected states test for
equally spaced ladders at resonance centers.
"""

import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.integrate import trapezoid

from .core import TWO_PI, PhasePoint, SystemParams, static_potential
from .errors import (ConfigError, EigenSolverError, GridMismatchError,
                     InsufficientStatesError, UnitarityError)
from .persistence import atomic_write_bytes, write_json
from .quantum import GaussianSpec, Grid, SplitOperatorPropagator, Wavepacket, gaussian_amplitudes

logger = logging.getLogger(__name__)

UNITARITY_TOLERANCE = 1.0e-8
EIGENPHASE_TOLERANCE = 1.0e-6
COHERENT_SIGMA_Z = 1.0 / math.sqrt(2.0)


@dataclass
class MonodromyOperator:
    """Dense one-period propagator U acting on grid amplitudes"""

    matrix: np.ndarray
    grid: Grid
    dt: float
    params: SystemParams
    unitarity_error: float
    tolerance: float = UNITARITY_TOLERANCE

    def apply(self, psi: Wavepacket) -> Wavepacket:
        """Advance a wavepacket by one drive period"""
        if psi.grid != self.grid:
            raise GridMismatchError("wavepacket grid differs from the monodromy grid")
        return Wavepacket(self.matrix @ psi.amplitudes, self.grid, psi.t + TWO_PI)


@dataclass
class FloquetSpectrum:
    """
    Quasi-energies in [0, kbar) with their Floquet states

    Columns of `vectors` are the states, normalized on the grid
    (sum |v|^2 dz = 1). Localization weights are attached under a name.
    """

    quasi_energies: np.ndarray
    vectors: np.ndarray
    grid: Grid
    kbar: float
    weights: Dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.quasi_energies)

    def state(self, index: int) -> np.ndarray:
        return self.vectors[:, index]


@dataclass
class StaticSpectrum:
    """Lowest eigenpairs of the undriven Hamiltonian on a grid"""

    energies: np.ndarray
    vectors: np.ndarray
    grid: Grid


@dataclass
class StaticMatch:
    """Floquet partner of each static eigenstate"""

    static_index: np.ndarray
    floquet_index: np.ndarray
    overlaps: np.ndarray
    differences: np.ndarray

    @property
    def max_difference(self) -> float:
        return float(np.max(np.abs(self.differences)))


@dataclass
class LadderStatistics:
    gaps: np.ndarray
    mean_gap: float
    std_gap: float
    relative_deviation: float


@dataclass
class SpacingReport:
    """Quasi-energy ladder of the states localized around a phase point"""

    center: PhasePoint
    indices: np.ndarray
    overlaps: np.ndarray
    actions: np.ndarray
    quasi_energies: np.ndarray
    statistics: LadderStatistics
    partners: List[List[int]] = field(default_factory=list)    # merged Floquet indices per state
    states: Optional[np.ndarray] = None                        # localized states as columns
    zone: Optional[float] = None

    @property
    def relative_deviation(self) -> float:
        return self.statistics.relative_deviation

    def to_dict(self) -> Dict[str, Any]:
        return {
            "center": list(self.center.as_tuple()),
            "indices": self.indices.tolist(),
            "overlaps": self.overlaps.tolist(),
            "actions": self.actions.tolist(),
            "quasi_energies": self.quasi_energies.tolist(),
            "partners": [list(group) for group in self.partners],
            "zone": self.zone,
            "gaps": self.statistics.gaps.tolist(),
            "mean_gap": self.statistics.mean_gap,
            "std_gap": self.statistics.std_gap,
            "relative_deviation": self.statistics.relative_deviation,
        }


@dataclass
class HusimiMap:
    """Husimi density on a (p, z) lattice, rows indexed by p"""

    z: np.ndarray
    p: np.ndarray
    values: np.ndarray

    @property
    def mass(self) -> float:
        return float(trapezoid(trapezoid(self.values, self.z, axis=1), self.p))

    def rows(self):
        for i, p in enumerate(self.p):
            for j, z in enumerate(self.z):
                yield (float(z), float(p), float(self.values[i, j]))


def unitarity_error(matrix: np.ndarray) -> float:
    """max |U^H U - I|"""
    gram = matrix.conj().T @ matrix
    return float(np.max(np.abs(gram - np.eye(matrix.shape[0]))))


def _propagate_columns(propagator: SplitOperatorPropagator, columns: np.ndarray,
                       n_full: int, remainder: float) -> np.ndarray:
    out = columns
    for k in range(n_full):
        out = propagator.step(out, k * propagator.dt)
    if remainder > 0.0:
        out = propagator.step(out, n_full * propagator.dt, h=remainder)
    return out


def build_monodromy(grid: Grid, params: SystemParams, dt: float, workers: int = 1,
                    tolerance: float = UNITARITY_TOLERANCE) -> MonodromyOperator:
    """
    Build the one-period evolution operator U(2 pi, 0)

    Column j is basis state e_j propagated from t = 0 to 2 pi. Columns are
    stepped together as blocks, one block per worker.

    Args:
        grid: Position grid, typically coarser than for propagation runs
        params: System parameters
        dt: Time step, at most 2*pi/512
        workers: Parallel column blocks
        tolerance: Largest accepted max |U^H U - I|

    Returns:
        Monodromy operator
    """
    propagator = SplitOperatorPropagator(grid, params, dt)
    n_full = int(math.floor(TWO_PI / dt * (1.0 + 1e-12)))
    remainder = TWO_PI - n_full * dt
    if remainder < 1e-12:
        remainder = 0.0

    identity = np.eye(grid.n, dtype=complex)
    blocks = np.array_split(np.arange(grid.n), max(1, min(workers, grid.n)))
    logger.debug("monodromy: N = %d, %d steps, %d column blocks", grid.n, n_full, len(blocks))

    def run_block(index: np.ndarray) -> np.ndarray:
        return _propagate_columns(propagator, identity[:, index], n_full, remainder)

    if len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            parts = list(pool.map(run_block, blocks))
    else:
        parts = [run_block(blocks[0])]
    matrix = np.concatenate(parts, axis=1)

    error = unitarity_error(matrix)
    if error >= tolerance:
        raise UnitarityError(f"max |U^H U - I| = {error:.3e} exceeds {tolerance:.1e}")
    logger.info("monodromy built: N = %d, unitarity error %.2e", grid.n, error)
    return MonodromyOperator(matrix, grid, dt, params, error, tolerance)


def save_monodromy(path, operator: MonodromyOperator) -> Tuple[Path, Path]:
    """
    Store U as .npy with a JSON sidecar describing grid, step and parameters

    Returns:
        Paths of the matrix file and the sidecar
    """
    path = Path(path)
    buffer = io.BytesIO()
    np.save(buffer, operator.matrix, allow_pickle=False)
    atomic_write_bytes(path, buffer.getvalue())
    sidecar = path.with_suffix(".json")
    write_json(sidecar, {
        "grid": {"z_min": operator.grid.z_min, "z_max": operator.grid.z_max, "n": operator.grid.n},
        "dt": operator.dt,
        "params": operator.params.to_dict(),
        "unitarity_error": operator.unitarity_error,
        "tolerance": operator.tolerance,
    })
    return path, sidecar


def load_monodromy(path) -> MonodromyOperator:
    """Reload a stored operator and recheck unitarity"""
    path = Path(path)
    matrix = np.load(path, allow_pickle=False)
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    grid = Grid(meta["grid"]["z_min"], meta["grid"]["z_max"], meta["grid"]["n"])
    if matrix.shape != (grid.n, grid.n):
        raise GridMismatchError(f"stored matrix has shape {matrix.shape}, sidecar says N = {grid.n}")
    physics = meta["params"]
    params = SystemParams(V0=physics["V0"], kappa=physics["kappa"], lam=physics["lambda"],
                          kbar=physics["kbar"], v_clamp=physics["v_clamp"])
    tolerance = meta.get("tolerance", UNITARITY_TOLERANCE)
    error = unitarity_error(matrix)
    if error >= tolerance:
        raise UnitarityError(f"reloaded operator: max |U^H U - I| = {error:.3e}")
    return MonodromyOperator(matrix, grid, meta["dt"], params, error, tolerance)


def fold(values: np.ndarray, kbar: float) -> np.ndarray:
    """Map energies into the zone [0, kbar)"""
    folded = np.mod(values, kbar)
    return np.where(folded >= kbar, folded - kbar, folded)


def circular_difference(values: np.ndarray, kbar: float) -> np.ndarray:
    """Map differences into [-kbar/2, kbar/2)"""
    return np.mod(np.asarray(values) + 0.5 * kbar, kbar) - 0.5 * kbar


def quasi_energies(operator: MonodromyOperator, kbar: Optional[float] = None) -> FloquetSpectrum:
    """
    Diagonalize U and return the sorted quasi-energy spectrum

    Uses the complex Schur form; for a unitary matrix the Schur vectors are
    orthonormal eigenvectors and the diagonal holds the eigenvalues
    exp(-i eps 2 pi / kbar).

    Args:
        operator: Monodromy operator
        kbar: Zone width, defaults to the operator's kbar

    Returns:
        Floquet spectrum with eps in [0, kbar), ascending
    """
    kbar = operator.params.kbar if kbar is None else kbar
    U = operator.matrix
    try:
        schur_form, schur_vectors = linalg.schur(U, output="complex")
    except (linalg.LinAlgError, ValueError) as exc:
        raise EigenSolverError(f"Schur decomposition failed: {exc}") from exc

    eigenvalues = np.diag(schur_form)
    modulus_error = float(np.max(np.abs(np.abs(eigenvalues) - 1.0)))
    residual = float(np.max(np.abs(U @ schur_vectors - schur_vectors * eigenvalues)))
    if residual > EIGENPHASE_TOLERANCE or modulus_error > EIGENPHASE_TOLERANCE:
        raise EigenSolverError(
            f"eigenpairs inconsistent: residual {residual:.2e}, |eigenvalue| error {modulus_error:.2e}"
        )

    eps = fold(-(kbar / TWO_PI) * np.angle(eigenvalues), kbar)
    order = np.argsort(eps, kind="stable")
    vectors = schur_vectors[:, order] / math.sqrt(operator.grid.dz)
    logger.debug("quasi-energies: %d states, residual %.2e", len(eps), residual)
    return FloquetSpectrum(eps[order], vectors, operator.grid, kbar)


def static_spectrum(grid: Grid, params: SystemParams, n_states: int = 20) -> StaticSpectrum:
    """
    Lowest eigenpairs of p^2/2 + z + V0 exp(-kappa z) on the grid

    The kinetic operator is the same spectral (FFT) operator the propagator
    uses, so the two spectra are directly comparable.
    """
    if not 1 <= n_states <= grid.n:
        raise ConfigError(f"n_states must lie in [1, {grid.n}], got {n_states}")
    p = grid.momenta(params.kbar)
    kinetic = np.fft.ifft(0.5 * p[:, None] ** 2 * np.fft.fft(np.eye(grid.n), axis=0), axis=0)
    hamiltonian = kinetic + np.diag(static_potential(grid.z, params))
    hamiltonian = 0.5 * (hamiltonian + hamiltonian.conj().T)
    try:
        energies, vectors = linalg.eigh(hamiltonian, subset_by_index=[0, n_states - 1])
    except linalg.LinAlgError as exc:
        raise EigenSolverError(f"static diagonalization failed: {exc}") from exc
    return StaticSpectrum(energies, vectors / math.sqrt(grid.dz), grid)


def match_static(spectrum: FloquetSpectrum, static: StaticSpectrum) -> StaticMatch:
    """
    Pair each static eigenstate with the Floquet state it overlaps most and
    compare the folded static energy with that state's quasi-energy
    """
    if spectrum.grid != static.grid:
        raise GridMismatchError("Floquet and static spectra live on different grids")
    overlaps = np.abs(static.vectors.conj().T @ spectrum.vectors * spectrum.grid.dz) ** 2
    partner = np.argmax(overlaps, axis=1)
    rows = np.arange(len(static.energies))
    differences = circular_difference(
        spectrum.quasi_energies[partner] - fold(static.energies, spectrum.kbar), spectrum.kbar
    )
    return StaticMatch(rows, partner, overlaps[rows, partner], differences)


def coherent_overlaps(spectrum: FloquetSpectrum, center: PhasePoint,
                   sigma_z: float = COHERENT_SIGMA_Z) -> np.ndarray:
    """|<coherent(center)|v_j>|^2 for every Floquet state"""
    coherent = gaussian_amplitudes(GaussianSpec(center, sigma_z), spectrum.grid, spectrum.kbar)
    return np.abs(coherent.conj() @ spectrum.vectors * spectrum.grid.dz) ** 2


def _vector_actions(vectors: np.ndarray, grid: Grid, kbar: float, center: PhasePoint) -> np.ndarray:
    rho = np.abs(vectors) ** 2
    rho = rho / rho.sum(axis=0)
    position = ((grid.z[:, None] - center.z) ** 2 * rho).sum(axis=0)

    phi = np.abs(np.fft.fft(vectors, axis=0)) ** 2
    phi = phi / phi.sum(axis=0)
    p = grid.momenta(kbar)
    momentum = ((p[:, None] - center.p) ** 2 * phi).sum(axis=0)
    return 0.5 * (position + momentum)


def mean_action(spectrum: FloquetSpectrum, center: PhasePoint,
                indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Mean action 1/2 <(z - z0)^2 + (p - p0)^2> of states about a phase point

    Args:
        spectrum: Floquet spectrum
        center: Phase point (z0, p0)
        indices: States to evaluate, all by default

    Returns:
        One action per evaluated state
    """
    vectors = spectrum.vectors if indices is None else spectrum.vectors[:, np.asarray(indices)]
    return _vector_actions(vectors, spectrum.grid, spectrum.kbar, center)


def disc_action(state: np.ndarray, grid: Grid, kbar: float, center: PhasePoint, radius: float,
                resolution: int = 41, sigma_z: float = COHERENT_SIGMA_Z) -> Tuple[float, float]:
    """
    Husimi-weighted mean of 1/2 |zeta - center|^2 over the disc of given radius

    Only the part of the state inside the disc counts, so tails reaching into
    other islands or the sea do not shift the action.

    Returns:
        Tuple of (action, Husimi mass inside the disc)
    """
    window = (center.z - radius, center.z + radius, center.p - radius, center.p + radius)
    hmap = husimi(state, grid, kbar, window, (resolution, resolution), sigma_z)
    r2 = (hmap.z[None, :] - center.z) ** 2 + (hmap.p[:, None] - center.p) ** 2
    weights = np.where(r2 <= radius ** 2, hmap.values, 0.0)
    total = float(weights.sum())
    mass = total * (hmap.z[1] - hmap.z[0]) * (hmap.p[1] - hmap.p[0])
    if total <= 0.0:
        return math.inf, 0.0
    return float(0.5 * np.sum(weights * r2) / total), float(mass)


def ladder_statistics(quasi_energies: np.ndarray, order_key: np.ndarray, kbar: float) -> LadderStatistics:
    """
    Gap statistics of quasi-energies taken in the order of order_key

    Gaps are reduced into [-kbar/2, kbar/2), so a global phase shift or a
    ladder wrapping through the zone edge leaves them unchanged.
    """
    quasi_energies = np.asarray(quasi_energies, dtype=float)
    if quasi_energies.size < 2:
        raise InsufficientStatesError("ladder statistics need at least two levels")
    order = np.argsort(np.asarray(order_key), kind="stable")
    gaps = circular_difference(np.diff(quasi_energies[order]), kbar)
    mean_gap = float(np.mean(gaps))
    std_gap = float(np.std(gaps))
    deviation = std_gap / abs(mean_gap) if mean_gap != 0.0 else math.inf
    return LadderStatistics(gaps, mean_gap, std_gap, deviation)


def _partner_groups(folded: np.ndarray, candidates: np.ndarray, zone: float,
                    tolerance: float, chain: int):
    groups = []
    for j in candidates:
        for group in groups:
            if len(group) < chain and abs(circular_difference(folded[j] - folded[group[0]], zone)) < tolerance:
                group.append(int(j))
                break
        else:
            groups.append([int(j)])
    return groups


def resonance_spacing(spectrum: FloquetSpectrum, center: PhasePoint, kbar: Optional[float] = None,
                      threshold: float = 1.0e-2, chain: int = 1, partner_tolerance: float = 1.0e-3,
                      action_radius: Optional[float] = None, min_disc_mass: float = 0.0,
                      sigma_z: float = COHERENT_SIGMA_Z) -> SpacingReport:
    """
    Quasi-energy ladder of the states localized at a resonance center

    A resonance whose orbit closes after `chain` drive periods is a chain of
    islands visited in turn. Its one-period Floquet states come as groups of
    `chain` partners spread over all islands, split by kbar / chain. The
    quasi-energies are folded into the zone [0, kbar / chain), partners that
    coincide there are merged, and each group is replaced by the coherent
    state's projection onto its span, which lives on the island around
    center alone.

    Args:
        spectrum: Floquet spectrum
        center: Coherent-state center on the island
        kbar: Zone width before folding, defaults to the spectrum's
        threshold: Smallest coherent-state overlap for a state to be selected
        chain: Drive periods per cycle of the resonant orbit
        partner_tolerance: Folded quasi-energies closer than this (in units
            of kbar) are partners
        action_radius: Evaluate actions from the Husimi density inside this
            disc around center; None uses the plain mean action
        min_disc_mass: With action_radius, drop states whose Husimi mass
            inside the disc is below this
        sigma_z: Width of the coherent state

    Returns:
        Spacing report with the localized states ordered by action
    """
    kbar = spectrum.kbar if kbar is None else kbar
    if chain < 1:
        raise ConfigError(f"chain must be >= 1, got {chain}")
    zone = kbar / chain
    grid = spectrum.grid
    coherent = gaussian_amplitudes(GaussianSpec(center, sigma_z), grid, spectrum.kbar)
    coefficients = spectrum.vectors.conj().T @ coherent * grid.dz
    overlaps = np.abs(coefficients) ** 2

    candidates = np.nonzero(overlaps > threshold)[0]
    candidates = candidates[np.argsort(-overlaps[candidates], kind="stable")]
    folded = fold(spectrum.quasi_energies, zone)
    groups = _partner_groups(folded, candidates, zone, partner_tolerance * kbar, chain)

    states = np.empty((grid.n, len(groups)), dtype=complex)
    weights = np.empty(len(groups))
    for k, group in enumerate(groups):
        members = np.asarray(group)
        weights[k] = float(overlaps[members].sum())
        states[:, k] = spectrum.vectors[:, members] @ coefficients[members] / math.sqrt(weights[k])
    if action_radius is None:
        actions = _vector_actions(states, grid, spectrum.kbar, center)
        keep = np.arange(len(groups))
    else:
        moments = [disc_action(states[:, k], grid, spectrum.kbar, center, action_radius, sigma_z=sigma_z)
                   for k in range(len(groups))]
        actions = np.array([m[0] for m in moments])
        keep = np.array([k for k, m in enumerate(moments) if m[1] >= min_disc_mass], dtype=int)
    if keep.size < 3:
        raise InsufficientStatesError(
            f"only {keep.size} localized states at ({center.z}, {center.p}) above overlap {threshold}"
        )

    order = keep[np.argsort(actions[keep], kind="stable")]
    energies = np.array([folded[group[0]] for group in groups])
    stats = ladder_statistics(energies[order], actions[order], zone)
    logger.debug("ladder at (%g, %g): %d states in %d groups, zone %g",
                 center.z, center.p, candidates.size, len(groups), zone)
    return SpacingReport(
        center=center,
        indices=np.array([groups[k][0] for k in order]),
        overlaps=weights[order],
        actions=actions[order],
        quasi_energies=energies[order],
        statistics=stats,
        partners=[groups[k] for k in order],
        states=states[:, order],
        zone=zone,
    )


def husimi(state: np.ndarray, grid: Grid, kbar: float,
           window: Sequence[float] = (0.0, 40.0, -4.0, 4.0),
           resolution: Sequence[int] = (161, 81),
           sigma_z: float = COHERENT_SIGMA_Z) -> HusimiMap:
    """
    Husimi density |<coherent(z, p)|state>|^2 / (2 pi kbar) on a lattice

    Args:
        state: Grid-normalized amplitudes
        grid: Position grid of the state
        kbar: Effective Planck constant
        window: (z_lo, z_hi, p_lo, p_hi)
        resolution: Lattice points along z and p
        sigma_z: Width of the coherent states

    Returns:
        Husimi map with values[i, j] at (z[j], p[i])
    """
    z_lo, z_hi, p_lo, p_hi = (float(v) for v in window)
    nz, n_p = (int(v) for v in resolution)
    if nz < 2 or n_p < 2 or not (z_hi > z_lo and p_hi > p_lo):
        raise ConfigError(f"invalid Husimi window {window} or resolution {resolution}")
    z_axis = np.linspace(z_lo, z_hi, nz)
    p_axis = np.linspace(p_lo, p_hi, n_p)

    norm = (TWO_PI * sigma_z ** 2) ** -0.25
    envelope = norm * np.exp(-(grid.z[None, :] - z_axis[:, None]) ** 2 / (4.0 * sigma_z ** 2))
    # the coherent-state phase exp(-i p (z' - z)/kbar) splits into a z' factor and a
    # unit-modulus z factor, which drops out of |.|^2
    plane_waves = np.exp(-1j * np.outer(grid.z, p_axis) / kbar)
    amplitudes = (envelope * np.asarray(state)[None, :]) @ plane_waves * grid.dz
    values = np.abs(amplitudes.T) ** 2 / (TWO_PI * kbar)
    return HusimiMap(z_axis, p_axis, values)


def husimi_disc_mass(state: np.ndarray, grid: Grid, kbar: float, center: PhasePoint,
                     radius: float, resolution: int = 81, sigma_z: float = COHERENT_SIGMA_Z) -> float:
    """Husimi mass inside the phase-space disc of given radius around center"""
    window = (center.z - radius, center.z + radius, center.p - radius, center.p + radius)
    hmap = husimi(state, grid, kbar, window, (resolution, resolution), sigma_z)
    inside = (hmap.z[None, :] - center.z) ** 2 + (hmap.p[:, None] - center.p) ** 2 <= radius ** 2
    cell = (hmap.z[1] - hmap.z[0]) * (hmap.p[1] - hmap.p[0])
    return float(np.sum(hmap.values[inside]) * cell)
