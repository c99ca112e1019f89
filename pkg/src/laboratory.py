"""
Cavity laboratory: runs the analyses of one command and owns its outputs

Every output goes through the atomic writers into the run's output directory
and is recorded; the manifest with the resolved configuration, code version and
output digests is written last.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .classical import integrate, locked_ratio, lyapunov_batch, occupied_cells, poincare, seed_grid
from .config import run_config, system_params, worker_count
from .core import SEED_POINTS, TWO_PI, PhasePoint, RunConfig, SystemParams, classical_energy, parse_seed
from .errors import ConfigError, InsufficientStatesError, SeriesTooShortError
from .floquet import (build_monodromy, husimi, husimi_disc_mass, match_static,
                      coherent_overlaps, quasi_energies, resonance_spacing,
                      save_monodromy, static_spectrum)
from .persistence import sha256_file, write_csv, write_json
from .quantum import (GaussianSpec, Grid, SplitOperatorPropagator, Wavepacket,
                      autocorrelation, density_rows, ehrenfest_time,
                      expectation_energy, init_gaussian, moments, write_snapshot)
from .revival import (AutocorrSeries, autocorr_series, detect, lambda_scan, peak_period,
                      t_revival_semiclassical, t_revival_unmodulated)
from .svg_utils import plot_heatmap, plot_poincare, plot_scan, plot_series

FIGURE_SEEDS = {1: "abcdef", 2: "abcd", 3: "fe", 4: "f"}
STOCHASTIC_SEED = "d"


class CavityLaboratory:
    """
    Runs cavity analyses and persists their results

    One instance serves one command: it resolves the typed parameters from the
    configuration, sizes the worker pool and collects every written file for
    the manifest.
    """

    def __init__(self, config: Dict[str, Dict[str, Any]], output_dir,
                 command: Optional[Sequence[str]] = None,
                 workers: Optional[int] = None, verbose: Optional[bool] = None):
        """
        Initialize laboratory

        Args:
            config: Resolved configuration (see config.resolve_config)
            output_dir: Directory receiving all outputs
            command: Command line recorded in the manifest
            workers: Requested worker count, capped by GRAVICAV_THREADS
            verbose: Enable progress messages, defaults to the logging section
        """
        self.config = config
        self.params: SystemParams = system_params(config)
        self.run: RunConfig = run_config(config)
        self.output_dir = Path(output_dir)
        self.command = list(command or [])
        self.workers = worker_count(workers)
        self.verbose = config["logging"]["verbose"] if verbose is None else verbose
        self.outputs: List[Path] = []
        self.logger = logging.getLogger(__name__)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def log(self, message: str):
        """Log message if verbose is enabled"""
        if self.verbose:
            self.logger.info(message)

    # ------------------------------------------------------------------ helpers

    def _path(self, name: str) -> Path:
        return self.output_dir / name

    def _record(self, path: Path) -> Path:
        self.outputs.append(Path(path))
        return Path(path)

    def _csv(self, name: str, header: Sequence[str], rows) -> Path:
        return self._record(write_csv(self._path(name), header, rows))

    def _json(self, name: str, document: Any) -> Path:
        return self._record(write_json(self._path(name), document))

    def _guards(self) -> Dict[str, Any]:
        quantum = self.config["quantum"]
        return {key: quantum[key] for key in ("tail_fraction", "tail_tolerance", "edge_tolerance", "guard_every")}

    def _packet(self, point: PhasePoint) -> GaussianSpec:
        return GaussianSpec(point, self.config["packet"]["sigma_z"])

    def _grid(self) -> Grid:
        return Grid(self.run.z_min, self.run.z_max, self.run.n)

    def _seeds(self, selectors: Optional[Sequence[str]]) -> Tuple[List[str], List[PhasePoint]]:
        """Named or explicit seeds; the configured seed grid when none are given"""
        if selectors:
            resolved = [parse_seed(s) for s in selectors]
            return [r[0] for r in resolved], [r[1] for r in resolved]
        classical = self.config["classical"]
        seeds = seed_grid(classical["seed_z"], classical["seed_p"], classical["seed_count"])
        return [f"g{i:02d}" for i in range(len(seeds))], seeds

    def _steps_per_period(self) -> int:
        return int(self.config["classical"]["steps_per_period"])

    # ------------------------------------------------------------------ classical

    def run_poincare(self, selectors: Optional[Sequence[str]] = None, svg_name: str = "poincare.svg",
                     circles: Sequence[Tuple[float, float, float, str]] = (),
                     unit_cell: bool = False) -> Dict[str, Any]:
        """
        Stroboscopic section of the selected seeds (default: the 25-seed grid)

        Writes poincare.csv (seed_id, n, z, p), a JSON summary and an SVG.
        """
        classical = self.config["classical"]
        seed_ids, seeds = self._seeds(selectors)
        self.log(f"Poincare section: {len(seeds)} seeds x {classical['n_periods']} periods, "
                 f"lambda = {self.params.lam}")
        section = poincare(seeds, classical["n_periods"], self.params,
                           steps_per_period=self._steps_per_period(), seed_ids=seed_ids,
                           workers=self.workers, cutoff=classical["divergence_cutoff"])
        self._csv("poincare.csv", ["seed_id", "n", "z", "p"], section.rows())

        cell_size = classical["cell_size"]
        summary = {
            "lambda": self.params.lam,
            "n_periods": section.n_periods,
            "strobe_phase": section.strobe_phase,
            "seeds": {sid: list(s.as_tuple()) for sid, s in zip(seed_ids, seeds)},
            "occupied_cells": {sid: occupied_cells(pts, cell_size) for sid, pts in section.points.items()},
            "cell_size": cell_size,
            "diverged": section.diverged,
        }
        self._json("poincare.json", summary)

        cell = None
        if unit_cell and section.points:
            side = math.sqrt(TWO_PI * self.params.kbar)
            stacked = np.concatenate(list(section.points.values()))
            z_hi, p_hi = np.nanmax(stacked[:, 0]), np.nanmax(stacked[:, 1])
            cell = (float(z_hi) - side / 2, float(p_hi) - side / 2, side)
        self._record(plot_poincare(self._path(svg_name), section.points, circles=circles, unit_cell=cell,
                                   title=f"Stroboscopic section, lambda = {self.params.lam:g}"))
        self.log(f"Section written, {len(section.diverged)} diverged seeds")
        return summary

    def run_lyapunov(self, selectors: Optional[Sequence[str]] = None) -> List[Dict[str, Any]]:
        """Benettin exponents of the selected seeds; writes lyapunov.csv and lyapunov.json"""
        classical = self.config["classical"]
        seed_ids, seeds = self._seeds(selectors)
        T = classical["lyapunov_periods"] * TWO_PI
        self.log(f"Lyapunov exponents: {len(seeds)} seeds over {classical['lyapunov_periods']} periods")

        chunks = [c for c in np.array_split(np.arange(len(seeds)), self.workers) if c.size]

        def run_chunk(indices):
            return lyapunov_batch([seeds[i] for i in indices], self.params, T,
                                  steps_per_period=self._steps_per_period(),
                                  separation=classical["separation"],
                                  transient_fraction=classical["transient_fraction"],
                                  min_periods=classical["min_lyapunov_periods"],
                                  cutoff=classical["divergence_cutoff"],
                                  zero_threshold=classical["zero_threshold"],
                                  chaotic_threshold=classical["chaotic_threshold"])

        if len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
                parts = list(pool.map(run_chunk, chunks))
        else:
            parts = [run_chunk(chunks[0])]
        estimates = [estimate for part in parts for estimate in part]

        rows, entries = [], []
        for sid, seed, est in zip(seed_ids, seeds, estimates):
            label = est.classification
            rows.append((sid, est.total_time, est.exponent, label))
            if label == "diverged":
                entries.append({"seed_id": sid, "seed": list(seed.as_tuple()), "exponent": None,
                                "classification": label, "total_time": est.total_time,
                                "transient_time": est.transient_time, "diverged_at": est.diverged_at,
                                "convergence": []})
                self.log(f"  {sid}: diverged near t = {est.diverged_at:.1f}")
                continue
            entries.append({
                "seed_id": sid,
                "seed": list(seed.as_tuple()),
                "exponent": est.exponent,
                "classification": label,
                "total_time": est.total_time,
                "transient_time": est.transient_time,
                "diverged_at": None,
                # running estimate every 100 periods shows convergence
                "convergence": (est.partial_sums[99::100]
                                / (TWO_PI * np.arange(100, est.partial_sums.size + 1, 100))).tolist(),
            })
            self.log(f"  {sid}: lambda_max = {est.exponent:.3e} ({label})")
        self._csv("lyapunov.csv", ["seed_id", "T", "exponent", "classification"], rows)
        self._json("lyapunov.json", {"lambda": self.params.lam, "entries": entries})
        return entries

    # ------------------------------------------------------------------ quantum

    def run_evolve(self, selector: str) -> Dict[str, Any]:
        """
        Propagate a Gaussian packet from a seed point

        Writes binary snapshots with |psi|^2 CSVs, the C^2 series, moment
        expectations next to the classical centroid, a JSON summary and an SVG.
        """
        seed_id, point = parse_seed(selector)
        spec = self._packet(point)
        grid = self._grid()
        psi0 = init_gaussian(spec, grid, self.params.kbar)
        E0 = expectation_energy(psi0, self.params)
        propagator = SplitOperatorPropagator(grid, self.params, self.run.dt, **self._guards())

        cadence = self.run.output_every
        n_samples = int(math.floor(self.run.t_total / (self.run.dt * cadence) * (1.0 + 1e-12)))
        t_end = n_samples * cadence * self.run.dt
        snapshot_count = self.config["quantum"]["snapshot_count"]
        snapshot_at = {int(round(k)) for k in np.linspace(0, n_samples, snapshot_count + 1)}
        self.log(f"Evolve seed {seed_id} ({point.z}, {point.p}): E0 = {E0:.4f}, t_end = {t_end:.2f}")

        times: List[float] = []
        c2: List[float] = []
        expectation_rows: List[Tuple[float, ...]] = []
        snapshots: List[str] = []

        def record(state: Wavepacket):
            index = len(times)
            times.append(state.t)
            c2.append(autocorrelation(psi0, state))
            expectation_rows.append((state.t,) + moments(state, self.params.kbar))
            if index in snapshot_at:
                name = f"psi_{len(snapshots):03d}"
                write_snapshot(self._path(f"{name}.bin"), state, self.params.kbar)
                self._record(self._path(f"{name}.bin"))
                self._csv(f"density_{len(snapshots):03d}.csv", ["z", "density"], density_rows(state))
                snapshots.append(name)

        record(psi0)
        propagator.evolve(psi0, t_end, observer=record, sample_every=cadence)
        c2[0] = 1.0

        # classical centroid on the same time axis for the Ehrenfest estimate
        steps = self._steps_per_period()
        orbit = integrate(point, 0.0, t_end, TWO_PI / steps, self.params, sample_every=max(1, steps // 64))
        times_arr = np.asarray(times)
        z_classical = np.interp(times_arr, orbit.times, orbit.z)
        mean_z = np.asarray([row[1] for row in expectation_rows])
        t_ehrenfest = ehrenfest_time(times_arr, mean_z, z_classical, spec.sigma_z)

        self._csv("autocorr.csv", ["t", "C2"], zip(times, c2))
        self._csv("expectations.csv", ["t", "mean_z", "mean_p", "var_z", "var_p", "z_classical"],
                  [row + (zc,) for row, zc in zip(expectation_rows, z_classical.tolist())])

        T_cl = self._t_cl_hint(E0)
        series = AutocorrSeries(times_arr, np.asarray(c2), self.params, spec, mean_z)
        try:
            report = detect(series, T_cl, **self._detector_kwargs()).to_dict()
        except SeriesTooShortError as exc:
            self.log(f"No revival analysis: {exc}")
            report = None

        summary = {
            "seed_id": seed_id,
            "seed": list(point.as_tuple()),
            "params": self.params.to_dict(),
            "E0": E0,
            "t_cl_hint": T_cl,
            "t_revival_unmodulated": t_revival_unmodulated(E0, self.params.kbar),
            "t_revival_semiclassical": t_revival_semiclassical(E0, self.params.with_lambda(0.0)),
            "t_ehrenfest": t_ehrenfest,
            "snapshots": snapshots,
            "revival": report,
        }
        self._json("evolve.json", summary)
        self._record(plot_series(self._path("evolve.svg"), [
            {"label": f"({seed_id})", "x": times, "y": c2, "ylabel": "C^2"},
            {"label": "<z> quantum vs classical", "x": times, "y": mean_z.tolist(), "ylabel": "<z>",
             "vlines": [] if t_ehrenfest is None else [t_ehrenfest]},
        ], title=f"Packet from ({point.z:g}, {point.p:g}), lambda = {self.params.lam:g}", sharey=False))
        return summary

    def _t_cl_hint(self, E0: float) -> float:
        revival = self.config["revival"]
        if revival["t_cl_hint"] is not None:
            return float(revival["t_cl_hint"])
        return peak_period(E0, self.params, revival["lock_denominator"])

    def _detector_kwargs(self) -> Dict[str, float]:
        revival = self.config["revival"]
        return {
            "revival_threshold": revival["revival_threshold"],
            "collapse_fraction": revival["collapse_fraction"],
            "window_fraction": revival["window_fraction"],
        }

    def _autocorr(self, seed_id: str, point: PhasePoint, suffix: str = "") -> Tuple[Any, Dict[str, Any]]:
        spec = self._packet(point)
        E0 = expectation_energy(init_gaussian(spec, self._grid(), self.params.kbar), self.params)
        series = autocorr_series(spec, self.params, self.run, **self._guards())
        self._csv(f"autocorr{suffix}.csv", ["t", "C2"], zip(series.times.tolist(), series.values.tolist()))
        report = detect(series, self._t_cl_hint(E0), **self._detector_kwargs())
        document = {"seed_id": seed_id, "seed": list(point.as_tuple()), "E0": E0,
                    "t_revival_unmodulated": t_revival_unmodulated(E0, self.params.kbar),
                    "t_revival_semiclassical": t_revival_semiclassical(E0, self.params.with_lambda(0.0)),
                    "params": self.params.to_dict(), **report.to_dict()}
        self._json(f"revival{suffix}.json", document)
        self.log(f"  {seed_id}: revival height {report.revival_height:.3f} at t = {report.revival_time:.1f}")
        return series, document

    def run_autocorr(self, selector: str) -> Dict[str, Any]:
        """C^2 series and revival report of one seed"""
        seed_id, point = parse_seed(selector)
        self.log(f"Autocorrelation of seed {seed_id}")
        series, document = self._autocorr(seed_id, point)
        self._record(plot_series(self._path("autocorr.svg"), [
            {"label": f"({seed_id})", "x": series.times, "y": series.values, "ylabel": "C^2",
             "hlines": [self.config["revival"]["revival_threshold"]]},
        ], title=f"lambda = {self.params.lam:g}"))
        return document

    def run_revival_scan(self, selector: str, lambdas: Optional[Sequence[float]] = None,
                         svg_name: str = "revival_scan.svg") -> Dict[str, Any]:
        """Revival height and time against lambda; writes revival_scan.json and an SVG"""
        revival = self.config["revival"]
        seed_id, point = parse_seed(selector)
        spec = self._packet(point)
        lambdas = list(revival["lambdas"] if lambdas is None else lambdas)
        horizon = revival["scan_horizon"]
        if horizon is None:
            E0 = expectation_energy(init_gaussian(spec, self._grid(), self.params.kbar), self.params)
            horizon = 1.2 * max(t_revival_unmodulated(E0, self.params.kbar),
                                t_revival_semiclassical(E0, self.params.with_lambda(0.0)))
        self.log(f"Revival scan of seed {seed_id}: {len(lambdas)} values of lambda, horizon {horizon:.1f}")

        scan = lambda_scan(spec, lambdas, horizon, self.params, self.run,
                           T_cl_hint=revival["t_cl_hint"],
                           resonance_order=revival["resonance_order"],
                           lock_denominator=revival["lock_denominator"],
                           revival_threshold=revival["revival_threshold"],
                           lambda_u_threshold=revival["lambda_u_threshold"],
                           collapse_fraction=revival["collapse_fraction"],
                           pole_tolerance=revival["pole_tolerance"],
                           regime_limit=revival["regime_limit"],
                           workers=self.workers, **self._guards())
        document = {"seed_id": seed_id, "seed": list(point.as_tuple()), "horizon": horizon, **scan.to_dict()}
        self._json("revival_scan.json", document)
        self._record(plot_scan(
            self._path(svg_name), [e["lambda"] for e in scan.entries],
            [e["revival_height"] for e in scan.entries], revival["lambda_u_threshold"],
            lambda_u=scan.lambda_u,
            times=[e["revival_time"] for e in scan.entries],
            predicted=[e["predicted_time"] for e in scan.entries],
            title=f"Revivals of packet ({seed_id}) against modulation strength",
        ))
        self.log(f"lambda_u estimate: {scan.lambda_u}")
        return document

    # ------------------------------------------------------------------ floquet

    def run_floquet(self, selector: str = "a") -> Dict[str, Any]:
        """
        Quasi-energy spectrum on the Floquet grid with localization diagnostics

        Writes monodromy.npy (+ sidecar), spectrum.csv, floquet.json and the
        Husimi map of the lowest ladder state as CSV and SVG.
        """
        floquet = self.config["floquet"]
        seed_id, center = parse_seed(selector)
        stochastic = SEED_POINTS[STOCHASTIC_SEED]
        sigma_z = self.config["packet"]["sigma_z"]
        grid = Grid(floquet["z_min"], floquet["z_max"], floquet["n"])
        kbar = self.params.kbar
        self.log(f"Floquet spectrum: N = {grid.n}, lambda = {self.params.lam}")

        operator = build_monodromy(grid, self.params, floquet["dt"], workers=self.workers,
                                   tolerance=floquet["unitarity_tolerance"])
        for path in save_monodromy(self._path("monodromy.npy"), operator):
            self._record(path)
        spectrum = quasi_energies(operator, kbar)
        spectrum.weights["island"] = coherent_overlaps(spectrum, center, sigma_z)
        spectrum.weights["stochastic"] = coherent_overlaps(spectrum, stochastic, sigma_z)
        self._csv("spectrum.csv", ["index", "quasi_energy", "island_weight", "stochastic_weight"],
                  [(j, spectrum.quasi_energies[j], spectrum.weights["island"][j],
                    spectrum.weights["stochastic"][j]) for j in range(len(spectrum))])

        chain = floquet["chain"]
        if chain is None:
            chain = 1 if self.params.lam == 0.0 else locked_ratio(
                float(classical_energy(center.z, center.p, self.params)), self.params,
                self.config["revival"]["lock_denominator"]).numerator
        self.log(f"Resonant cycle: {chain} drive periods")

        def spacing(point: PhasePoint, min_disc_mass: float):
            try:
                return resonance_spacing(spectrum, point, kbar, threshold=floquet["overlap_threshold"],
                                         chain=int(chain), partner_tolerance=floquet["partner_tolerance"],
                                         action_radius=floquet["action_radius"] or None,
                                         min_disc_mass=min_disc_mass, sigma_z=sigma_z)
            except InsufficientStatesError as exc:
                self.log(f"No ladder at ({point.z}, {point.p}): {exc}")
                return None

        island = spacing(center, floquet["min_disc_mass"])
        # no mass cut in the sea
        sea = spacing(stochastic, 0.0)
        document: Dict[str, Any] = {
            "seed_id": seed_id,
            "params": self.params.to_dict(),
            "grid": {"z_min": grid.z_min, "z_max": grid.z_max, "n": grid.n},
            "dt": floquet["dt"],
            "unitarity_error": operator.unitarity_error,
            "chain": int(chain),
            "island": None if island is None else island.to_dict(),
            "stochastic": None if sea is None else sea.to_dict(),
        }

        if island is not None:
            # most populated localized state of the island ladder
            leading = int(np.argmax(island.overlaps))
            top = int(island.indices[leading])
            state = island.states[:, leading]
            document["island_disc_mass"] = husimi_disc_mass(state, grid, kbar, center,
                                                            floquet["island_radius"], sigma_z=sigma_z)
            hmap = husimi(state, grid, kbar, floquet["husimi_window"], floquet["husimi_resolution"], sigma_z)
            document["husimi_state"] = top
            document["husimi_mass"] = hmap.mass
            self._csv("husimi.csv", ["z", "p", "Q"], hmap.rows())
            self._record(plot_heatmap(
                self._path("husimi.svg"), hmap.z, hmap.p, hmap.values,
                title=f"Husimi map of localized state {top}, eps = {island.quasi_energies[leading]:.4f}",
                markers=[(center.z, center.p, seed_id)],
            ))

        if self.params.lam == 0.0:
            static = static_spectrum(grid, self.params, floquet["static_states"])
            match = match_static(spectrum, static)
            document["static_match"] = {
                "energies": static.energies.tolist(),
                "floquet_index": match.floquet_index.tolist(),
                "overlaps": match.overlaps.tolist(),
                "differences": match.differences.tolist(),
                "max_difference": match.max_difference,
            }
        self._json("floquet.json", document)
        return document

    # ------------------------------------------------------------------ figures

    def reproduce_figure(self, number: int) -> Dict[str, Any]:
        """
        Regenerate a figure layout

        1: section at the configured lambda with packet circles and the
           2 pi kbar unit cell; 2: C^2 panels for seeds a-d; 3: seeds f and e;
        4: revival scan of seed f.
        """
        if number not in FIGURE_SEEDS:
            raise ConfigError(f"figure must be one of {sorted(FIGURE_SEEDS)}, got {number}")
        seeds = FIGURE_SEEDS[number]
        self.log(f"Reproducing figure {number}")
        if number == 1:
            sigma_z = self.config["packet"]["sigma_z"]
            circles = [(SEED_POINTS[s].z, SEED_POINTS[s].p, sigma_z, s) for s in seeds]
            return self.run_poincare(None, svg_name="figure1.svg", circles=circles, unit_cell=True)
        if number == 4:
            return self.run_revival_scan(seeds, svg_name="figure4.svg")

        panels, reports = [], {}
        for s in seeds:
            series, document = self._autocorr(s, SEED_POINTS[s], suffix=f"_{s}")
            reports[s] = document
            panels.append({"label": f"({s})", "x": series.times, "y": series.values, "ylabel": "C^2"})
        self._record(plot_series(self._path(f"figure{number}.svg"), panels,
                                 title=f"lambda = {self.params.lam:g}, kbar = {self.params.kbar:g}"))
        return {"figure": number, "reports": reports}

    # ------------------------------------------------------------------ manifest

    def write_manifest(self) -> Path:
        """Write manifest.json; it must be the last output of a run"""
        outputs = []
        for path in sorted(set(self.outputs)):
            outputs.append({
                "path": path.relative_to(self.output_dir).as_posix(),
                "sha256": sha256_file(path),
            })
        manifest = {
            "command": self.command,
            "config": self.config,
            "version": __version__,
            "workers": self.workers,
            "outputs": outputs,
        }
        path = write_json(self._path("manifest.json"), manifest)
        self.log(f"Manifest written with {len(outputs)} outputs")
        return path
