#!/usr/bin/env python3
"""
Test wavepacket preparation, split-operator propagation and snapshots
"""

import math

import numpy as np
import pytest

from src.classical import integrate
from src.core import SEED_POINTS, TWO_PI, PhasePoint, SystemParams
from src.errors import AliasingError, BoxTooSmallError, ConfigError, GridMismatchError
from src.quantum import (GaussianSpec, Grid, SplitOperatorPropagator, Wavepacket, autocorrelation,
                         density_rows, edge_amplitude, ehrenfest_time, expectation_energy,
                         init_gaussian, moments, propagate, read_snapshot, write_snapshot)

KBAR = 1.0
BOX = Grid(-10.0, 80.0, 2048)
SMALL_BOX = Grid(-10.0, 80.0, 1024)
DRIVEN = SystemParams(lam=0.3)
GRAVITY = SystemParams(V0=0.0, lam=0.0)


def packet(z, p, grid=BOX):
    return init_gaussian(GaussianSpec(PhasePoint(z, p)), grid, KBAR)


def test_grid_rejects_bad_sizes():
    with pytest.raises(ConfigError):
        Grid(-10.0, 80.0, 1000)
    with pytest.raises(ConfigError):
        Grid(5.0, 5.0, 256)


def test_gaussian_moments_and_norm():
    psi = packet(15.0, 0.0)
    assert psi.norm == pytest.approx(1.0, abs=1e-12)
    mean_z, mean_p, var_z, var_p = moments(psi, KBAR)
    assert mean_z == pytest.approx(15.0, abs=1e-10)
    assert mean_p == pytest.approx(0.0, abs=1e-10)
    assert var_z == pytest.approx(0.5, rel=1e-6)
    assert var_p == pytest.approx(0.5, rel=1e-6)


def test_gaussian_carries_momentum():
    _, mean_p, _, _ = moments(packet(20.0, 1.5), KBAR)
    assert mean_p == pytest.approx(1.5, abs=1e-8)


def test_packet_too_close_to_edge():
    with pytest.raises(ConfigError):
        packet(-8.0, 0.0)
    with pytest.raises(ConfigError):
        packet(78.0, 0.0)


def test_pure_gravity_moments_follow_free_fall():
    psi = propagate(packet(15.0, 0.0), 2.0, TWO_PI / 1024, GRAVITY)
    mean_z, mean_p, var_z, var_p = moments(psi, KBAR)
    assert psi.t == 2.0
    assert mean_z == pytest.approx(13.0, abs=1e-6)
    assert mean_p == pytest.approx(-2.0, abs=1e-6)
    # free spreading: var_z(t) = sigma_z^2 + sigma_p^2 t^2
    assert var_z == pytest.approx(2.5, rel=1e-6)
    assert var_p == pytest.approx(0.5, rel=1e-6)


def test_norm_preserved_over_long_run():
    dt = TWO_PI / 512
    psi = packet(15.0, 0.0, SMALL_BOX)
    out = SplitOperatorPropagator(SMALL_BOX, DRIVEN, dt).evolve(psi, 1.0e4 * dt)
    assert abs(out.norm - 1.0) < 1e-10
    # input untouched
    assert psi.t == 0.0


def test_step_rejects_coarse_dt():
    with pytest.raises(ConfigError):
        SplitOperatorPropagator(BOX, DRIVEN, TWO_PI / 256)


def test_evolve_preconditions():
    propagator = SplitOperatorPropagator(SMALL_BOX, DRIVEN, TWO_PI / 512)
    with pytest.raises(GridMismatchError):
        propagator.evolve(packet(15.0, 0.0), 1.0)
    psi = packet(15.0, 0.0, SMALL_BOX)
    psi.t = 2.0
    with pytest.raises(ConfigError):
        propagator.evolve(psi, 1.0)


def test_strang_splitting_is_second_order():
    psi = packet(15.0, 0.0, SMALL_BOX)
    t1 = 2 * TWO_PI
    reference = propagate(psi, t1, TWO_PI / (512 * 16), DRIVEN).amplitudes
    errors = []
    for dt in (TWO_PI / 512, TWO_PI / 1024):
        out = propagate(psi, t1, dt, DRIVEN).amplitudes
        errors.append(np.sqrt(np.sum(np.abs(out - reference) ** 2) * SMALL_BOX.dz))
    assert 3.0 < errors[0] / errors[1] < 5.0


def test_observer_cadence():
    seen = []
    propagator = SplitOperatorPropagator(SMALL_BOX, DRIVEN, TWO_PI / 512)
    propagator.evolve(packet(15.0, 0.0, SMALL_BOX), TWO_PI, observer=lambda s: seen.append(s.t),
                      sample_every=64)
    assert len(seen) == 8
    assert seen[-1] == pytest.approx(TWO_PI)


def test_expectation_energy_of_seed_packet():
    sigma_sq = 0.5
    wall = math.exp(-15.0 + sigma_sq / 2)
    assert expectation_energy(packet(15.0, 0.0), DRIVEN) == pytest.approx(15.25 + wall, abs=1e-8)
    assert expectation_energy(packet(15.0, 2.0), DRIVEN) == pytest.approx(17.25 + wall, abs=1e-8)


def test_expectation_energy_includes_wall_near_floor():
    expected = 0.25 + 2.0 + math.exp(-2.0 + 0.25)
    assert expectation_energy(packet(2.0, 0.0), DRIVEN) == pytest.approx(expected, rel=1e-8)


def test_autocorrelation_overlaps():
    psi = packet(15.0, 0.0)
    assert autocorrelation(psi, psi) == pytest.approx(1.0, abs=1e-12)
    # |<z0|z0 + d>|^2 = exp(-d^2 / (4 sigma_z^2))
    assert autocorrelation(psi, packet(16.0, 0.0)) == pytest.approx(math.exp(-0.5), rel=1e-8)
    assert autocorrelation(psi, packet(40.0, 0.0)) < 1e-12


def test_autocorrelation_grid_mismatch():
    with pytest.raises(GridMismatchError):
        autocorrelation(packet(15.0, 0.0), packet(15.0, 0.0, SMALL_BOX))


def test_box_too_small_guard():
    with pytest.raises(BoxTooSmallError):
        propagate(packet(75.0, 5.0), math.pi, TWO_PI / 1024, DRIVEN)


def test_aliasing_guard():
    coarse = Grid(-10.0, 80.0, 256)
    with pytest.raises(AliasingError):
        propagate(packet(30.0, 8.0, coarse), 0.1, TWO_PI / 1024, DRIVEN)


def test_edge_amplitude_small_for_centered_packet():
    assert edge_amplitude(packet(15.0, 0.0)) < 1e-30


def test_ehrenfest_time_first_departure():
    times = np.array([0.0, 1.0, 2.0, 3.0])
    quantum = np.array([0.0, 0.1, 2.0, 5.0])
    assert ehrenfest_time(times, quantum, np.zeros(4), 0.5) == 2.0
    assert ehrenfest_time(times, np.zeros(4), np.zeros(4), 0.5) is None


def test_centroid_follows_classical_orbit_through_a_bounce():
    a = SEED_POINTS["a"]
    t1 = 2 * TWO_PI
    psi = propagate(packet(a.z, a.p, SMALL_BOX), t1, TWO_PI / 512, DRIVEN)
    orbit = integrate(a, 0.0, t1, TWO_PI / 1024, DRIVEN)
    mean_z, mean_p, _, _ = moments(psi, KBAR)
    assert abs(mean_z - orbit.z[-1]) < 1.0
    assert abs(mean_p - orbit.p[-1]) < 0.5


def test_snapshot_round_trip(tmp_path):
    psi = propagate(packet(15.0, 0.0, SMALL_BOX), 1.0, TWO_PI / 512, DRIVEN)
    path = tmp_path / "psi_000.bin"
    data = write_snapshot(path, psi, KBAR)
    assert len(data) == 40 + 16 * SMALL_BOX.n
    assert path.read_bytes() == data
    restored, kbar = read_snapshot(path)
    assert kbar == KBAR
    assert restored.grid == SMALL_BOX
    assert restored.t == 1.0
    np.testing.assert_array_equal(restored.amplitudes, psi.amplitudes)


def test_density_rows():
    psi = packet(15.0, 0.0, SMALL_BOX)
    rows = density_rows(psi)
    assert len(rows) == SMALL_BOX.n
    assert rows[0][0] == -10.0
    assert sum(r[1] for r in rows) * SMALL_BOX.dz == pytest.approx(1.0)


def test_wavepacket_copy_is_independent():
    psi = packet(15.0, 0.0, SMALL_BOX)
    other = psi.copy()
    other.amplitudes[:] = 0.0
    assert psi.norm == pytest.approx(1.0)
    assert isinstance(other, Wavepacket)


@pytest.mark.slow
def test_island_centroid_tracks_classical_strobes():
    a = SEED_POINTS["a"]
    dt = TWO_PI / 1024
    samples = []
    propagator = SplitOperatorPropagator(BOX, DRIVEN, dt)
    propagator.evolve(packet(a.z, a.p), 3 * TWO_PI, sample_every=1024,
                      observer=lambda state: samples.append((state.t, moments(state, KBAR)[0])))
    orbit = integrate(a, 0.0, 3 * TWO_PI, dt, DRIVEN, sample_every=64)
    assert len(samples) == 3
    for t, mean_z in samples:
        assert abs(mean_z - np.interp(t, orbit.times, orbit.z)) < 0.5, t


@pytest.mark.slow
def test_autocorrelation_series_converged_in_grid_size():
    series = []
    for n in (2048, 4096):
        grid = Grid(-10.0, 80.0, n)
        psi0 = packet(15.0, 0.0, grid)
        values = []
        SplitOperatorPropagator(grid, DRIVEN, TWO_PI / 1024).evolve(
            psi0, 16 * TWO_PI, sample_every=64, observer=lambda state: values.append(autocorrelation(psi0, state)))
        series.append(np.asarray(values))
    assert series[0].shape == series[1].shape == (256,)
    assert np.max(np.abs(series[0] - series[1])) < 1e-6
