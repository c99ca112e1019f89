#!/usr/bin/env python3
"""
Test the scaled cavity model and the configuration layer
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.config import get_config, parse_override, resolve_config, run_config, update_config, worker_count
from src.core import (SEED_POINTS, TWO_PI, PhasePoint, PhysicalParams, RunConfig, SystemParams,
                      classical_energy, force, parse_seed, potential, scale_to_dimensionless,
                      static_potential)
from src.errors import ConfigError, DomainError

DEFAULT = SystemParams()


def test_potential_at_origin():
    assert potential(0.0, 0.0, DEFAULT) == pytest.approx(1.0, abs=1e-15)


def test_potential_far_from_wall():
    assert potential(15.0, 0.0, DEFAULT) == pytest.approx(15.0 + math.exp(-15.0), rel=1e-15)
    assert potential(15.0, 0.0, DEFAULT) == pytest.approx(15.00000031, abs=1e-8)


def test_potential_clamped_deep_in_wall():
    params = SystemParams(lam=0.0)
    assert potential(-50.0, 0.0, params) == pytest.approx(params.v_clamp - 50.0, rel=1e-12)
    # no overflow even far beyond the double-precision range of exp
    assert np.isfinite(potential(np.array([-1.0e3, -1.0e5]), 0.3, DEFAULT)).all()


def test_force_limits():
    assert force(1.0e3, 0.7, DEFAULT) == pytest.approx(-1.0, abs=1e-15)
    t = 1.1
    assert force(DEFAULT.lam * math.sin(t), t, DEFAULT) == pytest.approx(-1.0 + DEFAULT.kappa * DEFAULT.V0)
    # inside the clamp region only gravity acts
    assert force(-100.0, 0.0, DEFAULT) == -1.0


def test_force_matches_finite_difference_at_reference_point():
    h = 1.0e-5
    fd = -(potential(10.0 + h, 1.0, DEFAULT) - potential(10.0 - h, 1.0, DEFAULT)) / (2 * h)
    assert fd == pytest.approx(force(10.0, 1.0, DEFAULT), rel=1e-8)


@settings(max_examples=150, deadline=None)
@given(z=st.floats(-5.0, 60.0), t=st.floats(0.0, TWO_PI))
def test_force_is_minus_gradient(z, t):
    h = 1.0e-5
    fd = -(potential(z + h, t, DEFAULT) - potential(z - h, t, DEFAULT)) / (2 * h)
    f = force(z, t, DEFAULT)
    assert abs(fd - f) <= 1e-7 * max(1.0, abs(f))


@given(z=st.floats(-20.0, 100.0), t=st.floats(-50.0, 50.0))
def test_potential_has_drive_period(z, t):
    assert potential(z, t + TWO_PI, DEFAULT) == pytest.approx(potential(z, t, DEFAULT), rel=1e-12, abs=1e-12)


def test_potential_broadcasts():
    z = np.linspace(0.0, 10.0, 5)
    values = potential(z, 0.5, DEFAULT)
    assert values.shape == (5,)
    assert values[0] == pytest.approx(potential(0.0, 0.5, DEFAULT))


def test_static_potential_and_energy():
    assert static_potential(2.0, DEFAULT) == pytest.approx(2.0 + math.exp(-2.0))
    assert classical_energy(2.0, 3.0, DEFAULT) == pytest.approx(4.5 + 2.0 + math.exp(-2.0))


def test_pure_gravity_has_no_wall():
    params = SystemParams(V0=0.0, lam=0.0)
    assert potential(-30.0, 0.0, params) == -30.0
    assert force(-30.0, 0.0, params) == -1.0


def test_scale_zero_amplitude_gives_zero_lambda():
    lam, _ = scale_to_dimensionless(PhysicalParams(omega=2.0e3, M=1.4e-25, g=9.81, a=0.0))
    assert lam == 0.0


def test_scale_unit_kbar_by_construction():
    omega, g, hbar = 1.0e3, 9.81, 1.054571817e-34
    M = hbar * omega ** 3 / g ** 2
    _, kbar = scale_to_dimensionless(PhysicalParams(omega=omega, M=M, g=g, a=1e-6, hbar=hbar))
    assert kbar == pytest.approx(1.0, rel=1e-12)


def test_scale_lambda_quadratic_in_omega():
    base = PhysicalParams(omega=1.0e3, M=1.4e-25, g=9.81, a=2.0e-6)
    doubled = PhysicalParams(omega=2.0e3, M=1.4e-25, g=9.81, a=2.0e-6)
    assert scale_to_dimensionless(doubled)[0] == pytest.approx(4.0 * scale_to_dimensionless(base)[0])


@given(c=st.floats(0.1, 10.0))
def test_scale_lambda_invariant_under_omega_amplitude_rescaling(c):
    base = PhysicalParams(omega=1.0e3, M=1.4e-25, g=9.81, a=2.0e-6)
    scaled = PhysicalParams(omega=1.0e3 * c, M=1.4e-25, g=9.81, a=2.0e-6 / c ** 2)
    assert scale_to_dimensionless(scaled)[0] == pytest.approx(scale_to_dimensionless(base)[0], rel=1e-12)


@pytest.mark.parametrize("field", ["omega", "M", "g", "hbar"])
def test_scale_rejects_non_positive(field):
    values = dict(omega=1.0e3, M=1.4e-25, g=9.81, a=1e-6, hbar=1e-34)
    values[field] = 0.0
    with pytest.raises(DomainError):
        scale_to_dimensionless(PhysicalParams(**values))


@pytest.mark.parametrize("kwargs", [{"kappa": 0.0}, {"kbar": -1.0}, {"lam": -0.1}, {"V0": -1.0},
                                    {"v_clamp": 10.0}])
def test_system_params_validation(kwargs):
    with pytest.raises(ConfigError):
        SystemParams(**kwargs)


@pytest.mark.parametrize("kwargs", [{"n": 1000}, {"n": 128}, {"z_min": 1.0}, {"dt": 0.0},
                                    {"output_every": 0}, {"v_clamp": 1.0}])
def test_run_config_validation(kwargs):
    with pytest.raises(ConfigError):
        RunConfig(**kwargs)


def test_with_lambda_copies():
    other = DEFAULT.with_lambda(0.5)
    assert other.lam == 0.5 and DEFAULT.lam == 0.3
    assert other.to_dict()["lambda"] == 0.5


def test_phase_point_must_be_finite():
    with pytest.raises(DomainError):
        PhasePoint(float("nan"), 0.0)


def test_parse_seed():
    assert parse_seed("a") == ("a", SEED_POINTS["a"])
    assert parse_seed(" F ")[1] == PhasePoint(25.0, 0.0)
    seed_id, point = parse_seed("12.5,-1")
    assert point == PhasePoint(12.5, -1.0)
    assert seed_id == "z12.5_p-1"
    with pytest.raises(ConfigError):
        parse_seed("g")


def test_resolve_config_layers(tmp_path):
    path = tmp_path / "run.json"
    path.write_text('{"physics": {"lambda": 0.2}, "grid": {"n": 4096}}', encoding="utf-8")
    resolved = resolve_config(str(path), ["physics.lambda=0.25"], profile="smoke")
    assert resolved["physics"]["lambda"] == 0.25
    assert resolved["grid"]["n"] == 4096
    assert resolved["grid"]["dt"] == pytest.approx(TWO_PI / 512)
    assert run_config(resolved).n == 4096
    # defaults are untouched by resolution
    assert get_config("physics")["lambda"] == 0.3


@pytest.mark.parametrize("override", ["physics.kapa=1", "physic.kappa=1", "grid.n=1000", "grid.n=\"x\"",
                                      "kappa=1"])
def test_resolve_config_rejects_bad_overrides(override):
    with pytest.raises(ConfigError):
        resolve_config(overrides=[override])


def test_resolve_config_rejects_unknown_file_keys(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"grid": {"N": 2048}}', encoding="utf-8")
    with pytest.raises(ConfigError):
        resolve_config(str(path))


def test_parse_override_reads_json_literals():
    assert parse_override("revival.lambdas=[0, 0.1]") == {"revival": {"lambdas": [0, 0.1]}}
    assert parse_override("logging.log_level=DEBUG") == {"logging": {"log_level": "DEBUG"}}


def test_update_config_checks_keys():
    with pytest.raises(ConfigError):
        update_config("physics", "gravity", 1.0)
    update_config("logging", "verbose", True)
    assert get_config("logging")["verbose"] is True


def test_worker_count_honours_environment(monkeypatch):
    monkeypatch.setenv("GRAVICAV_THREADS", "2")
    assert worker_count(8) == 2
    assert worker_count(1) == 1
    monkeypatch.setenv("GRAVICAV_THREADS", "zero")
    with pytest.raises(ConfigError):
        worker_count()
