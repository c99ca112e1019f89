"""
Configuration module for the gravicav laboratory

Defaults live in the section dictionaries below. A run resolves them into a
fresh nested dict: defaults, then a named profile, then a JSON file, then
"section.key=value" overrides. Unknown sections or keys are rejected.
"""

import copy
import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from .core import TWO_PI, RunConfig, SystemParams
from .errors import ConfigError

# ============ Physics (scaled units, drive period 2*pi) ============
PHYSICS_CONFIG = {
    "V0": 1.0,              # wall height
    "kappa": 1.0,           # wall steepness
    "lambda": 0.3,          # modulation strength a w^2 / g
    "kbar": 1.0,            # effective Planck constant
    "v_clamp": 1.0e6,       # wall clamp against overflow
}

# ============ Quantum grid and run length ============
GRID_CONFIG = {
    "z_min": -10.0,
    "z_max": 80.0,
    "n": 2048,
    "dt": TWO_PI / 1024,
    "t_total": 800.0 * math.pi,
    "output_every": 4,      # C^2 sampled every this many steps
}

# ============ Initial wavepacket ============
PACKET_CONFIG = {
    "sigma_z": 1.0 / math.sqrt(2.0),
}

# ============ Classical dynamics ============
CLASSICAL_CONFIG = {
    "steps_per_period": 1024,
    "n_periods": 500,
    "lyapunov_periods": 10000,
    "min_lyapunov_periods": 1000,
    "separation": 1.0e-8,
    "transient_fraction": 0.1,
    "zero_threshold": 1.0e-3,
    "chaotic_threshold": 1.0e-2,
    "divergence_cutoff": 1.0e6,
    "seed_z": [2.0, 40.0],
    "seed_p": [-3.0, 3.0],
    "seed_count": 5,        # per axis, 25 seeds in total
    "cell_size": 0.5,
}

# ============ Quantum numerical guards ============
QUANTUM_CONFIG = {
    "tail_fraction": 0.1,   # top share of |p| bins watched for aliasing
    "tail_tolerance": 1.0e-6,
    "edge_tolerance": 1.0e-6,
    "guard_every": 256,
    "snapshot_count": 4,
}

# ============ Revival analysis ============
REVIVAL_CONFIG = {
    "revival_threshold": 0.5,
    "lambda_u_threshold": 0.2,
    "collapse_fraction": 0.5,
    "window_fraction": 0.25,
    "pole_tolerance": 1.0e-6,
    "regime_limit": 0.5,
    "resonance_order": None,        # None: nearest to the classical period
    "t_cl_hint": None,              # None: locked bounce period of the packet
    "lock_denominator": 3,          # most bounces per locked cycle
    "scan_horizon": None,           # None: 1.2 x the later of the two undriven revival times
    "lambdas": [round(0.05 * k, 2) for k in range(13)],
}

# ============ Floquet spectrum ============
FLOQUET_CONFIG = {
    "n": 512,
    "z_min": -10.0,
    "z_max": 80.0,
    "dt": TWO_PI / 1024,
    "unitarity_tolerance": 1.0e-8,
    "overlap_threshold": 1.0e-2,
    "chain": None,                  # drive periods per resonant cycle, None: from the locked ratio
    "partner_tolerance": 1.0e-3,    # in units of kbar
    "action_radius": 4.0,           # Husimi disc for ladder actions, 0: plain mean action
    "min_disc_mass": 0.5,           # island ladder states keep at least this much Husimi mass in the disc
    "static_states": 20,
    "island_radius": 2.0,
    "husimi_window": [0.0, 40.0, -4.0, 4.0],
    "husimi_resolution": [161, 81],
}

# ============ Logging Configuration ============
LOGGING_CONFIG = {
    "verbose": True,
    "log_file": None,
    "log_level": "INFO",
}

SECTIONS = {
    "physics": PHYSICS_CONFIG,
    "grid": GRID_CONFIG,
    "packet": PACKET_CONFIG,
    "classical": CLASSICAL_CONFIG,
    "quantum": QUANTUM_CONFIG,
    "revival": REVIVAL_CONFIG,
    "floquet": FLOQUET_CONFIG,
    "logging": LOGGING_CONFIG,
}

PROFILES = {
    "default": {},
    # half resolution in space and time, same physical cadence
    "smoke": {
        "grid": {"n": 1024, "dt": TWO_PI / 512, "output_every": 2},
        "classical": {"steps_per_period": 512},
    },
}

THREADS_ENV = "GRAVICAV_THREADS"


def get_config(section: str) -> Dict[str, Any]:
    """
    Get configuration section

    Args:
        section: Configuration section name

    Returns:
        Configuration dictionary
    """
    return SECTIONS.get(section, {})


def update_config(section: str, key: str, value: Any):
    """
    Update configuration value

    Args:
        section: Configuration section name
        key: Configuration key
        value: New value
    """
    config = get_config(section)
    if not config:
        raise ConfigError(f"unknown config section {section!r}")
    if key not in config:
        raise ConfigError(f"unknown config key {section}.{key}")
    config[key] = _coerce(config[key], value, f"{section}.{key}")


def _coerce(default: Any, value: Any, where: str) -> Any:
    if default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        return list(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    return value


def _merge(resolved: Dict[str, Dict[str, Any]], patch: Dict[str, Any], origin: str):
    if not isinstance(patch, dict):
        raise ConfigError(f"{origin}: top level must be an object of sections")
    for section, values in patch.items():
        if section not in resolved:
            raise ConfigError(f"{origin}: unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"{origin}: section {section!r} must be an object")
        for key, value in values.items():
            if key not in resolved[section]:
                raise ConfigError(f"{origin}: unknown config key {section}.{key}")
            default = SECTIONS[section][key]
            resolved[section][key] = _coerce(default, value, f"{section}.{key}")


def parse_override(text: str) -> Dict[str, Dict[str, Any]]:
    """
    Parse one "section.key=value" override

    The value is read as a JSON literal, falling back to a plain string.
    """
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    target, raw = text.split("=", 1)
    section, key = target.strip().split(".", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return {section: {key: value}}


def resolve_config(path: Optional[str] = None,
                   overrides: Iterable[str] = (),
                   profile: str = "default",
                   document: Optional[Dict[str, Any]] = None) -> Dict[str, Dict[str, Any]]:
    """
    Resolve the full configuration of a run

    Args:
        path: Optional JSON configuration file
        overrides: "section.key=value" strings applied last
        profile: Named profile applied on top of the defaults
        document: Already-parsed configuration, e.g. from a manifest, applied
            after the file

    Returns:
        Nested dict with one entry per section
    """
    resolved = {name: copy.deepcopy(values) for name, values in SECTIONS.items()}
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}, expected one of {sorted(PROFILES)}")
    _merge(resolved, PROFILES[profile], f"profile {profile}")

    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        _merge(resolved, data, str(path))
    if document is not None:
        _merge(resolved, document, "embedded config")

    for text in overrides:
        _merge(resolved, parse_override(text), f"override {text!r}")

    # constructing the typed views validates their invariants
    system_params(resolved)
    run_config(resolved)
    return resolved


def system_params(resolved: Dict[str, Dict[str, Any]]) -> SystemParams:
    physics = resolved["physics"]
    return SystemParams(
        V0=physics["V0"],
        kappa=physics["kappa"],
        lam=physics["lambda"],
        kbar=physics["kbar"],
        v_clamp=physics["v_clamp"],
    )


def run_config(resolved: Dict[str, Dict[str, Any]]) -> RunConfig:
    grid = resolved["grid"]
    return RunConfig(
        z_min=grid["z_min"],
        z_max=grid["z_max"],
        n=grid["n"],
        dt=grid["dt"],
        t_total=grid["t_total"],
        output_every=grid["output_every"],
        v_clamp=resolved["physics"]["v_clamp"],
    )


def worker_count(requested: Optional[int] = None) -> int:
    """
    Number of workers for sweeps, capped by the GRAVICAV_THREADS variable

    Args:
        requested: Explicit request, e.g. from the command line
    """
    default = min(4, os.cpu_count() or 1)
    count = requested if requested is not None else default
    cap = os.getenv(THREADS_ENV)
    if cap:
        try:
            cap_value = int(cap)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {cap!r}") from exc
        if cap_value < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1, got {cap_value}")
        count = min(count, cap_value)
    return max(1, count)


def setup_logging(config: Optional[Dict[str, Any]] = None) -> logging.Logger:
    """
    Configure the package logger from a logging section

    Args:
        config: Logging section, defaults to LOGGING_CONFIG

    Returns:
        The package logger
    """
    config = config or LOGGING_CONFIG
    logger = logging.getLogger("src")
    logger.setLevel(getattr(logging, str(config.get("log_level", "INFO")).upper(), logging.INFO))
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    formatter = logging.Formatter("[%(name)s] %(message)s")
    console = logging.StreamHandler()
    console.setFormatter(formatter)
    logger.addHandler(console)
    if config.get("log_file"):
        file_handler = logging.FileHandler(config["log_file"], encoding="utf-8")
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)
    logger.propagate = False
    return logger
