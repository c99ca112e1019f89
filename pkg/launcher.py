#!/usr/bin/env python3
"""
Launcher for the gravicav laboratory

Usage:
    python launcher.py poincare
    python launcher.py evolve --seed a --out runs/a
    python launcher.py revival-scan --seed f --lambdas 0:0.05:0.6
    python launcher.py reproduce-figure 2 --profile smoke
    python launcher.py --from-manifest runs/a/manifest.json --out scratch

Or import it:
    from launcher import create_laboratory
    lab = create_laboratory("runs/a", overrides=["physics.lambda=0.2"])
    lab.run_autocorr("f")
"""

import sys

from src import __version__
from src.cli import run
from src.config import resolve_config
from src.laboratory import CavityLaboratory


def create_laboratory(output_dir, config_path=None, overrides=(), profile="default", verbose=True):
    """Quick way to create a laboratory with a resolved configuration"""
    config = resolve_config(config_path, overrides, profile)
    return CavityLaboratory(config, output_dir, verbose=verbose)


if __name__ == "__main__":
    if len(sys.argv) > 1 and sys.argv[1] in ("--version", "version"):
        print(f"gravicav {__version__}")
        sys.exit(0)
    sys.exit(run(sys.argv[1:]))
