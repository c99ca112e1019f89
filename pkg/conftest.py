"""
Shared pytest setup: repository root on sys.path and the slow-test switch

Acceptance-scale reproductions are marked `slow` and only run with --runslow.
"""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run acceptance-scale tests (minutes to hours)")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale reproduction, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
