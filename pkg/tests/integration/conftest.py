"""Shared fixtures for integration tests.

Integration tests run the acceptance scenarios at full size and take
minutes. Run them with:
    pytest tests/integration/ -v --run-integration
"""

import math

import numpy as np
import pytest

from pmlde.presets import load_preset
from pmlde.simulation import Simulation


def pytest_addoption(parser):
    parser.addoption(
        "--run-integration",
        action="store_true",
        default=False,
        help="Run the full-size acceptance scenarios",
    )


def pytest_collection_modifyitems(config, items):
    if not config.getoption("--run-integration"):
        skip = pytest.mark.skip(reason="Need --run-integration to run")
        for item in items:
            if "integration" in str(item.fspath):
                item.add_marker(skip)


def run_preset(name, steps=None, **overrides):
    """Run a preset without writing output; ``overrides`` use ``section__key`` names."""
    values = {key.replace("__", "."): str(value) for key, value in overrides.items()}
    sim = Simulation(load_preset(name, environ={}, overrides=values), write_output=False)
    sim.run(steps=steps)
    return sim


def relative_l2(values, reference, mask):
    """Relative discrete L2 difference over the cells in ``mask``."""
    diff = np.where(mask, values - reference, 0.0)
    ref = np.where(mask, reference, 0.0)
    return math.sqrt(float(np.sum(diff * diff))) / math.sqrt(float(np.sum(ref * ref)))
