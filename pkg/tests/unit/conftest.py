"""Shared fixtures for unit tests."""

import numpy as np
import pytest

from pmlde.grid import StaggeredGrid
from pmlde.pml import PmlLayout
from pmlde.runconfig import parse_config


BASE_SECTIONS = {
    "run": {"name": "unit"},
    "domain": {"a1": "2", "a2": "2", "l1": "1", "l2": "1"},
    "grid": {"nx": "24", "ny": "24"},
    "time": {"tau": "0.05", "t_end": "0.25"},
    "model": {"c": "1", "beta": "100"},
    "initial": {"kind": "gaussian", "center": "0.5, 0", "width": "4"},
    "output": {"async": "false"},
}


def config_text(**sections):
    """Config text built from BASE_SECTIONS; ``None`` drops a section."""
    merged = {name: dict(values) for name, values in BASE_SECTIONS.items()}
    for name, values in sections.items():
        if values is None:
            merged.pop(name, None)
        else:
            merged.setdefault(name, {}).update(values)
    lines = []
    for name, values in merged.items():
        lines.append(f"[{name}]")
        lines.extend(f"{key} = {value}" for key, value in values.items())
        lines.append("")
    return "\n".join(lines)


@pytest.fixture
def make_config():
    """Factory for small parsed run configurations."""
    def _make(environ=None, overrides=None, **sections):
        return parse_config(config_text(**sections), environ=environ or {}, overrides=overrides)
    return _make


@pytest.fixture
def grid():
    return StaggeredGrid.covering(-1.0, 1.0, -1.0, 1.0, 16, 16)


@pytest.fixture
def layout():
    return PmlLayout.with_default_strength(2.0, 2.0, 1.0, 1.0, 1.0)


@pytest.fixture
def pml_grid(layout):
    return StaggeredGrid.covering(*layout.domain, 32, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
