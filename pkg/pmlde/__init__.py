"""Diffuse-interface PML wave simulations with moving objects."""

import logging

from .exceptions import (
    PmldeError,
    ConfigError,
    ConfigParseError,
    ConfigValidationError,
    SolverDivergence,
    SolverBreakdown,
    GeometryError,
    GeometryEscape,
    UnsupportedMotion,
    OutOfDomain,
    OutputError,
    SnapshotFormatError,
    CheckpointError,
)
from .presets import list_presets, load_preset
from .runconfig import RunConfig, load_config, parse_config
from .simulation import Simulation

__version__ = "0.1.0"
__all__ = [
    "Simulation",
    "RunConfig",
    "load_config",
    "parse_config",
    "load_preset",
    "list_presets",
    "PmldeError",
    "ConfigError",
    "ConfigParseError",
    "ConfigValidationError",
    "SolverDivergence",
    "SolverBreakdown",
    "GeometryError",
    "GeometryEscape",
    "UnsupportedMotion",
    "OutOfDomain",
    "OutputError",
    "SnapshotFormatError",
    "CheckpointError",
]

logging.getLogger(__name__).addHandler(logging.NullHandler())
