"""pmlde custom exceptions.

Every error carries the process exit code the command-line driver uses
when the error ends a run.
"""

from . import config


class PmldeError(Exception):
    """Base exception for pmlde."""

    exit_code = config.EXIT_FAILURE


class ConfigError(PmldeError):
    """Run configuration could not be used."""

    exit_code = config.EXIT_CONFIG


class ConfigParseError(ConfigError):
    """Configuration text is malformed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigValidationError(ConfigError):
    """Configuration violates a physical or structural invariant."""

    def __init__(self, message, invariant=None):
        super().__init__(message)
        self.invariant = invariant


class SolverDivergence(PmldeError):
    """Implicit solve failed to reach its tolerance."""

    exit_code = config.EXIT_SOLVER

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SolverBreakdown(SolverDivergence):
    """Krylov iteration broke down (indefinite or degenerate operator)."""


class GeometryError(PmldeError):
    """Geometry or motion is incompatible with the run."""

    exit_code = config.EXIT_GEOMETRY


class GeometryEscape(GeometryError):
    """Object reaches the PML collar (support condition violated)."""


class UnsupportedMotion(GeometryError):
    """Motion not supported by the selected boundary treatment."""


class OutOfDomain(GeometryError):
    """Coordinate lies outside the computational domain."""


class OutputError(PmldeError):
    """Reading or writing run output failed."""

    exit_code = config.EXIT_IO

    def __init__(self, message, path=None):
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path


class SnapshotFormatError(OutputError):
    """Snapshot block is malformed."""


class CheckpointError(OutputError):
    """Checkpoint cannot be written or restored."""
