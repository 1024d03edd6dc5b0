"""Base stepper class for the implicit time integrators."""

import logging

import numpy as np

from .exceptions import SolverBreakdown, SolverDivergence
from .solver import LinearOperator, SolverOptions, SolveStatus, solve

logger = logging.getLogger(__name__)


class BaseStepper:
    """Base class for all time steppers: owns grid, coefficients and solver settings."""

    def __init__(self, grid, coeffs, params, solver=None):
        self.grid = grid
        self.coeffs = coeffs
        self.params = params
        self.solver = solver or SolverOptions()
        self.last_report = None

    @property
    def tau(self):
        return self.params.tau

    @property
    def c(self):
        return self.params.c

    def _solve(self, op, rhs, x0=None, diagonal=None, frozen=None):
        """Solve ``op(x) = rhs``, retrying once with GMRES after a breakdown.

        ``frozen`` is an optional ``(mask, values)`` pair: cells where ``mask``
        is False keep ``values`` and are removed from the unknowns.
        """
        if frozen is not None:
            op, rhs, x0, diagonal = _restrict_to_mask(op, rhs, x0, diagonal, *frozen)
        if diagonal is not None:
            minv = 1.0 / np.where(diagonal != 0.0, diagonal, 1.0)
        elif len(op.shape) == 2:
            minv = op.jacobi()
        else:
            minv = None

        options = self.solver
        max_iter = options.max_iter(rhs.size)
        x, report = solve(op, rhs, x0, options.tol, max_iter, options.method, minv, options.restart)
        try:
            self._handle_report(report)
        except SolverBreakdown:
            logger.info("%s broke down after %d iterations, retrying with gmres",
                        report.method, report.iterations)
            used = report.iterations
            x, report = solve(op, rhs, x0, options.tol, max_iter, "gmres", minv, options.restart)
            report.iterations += used
            report.fallback = True
            self._handle_report(report)
        finally:
            self.last_report = report

        if frozen is not None:
            mask, values = frozen
            x = np.where(mask, x, values)
        return x

    def _handle_report(self, report):
        if report.converged:
            return
        message = (
            f"{report.method} {report.status.value} after {report.iterations} iterations, "
            f"residual {report.final_residual:.3e} (rhs norm {report.rhs_norm:.3e})"
        )
        error_map = {
            SolveStatus.BREAKDOWN: SolverBreakdown,
            SolveStatus.MAX_ITER: SolverDivergence,
        }
        error_class = error_map.get(report.status, SolverDivergence)
        raise error_class(message, report)


def _restrict_to_mask(op, rhs, x0, diagonal, mask, values):
    """Operator and right-hand side acting on the unmasked cells only."""
    keep = mask.astype(float)
    fixed = np.where(mask, 0.0, values)
    rhs = keep * (rhs - op(fixed))

    def apply(u):
        return keep * op(keep * u)

    restricted = LinearOperator(apply, op.shape, op.symmetric, name=op.name)
    if x0 is not None:
        x0 = keep * x0
    if diagonal is not None:
        diagonal = np.where(mask, diagonal, 1.0)
    return restricted, rhs, x0, diagonal
