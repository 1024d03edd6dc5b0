"""Unit tests for the base stepper and its solve error handling."""

from unittest.mock import patch

import numpy as np
import pytest

from pmlde.base import BaseStepper
from pmlde.exceptions import SolverBreakdown, SolverDivergence
from pmlde.integrators import ModelParams
from pmlde.pml import PmlCoefficients
from pmlde.solver import LinearOperator, SolveReport, SolverOptions, SolveStatus
from pmlde.solver import solve as real_solve


@pytest.fixture
def stepper(grid):
    return BaseStepper(grid, PmlCoefficients.zero(grid), ModelParams(c=1.0, tau=0.1))


def doubling(grid):
    return LinearOperator(lambda u: 2.0 * u, grid.shape, name="double")


class TestBaseStepper:
    def test_properties(self, stepper):
        assert stepper.tau == 0.1
        assert stepper.c == 1.0
        assert isinstance(stepper.solver, SolverOptions)
        assert stepper.last_report is None

    def test_handle_converged(self, stepper):
        stepper._handle_report(SolveReport(3, 1e-14, SolveStatus.CONVERGED, "cg", 1.0))  # Should not raise

    def test_handle_breakdown(self, stepper):
        report = SolveReport(4, 1.0, SolveStatus.BREAKDOWN, "cg", 1.0)
        with pytest.raises(SolverBreakdown) as exc_info:
            stepper._handle_report(report)
        assert exc_info.value.report is report
        assert exc_info.value.exit_code == 3

    def test_handle_max_iter(self, stepper):
        with pytest.raises(SolverDivergence, match="max_iter after 7 iterations"):
            stepper._handle_report(SolveReport(7, 1.0, SolveStatus.MAX_ITER, "bicgstab", 2.0))

    def test_solve(self, stepper, grid):
        x = stepper._solve(doubling(grid), np.full(grid.shape, 4.0))
        assert np.allclose(x, 2.0)
        assert stepper.last_report.converged

    def test_frozen_cells_keep_values(self, stepper, grid):
        mask = np.ones(grid.shape, dtype=bool)
        mask[:2, :] = False
        values = np.full(grid.shape, -7.0)
        x = stepper._solve(doubling(grid), np.full(grid.shape, 4.0), frozen=(mask, values))
        assert np.all(x[:2, :] == -7.0)
        assert np.allclose(x[2:, :], 2.0)

    def test_breakdown_falls_back_to_gmres(self, stepper, grid):
        calls = []

        def fake_solve(op, rhs, x0, tol, max_iter, method, minv, restart):
            calls.append(method)
            if method != "gmres":
                return rhs, SolveReport(2, 1.0, SolveStatus.BREAKDOWN, "cg", 1.0)
            return real_solve(op, rhs, x0, tol, max_iter, method, minv, restart)

        with patch("pmlde.base.solve", side_effect=fake_solve):
            x = stepper._solve(doubling(grid), np.full(grid.shape, 4.0))
        assert calls == [None, "gmres"]
        assert np.allclose(x, 2.0)
        assert stepper.last_report.fallback
        assert stepper.last_report.iterations >= 2

    def test_fallback_failure_raises(self, stepper, grid):
        broken = SolveReport(2, 1.0, SolveStatus.BREAKDOWN, "cg", 1.0)
        with patch("pmlde.base.solve", return_value=(np.zeros(grid.shape), broken)):
            with pytest.raises(SolverBreakdown):
                stepper._solve(doubling(grid), np.ones(grid.shape))
