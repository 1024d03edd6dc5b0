"""Unit tests for the time integrators."""

import numpy as np
import pytest

from pmlde import verification
from pmlde.exceptions import ConfigValidationError, GeometryEscape, SolverDivergence, UnsupportedMotion
from pmlde.geometry import Circle, EmbeddingField, RigidMotion, STATIC, sample_embedding
from pmlde.grid import grad_plus
from pmlde.integrators import (
    FourFieldState,
    FourFieldStepper,
    HardEmbeddedStepper,
    LeapfrogStepper,
    ModelParams,
    SoftEmbeddedStepper,
    WaveState,
    bootstrap_first_step,
    cn_step_fourfield,
    leapfrog_step_fixed,
    make_stepper,
    pml_de_step_hard,
    pml_de_step_soft,
    reconstruct_q_chi,
)
from pmlde.pml import PmlCoefficients, sample_pml
from pmlde.solver import SolverOptions


class TestModelParams:
    def test_defaults(self):
        params = ModelParams(c=1.0, tau=0.1)
        assert params.bc == "soft"
        assert params.beta == 100.0

    @pytest.mark.parametrize("field,value", [("c", 0.0), ("tau", -1.0), ("eta_d", 0.0), ("psi_hat", 1.0)])
    def test_out_of_range(self, field, value):
        kwargs = {"c": 1.0, "tau": 0.1, field: value}
        with pytest.raises(ConfigValidationError, match=f"model.{field}"):
            ModelParams(**kwargs)

    def test_unknown_bc(self):
        with pytest.raises(ConfigValidationError):
            ModelParams(c=1.0, tau=0.1, bc="rigid")


class TestFourField:
    def test_constraint_preserved(self):
        assert verification.check_constraint_preserved(n=8, steps=10).passed

    def test_constraint_decay_factor(self):
        assert verification.check_constraint_decay(n=8, steps=3).passed

    def test_pack_unpack(self, grid, rng):
        state = FourFieldState.zeros(grid)
        state.p[:] = rng.standard_normal(grid.shape)
        state.chi.y[:] = rng.standard_normal(state.chi.y.shape)
        back = FourFieldState.unpack(state.pack(), grid)
        assert np.array_equal(back.p, state.p)
        assert back.chi == state.chi

    def test_reduced_scheme_equivalence(self):
        result = verification.check_fourfield_leapfrog(n=8, steps=20)
        assert result.passed, result

    def test_reconstruction(self, grid):
        coeffs = PmlCoefficients.uniform(grid, 0.4, 0.9)
        params = ModelParams(c=1.0, tau=0.05)
        stepper = FourFieldStepper(grid, coeffs, params, SolverOptions(tol=1e-14))
        p0 = verification.gaussian(grid, width=10.0)
        s0 = FourFieldState(p0, grid.cell_zeros(), grad_plus(p0, grid), grid.edge_zeros())
        s1 = stepper.step(s0)
        (q0, q1), (chi0, chi1) = reconstruct_q_chi((s0.p, s1.p), (s0.lam, s1.lam), coeffs, params, grid)
        scale = np.abs(s1.q).max()
        assert np.abs(q1 - s1.q).max() <= 1e-9 * scale
        assert np.abs(q0 - s0.q).max() <= 1e-9 * scale
        assert (chi1 - s1.chi).abs_max() <= 1e-9 * s1.chi.abs_max()


class TestThreeLevel:
    def test_zero_data_stays_zero(self, grid):
        stepper = LeapfrogStepper(grid, PmlCoefficients.uniform(grid, 1.0, 2.0), ModelParams(c=1.0, tau=0.1))
        state = stepper.step(WaveState.zeros(grid, 0.1, 1))
        assert not state.p_curr.any()
        assert state.n == 2
        assert state.t == pytest.approx(0.2)

    def test_degeneracy(self):
        assert verification.check_degeneracy(n=16, steps=10).passed

    def test_bootstrap(self, grid):
        coeffs = PmlCoefficients.zero(grid)
        params = ModelParams(c=1.0, tau=0.01)
        p0 = verification.gaussian(grid)
        state = bootstrap_first_step(p0, grid.cell_zeros(), EmbeddingField.unit(grid), coeffs, params, grid)
        assert state.n == 1
        assert state.t == pytest.approx(0.01)
        assert np.array_equal(state.p_prev, p0)
        assert state.lam_prev.abs_max() == 0.0
        assert np.abs(state.p_curr - p0).max() < 1e-2

    def test_lambda_update_without_damping(self, grid, rng):
        stepper = SoftEmbeddedStepper(grid, PmlCoefficients.zero(grid), ModelParams(c=1.0, tau=0.1))
        lam = grid.edge_zeros() + 1.5
        out = stepper.update_lambda(lam, rng.standard_normal(grid.shape), rng.standard_normal(grid.shape))
        assert out == lam

    def test_soft_object_damps_interior(self, layout, pml_grid):
        params = ModelParams(c=1.0, tau=0.05)
        coeffs = sample_pml(layout, pml_grid)
        emb = sample_embedding(Circle((0.0, 0.0), 0.5), STATIC, pml_grid, 0.0, 0.1, layout)
        p0 = np.ones(pml_grid.shape)
        state = WaveState(p0, p0, pml_grid.edge_zeros(), pml_grid.edge_zeros(), 0.05, 1)
        for _ in range(16):
            state = pml_de_step_soft(state, emb, coeffs, params, pml_grid)
        inside = emb.psi_cell < 1e-3
        assert state.is_finite()
        assert np.abs(state.p_curr[inside]).max() < 5e-2

    def test_support_checked(self, layout, pml_grid):
        stepper = SoftEmbeddedStepper(pml_grid, PmlCoefficients.uniform(pml_grid, 1.0, 1.0),
                                      ModelParams(c=1.0, tau=0.05))
        emb = sample_embedding(Circle((0.0, 0.0), 0.5), STATIC, pml_grid, 0.0, 0.1, layout)
        with pytest.raises(GeometryEscape):
            stepper.step(WaveState.zeros(pml_grid, 0.05, 1), emb)

    def test_solver_failure_surfaces(self, grid):
        stepper = LeapfrogStepper(grid, PmlCoefficients.zero(grid), ModelParams(c=1.0, tau=0.1),
                                  SolverOptions(tol=1e-14, maxiter_factor=1e-3))
        p = verification.gaussian(grid)
        with pytest.raises(SolverDivergence):
            stepper.step(WaveState(p, 0.5 * p, grid.edge_zeros(), grid.edge_zeros(), 0.1, 1))

    def test_frozen_ghosts(self, grid):
        stepper = LeapfrogStepper(grid, PmlCoefficients.zero(grid), ModelParams(c=1.0, tau=0.1))
        p = verification.gaussian(grid)
        mask = np.ones(grid.shape, dtype=bool)
        mask[-2:, :] = False
        ghost = np.full(grid.shape, 3.0)
        state = stepper.step(WaveState(p, p, grid.edge_zeros(), grid.edge_zeros(), 0.1, 1), frozen=(mask, ghost))
        assert np.all(state.p_curr[-2:, :] == 3.0)


class TestHard:
    def test_rejects_acceleration(self, grid):
        with pytest.raises(UnsupportedMotion):
            HardEmbeddedStepper(grid, PmlCoefficients.zero(grid), ModelParams(c=1.0, tau=0.1, bc="hard"),
                                motion=RigidMotion((0.0, 0.0), (1.0, 0.0)))

    def test_make_stepper(self, grid):
        coeffs = PmlCoefficients.zero(grid)
        soft = make_stepper(grid, coeffs, ModelParams(c=1.0, tau=0.1))
        hard = make_stepper(grid, coeffs, ModelParams(c=1.0, tau=0.1, bc="hard"), motion=STATIC)
        assert type(soft) is SoftEmbeddedStepper
        assert type(hard) is HardEmbeddedStepper

    def test_hard_moving_uses_nonsymmetric_solve(self, layout, pml_grid):
        params = ModelParams(c=1.0, tau=0.05, bc="hard")
        coeffs = sample_pml(layout, pml_grid)
        motion = RigidMotion((-0.5, 0.0))
        emb0 = sample_embedding(Circle((0.0, 0.0), 0.5), motion, pml_grid, 0.0, 0.1, layout)
        emb1 = sample_embedding(Circle((0.0, 0.0), 0.5), motion, pml_grid, 0.05, 0.1, layout)
        p0 = verification.gaussian(pml_grid, center=(1.0, 0.0), width=8.0)
        state = bootstrap_first_step(p0, pml_grid.cell_zeros(), emb0, coeffs, params, pml_grid)
        stepper = HardEmbeddedStepper(pml_grid, coeffs, params, SolverOptions(tol=1e-12), motion=motion)
        out = stepper.step(state, emb1)
        assert out.is_finite()
        assert stepper.last_report.method in ("bicgstab", "gmres")


class TestEntryPoints:
    def test_fourfield(self, grid):
        coeffs = PmlCoefficients.uniform(grid, 0.4, 0.9)
        params = ModelParams(c=1.0, tau=0.05)
        p0 = verification.gaussian(grid, width=10.0)
        s0 = FourFieldState(p0, grid.cell_zeros(), grad_plus(p0, grid), grid.edge_zeros())
        expected = FourFieldStepper(grid, coeffs, params).step(s0)
        assert np.array_equal(cn_step_fourfield(s0, coeffs, params, grid).p, expected.p)

    def test_leapfrog(self, layout, pml_grid):
        coeffs = sample_pml(layout, pml_grid)
        params = ModelParams(c=1.0, tau=0.05)
        p = verification.gaussian(pml_grid, width=8.0)
        state = WaveState(p, p, pml_grid.edge_zeros(), pml_grid.edge_zeros(), 0.05, 1)
        expected = LeapfrogStepper(pml_grid, coeffs, params).step(state.copy())
        assert np.array_equal(leapfrog_step_fixed(state, coeffs, params, pml_grid).p_curr, expected.p_curr)

    def test_hard(self, layout, pml_grid):
        coeffs = sample_pml(layout, pml_grid)
        params = ModelParams(c=1.0, tau=0.05, bc="hard")
        emb = sample_embedding(Circle((0.0, 0.0), 0.5), STATIC, pml_grid, 0.05, 0.1, layout)
        p = verification.gaussian(pml_grid, center=(1.0, 0.0), width=8.0)
        state = WaveState(p, p, pml_grid.edge_zeros(), pml_grid.edge_zeros(), 0.05, 1)
        expected = HardEmbeddedStepper(pml_grid, coeffs, params, motion=STATIC).step(state.copy(), emb)
        out = pml_de_step_hard(state, emb, coeffs, params, pml_grid, motion=STATIC)
        assert np.array_equal(out.p_curr, expected.p_curr)
        assert out.n == 2
