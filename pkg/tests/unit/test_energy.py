"""Unit tests for discrete energies and the per-step balance."""

import numpy as np
import pytest

from pmlde import verification
from pmlde.energy import (
    EnergyLedger,
    LedgerRow,
    dissipation_embedded,
    dissipation_fourfield,
    dissipation_leapfrog,
    energy_embedded,
    energy_fourfield,
    energy_identity_residual,
    energy_leapfrog_staggered,
    energy_physical,
    midpoint,
    pml_coupling,
    relative_residual,
    remainder_embedded,
    source_power,
)
from pmlde.geometry import Circle, EmbeddingField, STATIC, sample_embedding
from pmlde.grid import grad_plus
from pmlde.integrators import (
    FourFieldState,
    FourFieldStepper,
    LeapfrogStepper,
    ModelParams,
    SoftEmbeddedStepper,
    bootstrap_first_step,
)
from pmlde.pml import PmlCoefficients, sample_pml
from pmlde.solver import SolverOptions


def row(n, energy, rel=0.0):
    return LedgerRow(n=n, t=0.1 * n, E_embed=energy, D=0.0, R=0.0, residual=0.0, E_phys_level0=energy,
                     E_phys_all=energy, solver_iters=3, relative_residual=rel)


class TestFourFieldEnergy:
    def test_balance(self, grid):
        coeffs = PmlCoefficients.uniform(grid, 0.4, 0.9)
        params = ModelParams(c=1.0, tau=0.05)
        stepper = FourFieldStepper(grid, coeffs, params, SolverOptions(tol=1e-14))
        p0 = verification.gaussian(grid, width=10.0)
        state = FourFieldState(p0, grid.cell_zeros(), grad_plus(p0, grid), grid.edge_zeros())
        for _ in range(5):
            nxt = stepper.step(state)
            e0 = energy_fourfield(state, coeffs, grid)
            e1 = energy_fourfield(nxt, coeffs, grid)
            d = dissipation_fourfield(midpoint(state, nxt), coeffs, grid)
            assert d >= 0.0
            assert abs(energy_identity_residual(e0, e1, params.tau, d, 0.0)) * params.tau <= 1e-10 * e0
            state = nxt

    def test_zero_damping_conserves(self, grid):
        coeffs = PmlCoefficients.zero(grid)
        p0 = verification.gaussian(grid, width=10.0)
        state = FourFieldState(p0, grid.cell_zeros(), grad_plus(p0, grid), grid.edge_zeros())
        nxt = FourFieldStepper(grid, coeffs, ModelParams(c=1.0, tau=0.05), SolverOptions(tol=1e-14)).step(state)
        assert energy_fourfield(nxt, coeffs, grid) == pytest.approx(energy_fourfield(state, coeffs, grid),
                                                                    rel=1e-10)


class TestLeapfrogEnergy:
    def test_balance_uniform_damping(self, grid):
        coeffs = PmlCoefficients.uniform(grid, 0.4, 0.9)
        params = ModelParams(c=1.0, tau=0.05)
        stepper = LeapfrogStepper(grid, coeffs, params, SolverOptions(tol=1e-14))
        unit = EmbeddingField.unit(grid)
        state = bootstrap_first_step(verification.gaussian(grid, width=10.0), grid.cell_zeros(), unit,
                                     coeffs, params, grid)
        for _ in range(5):
            nxt = stepper.step(state)
            p_triple = (state.p_prev, state.p_curr, nxt.p_curr)
            lam_triple = (state.lam_prev, state.lam, nxt.lam)
            e0 = energy_leapfrog_staggered(p_triple[:2], lam_triple[:2], coeffs, params, grid)
            e1 = energy_leapfrog_staggered(p_triple[1:], lam_triple[1:], coeffs, params, grid)
            d = dissipation_leapfrog(p_triple, lam_triple, coeffs, params, grid)
            assert pml_coupling(p_triple, lam_triple, unit, coeffs, params, grid) == pytest.approx(0.0, abs=1e-12)
            assert relative_residual(energy_identity_residual(e0, e1, params.tau, d, 0.0), params.tau, e0, e1) \
                <= 1e-10
            assert e1 <= e0
            state = nxt

    def test_embedded_energy_matches_without_object(self, grid, rng):
        coeffs = PmlCoefficients.uniform(grid, 0.3, 0.1)
        params = ModelParams(c=1.0, tau=0.05)
        unit = EmbeddingField.unit(grid)
        p = (rng.standard_normal(grid.shape), rng.standard_normal(grid.shape))
        lam = (grid.edge_zeros() + 0.5, grid.edge_zeros() - 0.25)
        assert energy_embedded(p, lam, unit, coeffs, params, grid) == pytest.approx(
            energy_leapfrog_staggered(p, lam, coeffs, params, grid), rel=1e-14)


class TestEmbeddedEnergy:
    @pytest.fixture
    def setup(self, layout, pml_grid):
        params = ModelParams(c=1.0, tau=0.05)
        coeffs = sample_pml(layout, pml_grid)
        emb = sample_embedding(Circle((0.0, 0.0), 0.5), STATIC, pml_grid, 0.0, 0.1, layout)
        p0 = verification.gaussian(pml_grid, center=(1.0, 0.0), width=6.0)
        state = bootstrap_first_step(p0, pml_grid.cell_zeros(), emb, coeffs, params, pml_grid)
        stepper = SoftEmbeddedStepper(pml_grid, coeffs, params, SolverOptions(tol=1e-13))
        return params, coeffs, emb, state, stepper

    def test_static_remainder_vanishes(self, setup, pml_grid):
        params, coeffs, emb, state, stepper = setup
        pair = (state.p_prev, state.p_curr)
        lam = (state.lam_prev, state.lam)
        assert remainder_embedded(pair, lam, emb, emb, coeffs, params, pml_grid) == 0.0

    def test_balance_with_coupling(self, setup, pml_grid):
        params, coeffs, emb, state, stepper = setup
        for _ in range(5):
            nxt = stepper.step(state, emb)
            p3 = (state.p_prev, state.p_curr, nxt.p_curr)
            l3 = (state.lam_prev, state.lam, nxt.lam)
            e0 = energy_embedded(p3[:2], l3[:2], emb, coeffs, params, pml_grid)
            e1 = energy_embedded(p3[1:], l3[1:], emb, coeffs, params, pml_grid)
            d = dissipation_embedded(p3, l3, emb, coeffs, params, pml_grid)
            k = pml_coupling(p3, l3, emb, coeffs, params, pml_grid)
            residual = energy_identity_residual(e0, e1, params.tau, d, 0.0, 0.0, k)
            assert d >= 0.0
            assert relative_residual(residual, params.tau, e0, e1) <= 1e-10
            state = nxt

    def test_source_power(self, setup, pml_grid):
        params, coeffs, emb, state, stepper = setup
        p3 = (state.p_prev, state.p_curr, state.p_curr)
        assert source_power(None, p3, emb, coeffs, params, pml_grid) == 0.0
        f = np.ones(pml_grid.shape)
        assert source_power(f, p3, emb, coeffs, params, pml_grid) != 0.0


class TestPhysicalEnergy:
    def test_static_constant_field(self, grid):
        params = ModelParams(c=1.0, tau=0.1)
        p = np.full(grid.shape, 2.0)
        assert energy_physical((p, p), grid, EmbeddingField.unit(grid), params) == 0.0

    def test_kinetic_part(self, grid):
        params = ModelParams(c=1.0, tau=0.5)
        p0 = np.zeros(grid.shape)
        p1 = np.ones(grid.shape)
        assert energy_physical((p0, p1), grid, EmbeddingField.unit(grid), params) == pytest.approx(0.5 * 4.0 * 4.0)

    def test_cell_mask(self, grid):
        params = ModelParams(c=1.0, tau=0.5)
        p0 = np.zeros(grid.shape)
        p1 = np.ones(grid.shape)
        mask = np.zeros(grid.shape, dtype=bool)
        mask[:8, :] = True
        half = energy_physical((p0, p1), grid, EmbeddingField.unit(grid), params, cell_mask=mask)
        assert half == pytest.approx(0.5 * 4.0 * 2.0)


class TestLedger:
    def test_append_and_tail(self):
        ledger = EnergyLedger()
        for n, e in enumerate([3.0, 2.0, 1.0], start=2):
            ledger.append(row(n, e, rel=1e-13 * n))
        assert len(ledger) == 3
        assert ledger.e_prev == 1.0
        assert [r.n for r in ledger.tail(2)] == [3, 4]
        assert ledger.max_relative_residual() == pytest.approx(4e-13)
        assert ledger.is_nonincreasing()

    def test_increase_detected(self):
        ledger = EnergyLedger([row(2, 1.0), row(3, 1.5)])
        assert not ledger.is_nonincreasing()
        assert ledger.is_nonincreasing(slack=0.6)

    def test_csv_row_order(self):
        values = row(5, 2.0).as_csv_row()
        assert values[0] == 5
        assert values[2] == 2.0
        assert values[-1] == 3

    def test_relative_residual_zero_energy(self):
        assert relative_residual(2.0, 0.5, 0.0, 0.0) == 1.0
