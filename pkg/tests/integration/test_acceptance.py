"""Full-size acceptance scenarios."""

import time

import numpy as np

from pmlde import verification
from pmlde.amr import LevelHierarchy, SensorThresholds, Box
from pmlde.cli import main
from pmlde.presets import load_preset
from pmlde.simulation import Simulation
from tests.integration.conftest import relative_l2, run_preset


class TestDiscreteStructure:
    def test_sbp(self):
        start = time.perf_counter()
        result = verification.check_sbp(n=64, trials=100)
        assert result.passed, result
        assert time.perf_counter() - start < 1.0

    def test_coefficient_identities(self):
        assert verification.check_coefficient_identities().passed

    def test_constraint_preserved(self):
        result = verification.check_constraint_preserved(n=16, steps=50)
        assert result.passed, result

    def test_constraint_decay_factor(self):
        result = verification.check_constraint_decay(n=16, steps=5)
        assert result.passed, result

    def test_fourfield_matches_reduced_scheme(self):
        start = time.perf_counter()
        result = verification.check_fourfield_leapfrog(n=32, steps=200)
        assert result.passed, result
        assert time.perf_counter() - start < 30.0


class TestEnergy:
    def test_identity_fixed(self):
        assert verification.check_energy_identity("fixed").passed

    def test_identity_static_circle(self):
        assert verification.check_energy_identity("static_circle").passed

    def test_identity_moving_circle(self):
        assert verification.check_energy_identity("moving_circle").passed

    def test_identity_moving_star(self):
        assert verification.check_energy_identity("moving_star").passed

    def test_static_remainder(self):
        remainder, decay = verification.check_static_remainder()
        assert remainder.passed, remainder
        assert decay.passed, decay

    def test_early_window_conservation(self):
        sim = run_preset("fixed_circle", time__t_end=1)
        rows = sim.ledger.rows
        e0, p0 = rows[0].E_embed, rows[0].E_phys_level0
        drift = max(abs(r.E_embed - e0) / e0 for r in rows)
        phys_drift = max(abs(r.E_phys_level0 - p0) / p0 for r in rows)
        assert drift <= 1e-8
        assert phys_drift <= 1e-8

    def test_embedded_energy_nonincreasing(self):
        # Solve error must stay below the slack
        sim = run_preset("fixed_circle", time__t_end=1, solver__tol=1e-15)
        assert sim.grid.shape == (128, 128)
        assert sim.ledger.is_nonincreasing(slack=1e-14)

    def test_pml_absorption(self):
        sim = run_preset("free_pulse", time__t_end=20)
        energies = [r.E_phys_level0 for r in sim.ledger]
        assert energies[-1] <= 1e-3 * max(energies)


class TestEmbedding:
    def test_trace_decreases_with_eps(self):
        traces = [verification.interface_trace(eps) for eps in (0.2, 0.1, 0.05)]
        assert traces[0] > traces[1] > traces[2]
        assert traces[1] / traces[0] <= 0.7
        assert traces[2] / traces[1] <= 0.7

    def test_soft_hard_fixed_degeneracy(self):
        result = verification.check_degeneracy(n=32, steps=50)
        assert result.passed, result


class TestConvergence:
    def test_orders(self):
        assert verification.convergence_in_tau().order >= 1.8
        assert verification.convergence_in_h().order >= 1.8

    def test_subcommand(self):
        assert main(["convergence"]) == 0


class TestAdaptive:
    def test_full_coverage_matches_uniform_fine(self):
        cfg = load_preset("fixed_circle", environ={}, overrides={"grid.nx": "32", "grid.ny": "32"})
        sim = Simulation(cfg, write_output=False)
        base = sim.grid
        hierarchy = LevelHierarchy(base, sim, thresholds=SensorThresholds.never(), max_level=1).initialize()
        hierarchy.set_level(1, [Box(0, 0, 2 * base.nx, 2 * base.ny)], initial=True)
        uniform = LevelHierarchy(base.refined(2), sim, max_level=0).initialize()
        for _ in range(50):
            hierarchy.advance()
            uniform.advance()
        fine = hierarchy.levels[1][0].state.p_curr
        reference = uniform.base.state.p_curr
        assert np.abs(fine - reference).max() <= 1e-8 * np.abs(reference).max()

    def test_adaptive_matches_uniform_oracle(self):
        adaptive = run_preset("fixed_circle_amr", grid__nx=64, grid__ny=64, time__t_end=1)
        oracle = run_preset("fixed_circle", grid__nx=128, grid__ny=128, time__t_end=1)
        h = adaptive.hierarchy
        assert h.finest_level == 1
        grid = oracle.grid
        assert h.grids[1].shape == grid.shape
        fine = h.composites("p_curr")[1]
        emb = oracle.embedding(grid, oracle.hierarchy.t)
        mask = oracle.region(grid)[0] & (emb.psi_cell >= 0.5)
        assert relative_l2(fine, oracle.state.p_curr, mask) <= 5e-2
