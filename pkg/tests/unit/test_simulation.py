"""Unit tests for the run driver."""

import os

import numpy as np
import pytest

from pmlde.exceptions import CheckpointError, OutputError
from pmlde.integrators import HardEmbeddedStepper
from pmlde.output import read_energy_rows, read_snapshot
from pmlde.presets import load_preset
from pmlde.simulation import Simulation

CIRCLE = {"shape": "circle", "center": "0, 0", "radius": "0.5", "eps": "0.1"}


@pytest.fixture
def circle_config(make_config):
    return make_config(embedding=CIRCLE, solver={"tol": "1e-13"})


class TestSimulation:
    def test_components_are_lazy(self, circle_config):
        sim = Simulation(circle_config, write_output=False)
        assert sim._hierarchy is None
        assert sim.grid.shape == (24, 24)
        assert sim.state.n == 1
        assert sim._hierarchy is not None

    def test_run_balances_energy(self, circle_config):
        sim = Simulation(circle_config, write_output=False)
        ledger = sim.run()
        assert len(ledger) == 4
        assert sim.hierarchy.n == 5
        assert sim.hierarchy.t == pytest.approx(0.25)
        assert ledger.max_relative_residual() <= 1e-9
        for row in ledger:
            assert row.D >= 0.0
            assert row.R == 0.0
            assert row.E_phys_level0 >= 0.0
            assert row.E_phys_all == row.E_phys_level0
            assert row.solver_iters > 0

    def test_run_steps(self, circle_config):
        sim = Simulation(circle_config, write_output=False)
        sim.run(steps=2)
        assert sim.hierarchy.n == 3

    def test_moving_object_remainder(self, make_config):
        cfg = make_config(embedding=dict(CIRCLE, velocity="-0.5, 0"), solver={"tol": "1e-13"})
        ledger = Simulation(cfg, write_output=False).run()
        assert any(row.R != 0.0 for row in ledger)
        assert ledger.max_relative_residual() <= 1e-9

    def test_source_power_recorded(self, make_config):
        cfg = make_config(initial={"kind": "zero"},
                          source={"center": "-1, 0", "eta": "0.25", "w": "10*pi", "sigma": "2/25"})
        ledger = Simulation(cfg, write_output=False).run()
        assert any(row.S != 0.0 for row in ledger)

    def test_amr_run(self, make_config):
        cfg = make_config(domain={"a1": "3", "a2": "3"}, grid={"nx": "32", "ny": "32"},
                          embedding=dict(CIRCLE, eps="0.2"),
                          amr={"enabled": "true", "tau_emb": "0.2", "tau_pml": "1e9", "tau_sol": "1e9",
                               "regrid_interval": "2"},
                          solver={"tol": "1e-13"})
        sim = Simulation(cfg, write_output=False)
        ledger = sim.run(steps=3)
        assert sim.hierarchy.finest_level == 1
        assert ledger.max_relative_residual() <= 1e-9
        assert len(ledger.rows[-1].level_residuals) == 2
        assert all(np.isfinite(row.level_residuals).all() for row in ledger)
        assert all(np.isfinite(row.E_phys_all) for row in ledger)
        assert ledger.rows[-1].E_phys_all != ledger.rows[-1].E_phys_level0

    def test_hard_moving_preset_with_refinement(self):
        cfg = load_preset("moving_circle_hard_moderate", environ={}, overrides={"grid.nx": "32", "grid.ny": "32"})
        sim = Simulation(cfg, write_output=False)
        ledger = sim.run(steps=2)
        h = sim.hierarchy
        assert isinstance(h.base.stepper, HardEmbeddedStepper)
        assert h.finest_level == 1
        assert all(isinstance(p.stepper, HardEmbeddedStepper) for p in h.levels[1])
        assert all(np.isfinite(row.E_embed) and np.isfinite(row.E_phys_all) for row in ledger)
        assert all(row.D >= 0.0 for row in ledger)


class TestOutput:
    def test_files(self, tmp_path, make_config):
        cfg = make_config(embedding=CIRCLE, output={"snapshot_interval": "0.1", "checkpoint_interval": "4"})
        sim = Simulation(cfg, output_dir=str(tmp_path))
        sim.run()
        sim.close()
        rows = read_energy_rows(str(tmp_path / "energy.csv"))
        assert [r["n"] for r in rows] == [2, 3, 4, 5]
        assert rows[-1]["E_embed"] == sim.ledger.rows[-1].E_embed
        first = read_snapshot(str(tmp_path / "snap_000000_L0.wsc"))
        assert first.t == 0.0
        assert np.array_equal(first.values, sim.initial_pressure(sim.grid))
        assert os.path.exists(tmp_path / "snap_000002_L0.wsc")
        assert os.path.exists(tmp_path / "snap_000004_L0.wsc")
        assert os.path.isdir(tmp_path / "checkpoint_000004")
        with open(tmp_path / "layout.csv") as fh:
            assert fh.read().splitlines() == ["step,level,i0,j0,i1,j1", "1,0,0,0,24,24"]

    def test_energy_interval(self, tmp_path, make_config):
        cfg = make_config(output={"energy_interval": "2"})
        sim = Simulation(cfg, output_dir=str(tmp_path))
        sim.run()
        sim.close()
        assert [r["n"] for r in read_energy_rows(str(tmp_path / "energy.csv"))] == [2, 4]

    def test_unwritable_directory(self, tmp_path, make_config):
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        sim = Simulation(make_config(), output_dir=str(blocker / "out"))
        with pytest.raises(OutputError) as exc_info:
            sim.run()
        assert exc_info.value.exit_code == 5


class TestCheckpoint:
    def test_restore_is_deterministic(self, tmp_path, circle_config):
        path = str(tmp_path / "ck")
        first = Simulation(circle_config, write_output=False)
        first.run(steps=2)
        first.checkpoint(path)
        first.run()

        second = Simulation(circle_config, write_output=False).restore(path)
        assert second.hierarchy.n == 3
        assert len(second.ledger) == 2
        second.run()
        assert np.array_equal(second.state.p_curr, first.state.p_curr)
        assert second.state.lam == first.state.lam
        assert second.ledger.rows[-1] == first.ledger.rows[-1]

    def test_restore_amr(self, tmp_path, make_config):
        cfg = make_config(domain={"a1": "3", "a2": "3"}, grid={"nx": "32", "ny": "32"},
                          embedding=dict(CIRCLE, eps="0.2"),
                          amr={"enabled": "true", "tau_emb": "0.2", "tau_pml": "1e9", "tau_sol": "1e9"})
        path = str(tmp_path / "ck")
        first = Simulation(cfg, write_output=False)
        first.run(steps=1)
        first.checkpoint(path)
        first.run(steps=1)
        second = Simulation(cfg, write_output=False).restore(path)
        second.run(steps=1)
        for a, b in zip(first.hierarchy.patches, second.hierarchy.patches):
            assert a.box == b.box
            assert np.array_equal(a.state.p_curr, b.state.p_curr)

    def test_restore_other_grid(self, tmp_path, make_config, circle_config):
        path = str(tmp_path / "ck")
        sim = Simulation(circle_config, write_output=False)
        sim.checkpoint(path)
        other = Simulation(make_config(grid={"nx": "32", "ny": "32"}), write_output=False)
        with pytest.raises(CheckpointError):
            other.restore(path)
