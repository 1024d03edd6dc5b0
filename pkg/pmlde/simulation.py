"""Run driver: builds the per-run components and advances the hierarchy."""

import logging
import math
import os
from dataclasses import replace

import numpy as np

from .amr import LevelHierarchy
from .energy import (
    EnergyLedger,
    LedgerRow,
    dissipation_embedded,
    energy_embedded,
    energy_identity_residual,
    energy_physical,
    physical_region,
    pml_coupling,
    relative_residual,
    remainder_embedded,
    source_power,
)
from .exceptions import OutputError
from .geometry import EmbeddingField, sample_embedding
from .integrators import bootstrap_first_step, make_stepper
from .output import (
    AsyncWriter,
    read_checkpoint,
    write_checkpoint,
    write_energy_row,
    write_layout_rows,
    write_snapshot,
)
from .pml import sample_pml
from .runconfig import serialize_config
from .sources import averaged_source, eval_source

logger = logging.getLogger(__name__)

LEDGER_TAIL = 8


class Simulation:
    """One run of a ``RunConfig``.

    Usage:
        sim = Simulation(load_preset("fixed_circle", overrides={"time.t_end": "1"}))
        sim.run()
        sim.ledger.max_relative_residual()

    Components are built on first use:
        - sim.layout, sim.grid: PML layout and level-0 grid
        - sim.hierarchy: the level hierarchy (a single level without AMR)
        - sim.ledger: per-step energy balance
        - sim.writer: background output writer

    The hierarchy asks the simulation for per-grid coefficients, embeddings,
    sources, initial data and steppers.
    """

    def __init__(self, config, output_dir=None, write_output=True, solver=None):
        self.config = config
        self.params = config.model
        self.solver = solver or config.solver
        self.output_dir = output_dir or config.output.directory
        self.write_output = write_output

        self._layout = None
        self._grid = None
        self._hierarchy = None
        self._ledger = None
        self._writer = None
        self._coeffs = {}
        self._static_embeddings = {}
        self._regions = {}
        self._next_snapshot = 0.0
        self._layout_written = 0

    # ── Components ──

    @property
    def layout(self):
        if self._layout is None:
            self._layout = self.config.layout()
        return self._layout

    @property
    def grid(self):
        if self._grid is None:
            self._grid = self.config.base_grid()
        return self._grid

    @property
    def hierarchy(self):
        if self._hierarchy is None:
            self._hierarchy = self._new_hierarchy()
            self._hierarchy.initialize()
            self._write_initial_output()
        return self._hierarchy

    @property
    def ledger(self):
        if self._ledger is None:
            self._ledger = EnergyLedger()
        return self._ledger

    @property
    def writer(self):
        if self._writer is None:
            self._writer = AsyncWriter(enabled=self.config.output.async_writes)
        return self._writer

    @property
    def state(self):
        """Level-0 state."""
        return self.hierarchy.base.state

    def _new_hierarchy(self):
        amr = self.config.amr
        return LevelHierarchy(
            self.grid,
            self,
            thresholds=amr.thresholds,
            max_level=amr.max_level if amr.enabled else 0,
            workers=amr.workers,
        )

    # ── Per-grid physics ──

    def coefficients(self, grid):
        if grid not in self._coeffs:
            self._coeffs[grid] = sample_pml(self.layout, grid)
        return self._coeffs[grid]

    def embedding(self, grid, t):
        emb = self.config.embedding
        if emb.shape is None:
            return EmbeddingField.unit(grid, emb.eps, t)
        if emb.motion.is_static:
            if grid not in self._static_embeddings:
                self._static_embeddings[grid] = sample_embedding(emb.shape, emb.motion, grid, 0.0, emb.eps,
                                                                 self.layout)
            return replace(self._static_embeddings[grid], time=t)
        return sample_embedding(emb.shape, emb.motion, grid, t, emb.eps, self.layout)

    def source(self, grid, t):
        """Three-level source average for the step leaving ``t``."""
        spec = self.config.source
        if spec is None:
            return None
        tau = self.params.tau
        return averaged_source(spec, grid, t - tau, t, t + tau, self.params.c)

    def initial_pressure(self, grid):
        init = self.config.initial
        if init.kind == "zero":
            return grid.cell_zeros()
        x, y = grid.cell_centers()
        cx, cy = init.center
        return np.exp(-init.width * ((x - cx) ** 2 + (y - cy) ** 2))

    def initial_state(self, grid):
        p0 = self.initial_pressure(grid)
        f0 = None
        if self.config.source is not None:
            f0 = eval_source(self.config.source, grid, 0.0, self.params.c)
        return bootstrap_first_step(
            p0, grid.cell_zeros(), self.embedding(grid, 0.0), self.coefficients(grid), self.params, grid, f0
        )

    def stepper(self, grid, coeffs):
        return make_stepper(grid, coeffs, self.params, self.solver, motion=self.config.embedding.motion)

    def region(self, grid):
        if grid not in self._regions:
            self._regions[grid] = physical_region(grid, self.layout)
        return self._regions[grid]

    # ── Stepping ──

    def step(self):
        """Advance one step and record its ledger row."""
        h = self.hierarchy
        if h.n > 1 and h.due_for_regrid(h.n) and h.regrid():
            self._write_layout()
        before = [[(patch.state, patch.emb) for patch in patches] for patches in h.levels]
        h.advance()
        row = self._ledger_row(before)
        self.ledger.append(row)
        self._write_step_output(row)
        return row

    def run(self, steps=None):
        """Step to ``t_end`` (or ``steps`` more steps); returns the ledger."""
        target = self.config.time.steps if steps is None else self.hierarchy.n + steps
        logger.info("run %s: %d steps on %dx%d", self.config.name, target, self.grid.nx, self.grid.ny)
        try:
            while self.hierarchy.n < target:
                self.step()
        finally:
            if self._writer is not None:
                self._writer.flush()
        logger.info("run %s finished at t=%g", self.config.name, self.hierarchy.t)
        return self.ledger

    def close(self):
        if self._writer is not None:
            self._writer.close()

    def _ledger_row(self, before):
        """Balance of the step just taken; ``before`` holds each patch's ``(state, emb)`` at its start."""
        h = self.hierarchy
        params = self.params
        level_terms = []
        for level, patches in enumerate(h.levels):
            terms = [self._balance(patch, *before[level][i], h.solved_states[level][i])
                     for i, patch in enumerate(patches)]
            level_terms.append({key: math.fsum(t[key] for t in terms) for key in terms[0]})
        # Level 0 is one patch without ghosts: its own solve closes the identity exactly
        base = level_terms[0]
        after = h.solved_states[0][0]
        e_phys0 = energy_physical((before[0][0][0].p_curr, after.p_curr), h.base.grid, h.base.emb, params,
                                  self.region(h.base.grid))
        return LedgerRow(
            n=after.n,
            t=after.t,
            E_embed=base["e_next"],
            D=base["D"],
            R=base["R"],
            residual=base["residual"],
            E_phys_level0=e_phys0,
            E_phys_all=self._composite_physical_energy(e_phys0),
            solver_iters=h.last_iterations(),
            S=base["S"],
            K=base["K"],
            relative_residual=relative_residual(base["residual"], params.tau, base["e_prev"], base["e_next"]),
            level_residuals=tuple(
                relative_residual(t["residual"], params.tau, t["e_prev"], t["e_next"]) for t in level_terms
            ),
        )

    def _balance(self, patch, before, emb_prev, after):
        grid, coeffs, params = patch.grid, patch.coeffs, self.params
        emb_next = patch.emb
        p_triple = (before.p_prev, before.p_curr, after.p_curr)
        lam_triple = (before.lam_prev, before.lam, after.lam)
        terms = {
            "e_prev": energy_embedded(p_triple[:2], lam_triple[:2], emb_prev, coeffs, params, grid),
            "e_next": energy_embedded(p_triple[1:], lam_triple[1:], emb_next, coeffs, params, grid),
            "D": dissipation_embedded(p_triple, lam_triple, emb_next, coeffs, params, grid),
            "R": remainder_embedded(p_triple[:2], lam_triple[:2], emb_prev, emb_next, coeffs, params, grid),
            "S": source_power(self.source(grid, before.t), p_triple, emb_next, coeffs, params, grid),
            "K": pml_coupling(p_triple, lam_triple, emb_next, coeffs, params, grid),
        }
        terms["residual"] = energy_identity_residual(
            terms["e_prev"], terms["e_next"], params.tau, terms["D"], terms["R"], terms["S"], terms["K"]
        )
        return terms

    def _composite_physical_energy(self, e_phys0):
        h = self.hierarchy
        if len(h.levels) == 1:
            return e_phys0
        p_prev = h.composites("p_prev")
        p_curr = h.composites("p_curr")
        total = []
        for level, mask in enumerate(h.exclusive_masks()):
            grid = h.grids[level]
            emb = self.embedding(grid, h.t)
            total.append(energy_physical((p_prev[level], p_curr[level]), grid, emb, self.params,
                                         self.region(grid), cell_mask=mask))
        return math.fsum(total)

    # ── Output ──

    def _path(self, name):
        return os.path.join(self.output_dir, name)

    def _make_output_dir(self):
        try:
            os.makedirs(self.output_dir, exist_ok=True)
        except OSError as exc:
            raise OutputError(f"cannot create output directory: {exc.strerror}", self.output_dir) from exc

    def _write_initial_output(self):
        if not self.write_output:
            return
        self._make_output_dir()
        self._write_layout()
        if self.config.output.snapshot_interval > 0:
            base = self._hierarchy.base
            self.writer.submit(write_snapshot, self._path("snap_000000_L0.wsc"), base.state.p_prev.copy(),
                               base.grid, 0.0, 0, "p")
            self._next_snapshot = self.config.output.snapshot_interval

    def _write_layout(self):
        if not self.write_output:
            return
        rows = self.hierarchy.layout_log[self._layout_written:]
        self._layout_written = len(self.hierarchy.layout_log)
        if rows:
            self.writer.submit(write_layout_rows, list(rows), self._path("layout.csv"))

    def _write_step_output(self, row):
        if not self.write_output:
            return
        out = self.config.output
        h = self.hierarchy
        if out.energy_interval and row.n % out.energy_interval == 0:
            self.writer.submit(write_energy_row, row, self._path("energy.csv"))
        tolerance = 1e-9 * self.params.tau
        if out.snapshot_interval > 0 and h.t >= self._next_snapshot - tolerance:
            for level, values in enumerate(h.composites("p_curr")):
                name = f"snap_{h.n:06d}_L{level}.wsc"
                self.writer.submit(write_snapshot, self._path(name), values, h.grids[level], h.t, h.n, "p")
            while self._next_snapshot <= h.t + tolerance:
                self._next_snapshot += out.snapshot_interval
        if out.checkpoint_interval and h.n % out.checkpoint_interval == 0:
            self.checkpoint(self._path(f"checkpoint_{h.n:06d}"))

    # ── Checkpoints ──

    def checkpoint(self, path):
        """Write the full run state; waits for pending output first."""
        h = self.hierarchy
        if self._writer is not None:
            self._writer.flush()
        extra = {"config": serialize_config(self.config), "next_snapshot": self._next_snapshot,
                 "layout_written": self._layout_written}
        write_checkpoint(path, self.grid, h.t, h.n, h.patch_records(), self.ledger.tail(LEDGER_TAIL), extra)

    def restore(self, path):
        """Replace the run state by a checkpoint taken with the same grid."""
        manifest, records = read_checkpoint(path, grid=self.grid)
        if self.write_output:
            self._make_output_dir()
        hierarchy = self._new_hierarchy()
        hierarchy.load_records(records, manifest["t"], manifest["n"])
        hierarchy.layout_log = hierarchy.layout_rows()
        self._hierarchy = hierarchy
        self._layout_written = len(hierarchy.layout_log)
        self._ledger = EnergyLedger(LedgerRow(**row) for row in manifest["ledger_tail"])
        self._next_snapshot = manifest["extra"].get("next_snapshot", 0.0)
        return self
