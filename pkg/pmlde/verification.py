"""Self-checks of the discrete structure and refinement studies.

Every check returns a ``CheckResult``; ``run_verification`` runs the whole
suite. ``quick=True`` shrinks grids and step counts for a fast smoke pass.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .amr import restrict
from .geometry import EmbeddingField
from .grid import (
    EdgeField,
    StaggeredGrid,
    div_minus_weighted,
    grad_plus,
    inner_cell,
    inner_edge,
    norm_cell_sq,
    sbp_residual,
)
from .integrators import (
    FourFieldState,
    FourFieldStepper,
    HardEmbeddedStepper,
    LeapfrogStepper,
    ModelParams,
    SoftEmbeddedStepper,
    WaveState,
    bootstrap_first_step,
    constraint_residual,
)
from .pml import PmlCoefficients, PmlLayout, identity_residuals, sample_pml
from .runconfig import parse_config
from .simulation import Simulation
from .solver import SolverOptions

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    value: float
    bound: float

    @property
    def passed(self):
        return math.isfinite(self.value) and self.value <= self.bound


@dataclass
class ConvergenceResult:
    """Successive differences of a refinement triple and the observed order."""

    kind: str
    parameters: tuple
    differences: tuple
    order: float


def gaussian(grid, center=(0.0, 0.0), width=5.0):
    x, y = grid.cell_centers()
    return np.exp(-width * ((x - center[0]) ** 2 + (y - center[1]) ** 2))


def _max_abs(values):
    if isinstance(values, EdgeField):
        return values.abs_max()
    return float(np.max(np.abs(values)))


# ── Operator and coefficient checks ──────────────────────────


def check_sbp(n=64, trials=100, seed=0):
    """Summation-by-parts residual relative to the size of its two terms."""
    rng = np.random.default_rng(seed)
    grid = StaggeredGrid.covering(-1.0, 1.0, -1.0, 1.0, n, n)
    worst = 0.0
    for _ in range(trials):
        omega = EdgeField(rng.uniform(0.1, 2.0, (n - 1, n)), rng.uniform(0.1, 2.0, (n, n - 1)))
        u = rng.standard_normal(grid.shape)
        v = EdgeField(rng.standard_normal((n - 1, n)), rng.standard_normal((n, n - 1)))
        scale = abs(inner_cell(div_minus_weighted(omega, v, grid), u, grid))
        scale += abs(inner_edge(v, grad_plus(u, grid), grid, weight=omega))
        worst = max(worst, abs(sbp_residual(omega, u, v, grid)) / scale)
    return CheckResult("sbp", worst, 1e-12)


def check_coefficient_identities(samples=20, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        layout = PmlLayout(*rng.uniform(0.5, 3.0, 4), *rng.uniform(0.0, 50.0, 2))
        xlo, xhi, ylo, yhi = layout.domain
        grid = StaggeredGrid.covering(xlo, xhi, ylo, yhi, 24, 24)
        coeffs = sample_pml(layout, grid)
        for sample in (coeffs.cell, coeffs.xedge, coeffs.yedge):
            worst = max(worst, max(identity_residuals(sample).values()))
    return CheckResult("coefficient identities", worst, 1e-13)


# ── Four-field scheme ────────────────────────────────────────


def _fourfield_setup(n, xi=(0.4, 0.9), tau=0.05, tol=1e-14):
    grid = StaggeredGrid.covering(-1.0, 1.0, -1.0, 1.0, n, n)
    coeffs = PmlCoefficients.uniform(grid, *xi)
    params = ModelParams(c=1.0, tau=tau)
    stepper = FourFieldStepper(grid, coeffs, params, SolverOptions(tol=tol))
    return grid, coeffs, params, stepper


def _phi_norm(state):
    return float(np.linalg.norm(state.pack()))


def check_constraint_preserved(n=16, steps=50):
    """Constraint residual stays at roundoff when it starts at zero."""
    grid, coeffs, params, stepper = _fourfield_setup(n)
    p = gaussian(grid, width=10.0)
    state = FourFieldState(p, grid.cell_zeros(), params.c * grad_plus(p, grid), grid.edge_zeros())
    worst = 0.0
    for _ in range(steps):
        state = stepper.step(state)
        r = constraint_residual(state, grid, params.c)
        worst = max(worst, float(np.linalg.norm(r.ravel())) / _phi_norm(state))
    return CheckResult("constraint preserved", worst, 1e-12)


def check_constraint_decay(n=16, steps=5, seed=1):
    """With uniform damping a nonzero constraint residual decays by the trapezoidal factor."""
    xi = (0.4, 0.9)
    grid, coeffs, params, stepper = _fourfield_setup(n, xi)
    rng = np.random.default_rng(seed)
    p = gaussian(grid, width=10.0)
    lam = EdgeField(rng.standard_normal((n - 1, n)), rng.standard_normal((n, n - 1)))
    state = FourFieldState(p, grid.cell_zeros(), params.c * grad_plus(p, grid), lam)
    a = xi[0] + xi[1]
    factor = (1.0 - 0.5 * a * params.tau) / (1.0 + 0.5 * a * params.tau)
    worst = 0.0
    r_old = constraint_residual(state, grid, params.c)
    for _ in range(steps):
        state = stepper.step(state)
        r_new = constraint_residual(state, grid, params.c)
        worst = max(worst, (r_new - factor * r_old).abs_max() / r_old.abs_max())
        r_old = r_new
    return CheckResult("constraint decay factor", worst, 1e-12)


def check_fourfield_leapfrog(n=32, steps=200):
    """Crank-Nicolson on four fields and the reduced scheme give the same pressure."""
    grid, coeffs, params, stepper = _fourfield_setup(n)
    reduced = LeapfrogStepper(grid, coeffs, params, SolverOptions(tol=1e-14))
    p0 = gaussian(grid, width=10.0)
    full = FourFieldState(p0, grid.cell_zeros(), params.c * grad_plus(p0, grid), grid.edge_zeros())
    first = stepper.step(full)
    state = WaveState(full.p, first.p, full.lam, first.lam, first.t, 1)
    full = first
    worst = 0.0
    for _ in range(steps - 1):
        full = stepper.step(full)
        state = reduced.step(state)
        worst = max(worst, _max_abs(full.p - state.p_curr) / _max_abs(full.p))
    return CheckResult("four-field / reduced equivalence", worst, 1e-10)


# ── Energy identities ────────────────────────────────────────

_IDENTITY_CASES = {
    "fixed": "[embedding]\nshape = none\n",
    "static_circle": "[embedding]\nshape = circle\ncenter = 0, 0\nradius = 0.5\neps = 0.2\n",
    "moving_circle": (
        "[embedding]\nshape = circle\ncenter = 0.3, 0\nradius = 0.5\neps = 0.2\nvelocity = -0.5, 0\n"
    ),
    "moving_star": (
        "[embedding]\nshape = star\ncenter = 0.3, 0\nr0 = 0.6\nr1 = 0.1\nlobes = 5\neps = 0.15\n"
        "velocity = -0.5, 0\n"
    ),
}


def identity_config(case, n=128, steps=100, tol=1e-12, bc="soft"):
    """Small source-free run for the per-step energy balance."""
    tau = 0.02
    text = (
        "[run]\nname = identity_" + case + "\n"
        "[domain]\na1 = 4\na2 = 4\nl1 = 1\nl2 = 1\n"
        f"[grid]\nnx = {n}\nny = {n}\n"
        f"[time]\ntau = {tau}\nt_end = {steps * tau}\n"
        f"[model]\nc = 1\nbc = {bc}\nbeta = 100\n"
        "[initial]\nkind = gaussian\ncenter = 2, 0\nwidth = 4\n"
        f"[solver]\ntol = {tol}\n"
        "[output]\nasync = false\n"
        + _IDENTITY_CASES[case]
    )
    return parse_config(text)


def check_energy_identity(case, n=128, steps=100):
    sim = Simulation(identity_config(case, n, steps), write_output=False)
    ledger = sim.run()
    return CheckResult(f"energy identity ({case})", ledger.max_relative_residual(), 1e-10)


def check_static_remainder(n=64, steps=40):
    """Static indicator: no remainder, and energy minus coupling work never grows."""
    sim = Simulation(identity_config("static_circle", n, steps), write_output=False)
    ledger = sim.run()
    worst = max(abs(row.R) / max(row.E_embed, 1e-300) for row in ledger)
    work = 0.0
    growth = 0.0
    previous = None
    for row in ledger:
        work += sim.params.tau * (row.K + row.S)
        adjusted = row.E_embed - work
        if previous is not None:
            growth = max(growth, (adjusted - previous) / max(abs(previous), 1e-300))
        previous = adjusted
    return [
        CheckResult("static remainder", worst, 1e-12),
        CheckResult("static energy decay", max(growth, 0.0), 1e-10),
    ]


# ── Degeneracy ───────────────────────────────────────────────


def check_degeneracy(n=32, steps=50):
    """Without an object the soft, hard and fixed-geometry steppers coincide."""
    layout = PmlLayout.with_default_strength(2.0, 2.0, 1.0, 1.0, 1.0)
    grid = StaggeredGrid.covering(*layout.domain, n, n)
    coeffs = sample_pml(layout, grid)
    params = ModelParams(c=1.0, tau=0.05)
    options = SolverOptions(tol=1e-12)
    unit = EmbeddingField.unit(grid)
    start = bootstrap_first_step(gaussian(grid, width=4.0), grid.cell_zeros(), unit, coeffs, params, grid)

    soft = SoftEmbeddedStepper(grid, coeffs, params, options)
    hard = HardEmbeddedStepper(grid, coeffs, params, options)
    fixed = LeapfrogStepper(grid, coeffs, params, options)
    s_soft = s_hard = s_fixed = start
    worst = 0.0
    for _ in range(steps):
        s_soft = soft.step(s_soft, unit)
        s_hard = hard.step(s_hard, unit)
        s_fixed = fixed.step(s_fixed)
        scale = max(_max_abs(s_fixed.p_curr), 1e-300)
        worst = max(
            worst,
            _max_abs(s_soft.p_curr - s_fixed.p_curr) / scale,
            _max_abs(s_hard.p_curr - s_fixed.p_curr) / scale,
        )
    return CheckResult("soft/hard/fixed degeneracy", worst, 1e-12)


# ── Refinement studies ───────────────────────────────────────


def _smooth_run(n, tau, t_end, half_width=4.0):
    grid = StaggeredGrid.covering(-half_width, half_width, -half_width, half_width, n, n)
    coeffs = PmlCoefficients.uniform(grid, 0.4, 0.9)
    params = ModelParams(c=1.0, tau=tau)
    stepper = LeapfrogStepper(grid, coeffs, params, SolverOptions(tol=1e-13))
    unit = EmbeddingField.unit(grid)
    state = bootstrap_first_step(gaussian(grid, width=2.0), grid.cell_zeros(), unit, coeffs, params, grid)
    for _ in range(int(round(t_end / tau)) - 1):
        state = stepper.step(state)
    return grid, state.p_curr


def _order(differences):
    d1, d2 = differences
    if d2 <= 0.0:
        return math.inf
    return math.log2(d1 / d2)


def convergence_in_tau(n=64, tau=0.1, t_end=1.0):
    """Richardson triple ``tau, tau/2, tau/4`` on a fixed grid."""
    taus = (tau, tau / 2.0, tau / 4.0)
    fields = [_smooth_run(n, t, t_end) for t in taus]
    grid = fields[0][0]
    diffs = tuple(
        math.sqrt(norm_cell_sq(fields[k][1] - fields[k + 1][1], grid)) for k in range(2)
    )
    return ConvergenceResult("tau", taus, diffs, _order(diffs))


def convergence_in_h(n=32, tau=None, t_end=1.0):
    """Richardson triple ``n, 2n, 4n`` at a fixed small step; fine fields are cell-averaged."""
    sizes = (n, 2 * n, 4 * n)
    tau = tau if tau is not None else 8.0 / (4 * n) / 4.0
    fields = [_smooth_run(size, tau, t_end) for size in sizes]
    coarse = fields[0][0]
    on_coarse = [
        fields[0][1],
        restrict(fields[1][1], 2),
        restrict(restrict(fields[2][1], 2), 2),
    ]
    diffs = tuple(math.sqrt(norm_cell_sq(on_coarse[k] - on_coarse[k + 1], coarse)) for k in range(2))
    return ConvergenceResult("h", sizes, diffs, _order(diffs))


# ── Interface trace ──────────────────────────────────────────


def interface_trace(eps, n=256, t_end=0.8):
    """Largest ``|p|`` on the circle ``psi = 1/2`` of a static sound-soft object."""
    text = (
        "[run]\nname = trace\n"
        "[domain]\na1 = 2.6\na2 = 2.6\nl1 = 0.6\nl2 = 0.6\n"
        f"[grid]\nnx = {n}\nny = {n}\n"
        f"[time]\ntau = 0.01\nt_end = {t_end}\n"
        "[model]\nc = 1\nbeta = 100\n"
        f"[embedding]\nshape = circle\ncenter = 0, 0\nradius = 0.5\neps = {eps}\n"
        "[initial]\nkind = gaussian\ncenter = 1.2, 0\nwidth = 20\n"
        "[output]\nasync = false\n"
    )
    sim = Simulation(parse_config(text), write_output=False)
    sim.run()
    grid = sim.grid
    theta = np.linspace(0.0, 2.0 * np.pi, 720, endpoint=False)
    x = 0.5 * np.cos(theta)
    y = 0.5 * np.sin(theta)
    # fractional cell indices of the sample points
    fi = (x - grid.x0) / grid.hx - 0.5
    fj = (y - grid.y0) / grid.hy - 0.5
    values = ndimage.map_coordinates(sim.state.p_curr, [fi, fj], order=1, mode="nearest")
    return float(np.max(np.abs(values)))


# ── Suite ────────────────────────────────────────────────────


def run_verification(quick=False):
    """Run every check; ``quick`` uses reduced sizes."""
    if quick:
        results = [
            check_sbp(n=32, trials=10),
            check_coefficient_identities(samples=5),
            check_constraint_preserved(n=8, steps=10),
            check_constraint_decay(n=8, steps=3),
            check_fourfield_leapfrog(n=8, steps=20),
            check_degeneracy(n=16, steps=10),
        ]
        results.extend(check_energy_identity(case, n=48, steps=10) for case in _IDENTITY_CASES)
        results.extend(check_static_remainder(n=48, steps=10))
    else:
        results = [
            check_sbp(),
            check_coefficient_identities(),
            check_constraint_preserved(),
            check_constraint_decay(),
            check_fourfield_leapfrog(),
            check_degeneracy(),
        ]
        results.extend(check_energy_identity(case) for case in _IDENTITY_CASES)
        results.extend(check_static_remainder())
    for result in results:
        logger.info("%-36s %.3e (bound %.1e) %s", result.name, result.value, result.bound,
                    "ok" if result.passed else "FAILED")
    return results
