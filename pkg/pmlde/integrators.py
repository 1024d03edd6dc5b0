"""Time integrators for the PML wave system.

* ``FourFieldStepper``: Crank-Nicolson on ``(p, q, chi, lambda)``, fixed geometry.
* ``LeapfrogStepper``: the reduced three-level scheme on ``(p, lambda)``.
* ``SoftEmbeddedStepper`` / ``HardEmbeddedStepper``: the three-level scheme
  with a diffuse-interface object (sound-soft penalty or zero normal
  acceleration Neumann penalty).

The three-level steppers eliminate ``lambda^{n+1}`` edge by edge so each step
is a single implicit solve for ``p^{n+1}``.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from .base import BaseStepper
from .exceptions import ConfigValidationError, UnsupportedMotion
from .geometry import EmbeddingField, check_support
from .grid import (
    EdgeField,
    centered_gradient,
    div_minus,
    div_minus_weighted,
    grad_plus,
    laplace_weighted,
)
from .solver import LinearOperator

logger = logging.getLogger(__name__)

SOFT = "soft"
HARD = "hard"


@dataclass(frozen=True)
class ModelParams:
    """Wave speed, time step and the object penalty parameters."""

    c: float
    tau: float
    eta_d: float = 1e-2
    alpha: float = 10.0
    beta: float = 100.0
    psi_hat: float = 0.05
    eta_n: float = 1e-2
    bc: str = SOFT

    def __post_init__(self):
        checks = [
            ("c", self.c > 0),
            ("tau", self.tau > 0),
            ("eta_d", self.eta_d > 0),
            ("alpha", self.alpha >= 0),
            ("beta", self.beta > 0),
            ("psi_hat", 0 < self.psi_hat < 1),
            ("eta_n", self.eta_n > 0),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigValidationError(f"model.{name} out of range", invariant=f"model.{name}")
        if self.bc not in (SOFT, HARD):
            raise ConfigValidationError(f"model.bc must be '{SOFT}' or '{HARD}'", invariant="model.bc")


@dataclass
class WaveState:
    """Pressure at two time levels and the auxiliary edge vector at the same levels."""

    p_prev: np.ndarray
    p_curr: np.ndarray
    lam_prev: EdgeField
    lam: EdgeField
    t: float = 0.0
    n: int = 0

    @classmethod
    def zeros(cls, grid, t=0.0, n=0):
        return cls(grid.cell_zeros(), grid.cell_zeros(), grid.edge_zeros(), grid.edge_zeros(), t, n)

    def copy(self):
        return WaveState(
            self.p_prev.copy(), self.p_curr.copy(), self.lam_prev.copy(), self.lam.copy(), self.t, self.n
        )

    def is_finite(self):
        return bool(
            np.all(np.isfinite(self.p_prev))
            and np.all(np.isfinite(self.p_curr))
            and self.lam_prev.is_finite()
            and self.lam.is_finite()
        )


@dataclass
class FourFieldState:
    p: np.ndarray
    q: np.ndarray
    chi: EdgeField
    lam: EdgeField
    t: float = 0.0
    n: int = 0

    @classmethod
    def zeros(cls, grid, t=0.0, n=0):
        return cls(grid.cell_zeros(), grid.cell_zeros(), grid.edge_zeros(), grid.edge_zeros(), t, n)

    def pack(self):
        return np.concatenate([self.p.ravel(), self.q.ravel(), self.chi.ravel(), self.lam.ravel()])

    @classmethod
    def unpack(cls, flat, grid, t=0.0, n=0):
        nc = grid.nx * grid.ny
        ne = (grid.nx - 1) * grid.ny + grid.nx * (grid.ny - 1)
        p = flat[:nc].reshape(grid.shape)
        q = flat[nc:2 * nc].reshape(grid.shape)
        chi = EdgeField.unravel(flat[2 * nc:2 * nc + ne], grid)
        lam = EdgeField.unravel(flat[2 * nc + ne:], grid)
        return cls(p, q, chi, lam, t, n)


def constraint_residual(state, grid, c):
    """``chi - c grad p - lambda``; stays zero under the four-field scheme."""
    return state.chi - c * grad_plus(state.p, grid) - state.lam


# ── Four-field Crank-Nicolson ────────────────────────────────


class FourFieldStepper(BaseStepper):
    """Monolithic Crank-Nicolson step of the first-order PML system."""

    def _rate(self, state):
        coeffs, grid, c = self.coeffs, self.grid, self.c
        g1 = coeffs.edge_gamma1
        return FourFieldState(
            state.q - coeffs.a * state.p,
            -coeffs.b * state.p + c * div_minus(state.chi, grid),
            c * grad_plus(state.q, grid) - 2.0 * g1 * state.chi + g1 * state.lam,
            -coeffs.edge_gamma1_tilde * state.lam + coeffs.edge_gamma2 * state.chi,
        )

    def step(self, state, f_mid=None):
        grid, tau = self.grid, self.tau
        half = 0.5 * tau

        def apply(flat):
            phi = FourFieldState.unpack(flat, grid)
            return flat - half * self._rate(phi).pack()

        current = state.pack()
        rhs = current + half * self._rate(state).pack()
        if f_mid is not None:
            nc = grid.nx * grid.ny
            rhs[nc:2 * nc] += tau * f_mid.ravel()
        op = LinearOperator(apply, current.shape, symmetric=False, name="fourfield")
        saved = self.solver
        if saved.method is None:
            self.solver = replace(saved, method="gmres")
        try:
            flat = self._solve(op, rhs, x0=current, diagonal=np.ones_like(current))
        finally:
            self.solver = saved
        return FourFieldState.unpack(flat, grid, state.t + tau, state.n + 1)


# ── Three-level schemes ──────────────────────────────────────


class SoftEmbeddedStepper(BaseStepper):
    """Sound-soft diffuse-interface scheme; with ``psi == 1`` it is the fixed-geometry leapfrog."""

    bc = SOFT

    def __init__(self, grid, coeffs, params, solver=None):
        super().__init__(grid, coeffs, params, solver)
        tau, c = params.tau, params.c
        g1 = coeffs.edge_gamma1
        den = 1.0 + 0.5 * tau * g1
        self._lam_decay = (1.0 - 0.5 * tau * g1) / den
        self._lam_gain = (0.5 * c * tau) * coeffs.edge_gamma2 / den
        self._stiffness = c * (c + self._lam_gain)

    def update_lambda(self, lam, p_curr, p_next):
        """Trapezoidal auxiliary update, exact per edge."""
        grid = self.grid
        return self._lam_decay * lam + self._lam_gain * (grad_plus(p_next, grid) + grad_plus(p_curr, grid))

    def _extra_diagonal(self, emb):
        p = self.params
        return emb.w / (4.0 * p.eta_d) + (1.0 - emb.psi_cell) * (p.alpha / (2.0 * p.tau) + p.beta)

    def _extra_rhs(self, emb, p_prev, p_curr):
        p = self.params
        return (
            -(emb.w / p.eta_d) * (2.0 * p_curr + p_prev) / 4.0
            + (1.0 - emb.psi_cell) * p.alpha * p_prev / (2.0 * p.tau)
        )

    def _advection(self, emb):
        return None

    def step(self, state, emb_next, f=None, frozen=None):
        """Advance ``state`` to ``t + tau``.

        ``f`` is the time-averaged source ``(f^{n+1} + 2 f^n + f^{n-1}) / 4``.
        ``frozen`` fixes ghost cells, see ``BaseStepper._solve``.
        """
        check_support(emb_next, self.coeffs)
        grid, tau, c = self.grid, self.tau, self.c
        a, b = self.coeffs.a, self.coeffs.b
        psi, psie = emb_next.psi_cell, emb_next.psi_edge
        p, pm = state.p_curr, state.p_prev
        lam, lamm = state.lam, state.lam_prev

        diag = psi / tau**2 + a * psi / (2.0 * tau) + b * psi / 4.0 + self._extra_diagonal(emb_next)
        omega = psie * self._stiffness
        advection = self._advection(emb_next)

        rhs = (
            psi * (2.0 * p - pm) / tau**2
            + a * psi * pm / (2.0 * tau)
            - b * psi * (2.0 * p + pm) / 4.0
            + self._extra_rhs(emb_next, pm, p)
            + 0.25 * c * c * laplace_weighted(psie, 2.0 * p + pm, grid)
            + 0.25 * c * div_minus_weighted(
                psie, self._lam_decay * lam + self._lam_gain * grad_plus(p, grid) + 2.0 * lam + lamm, grid
            )
        )
        if f is not None:
            rhs = rhs + psi * f

        if advection is None:

            def apply(u):
                return diag * u - 0.25 * laplace_weighted(omega, u, grid)

            symmetric = True
        else:
            kappa, gx, gy = advection

            def transport(u):
                ux, uy = centered_gradient(u, grid)
                return kappa * (gx * ux + gy * uy)

            def apply(u):
                return diag * u - 0.25 * laplace_weighted(omega, u, grid) - 0.25 * transport(u)

            rhs = rhs + 0.25 * transport(2.0 * p + pm)
            symmetric = False

        diagonal = diag + 0.25 * _laplace_diagonal(omega, grid)
        op = LinearOperator(apply, grid.shape, symmetric=symmetric, name=f"{self.bc}-step")
        p_next = self._solve(op, rhs, x0=2.0 * p - pm, diagonal=diagonal, frozen=frozen)
        lam_next = self.update_lambda(lam, p, p_next)
        logger.debug("step %d -> %d: %d iterations", state.n, state.n + 1, self.last_report.iterations)
        return WaveState(p, p_next, lam, lam_next, state.t + tau, state.n + 1)


class HardEmbeddedStepper(SoftEmbeddedStepper):
    """Zero-normal-acceleration scheme with Neumann penalty and masked interior damping."""

    bc = HARD

    def __init__(self, grid, coeffs, params, solver=None, motion=None):
        if motion is not None and motion.is_accelerated:
            raise UnsupportedMotion("the hard boundary treatment needs zero acceleration")
        super().__init__(grid, coeffs, params, solver)

    def _interior(self, emb):
        return (emb.psi_cell < self.params.psi_hat).astype(float)

    def _extra_diagonal(self, emb):
        p = self.params
        return self._interior(emb) * (p.alpha / (2.0 * p.tau) + p.beta)

    def _extra_rhs(self, emb, p_prev, p_curr):
        p = self.params
        return self._interior(emb) * p.alpha * p_prev / (2.0 * p.tau)

    def _advection(self, emb):
        kappa = (1.0 - emb.psi_cell) / self.params.eta_n
        if not np.any(kappa):
            return None
        gx, gy = centered_gradient(emb.psi_cell, self.grid)
        return kappa, gx, gy


class LeapfrogStepper(SoftEmbeddedStepper):
    """Fixed-geometry reduced scheme: the embedded scheme without an object."""

    def __init__(self, grid, coeffs, params, solver=None):
        super().__init__(grid, coeffs, params, solver)
        self._unit = EmbeddingField.unit(grid)

    def step(self, state, f=None, frozen=None):
        return super().step(state, self._unit, f=f, frozen=frozen)


def _laplace_diagonal(omega, grid):
    """Diagonal of ``-div(omega grad .)``."""
    diag = np.zeros(grid.shape)
    wx = omega.x / grid.hx**2
    wy = omega.y / grid.hy**2
    diag[:-1, :] += wx
    diag[1:, :] += wx
    diag[:, :-1] += wy
    diag[:, 1:] += wy
    return diag


def make_stepper(grid, coeffs, params, solver=None, motion=None):
    """Embedded stepper matching ``params.bc``."""
    if params.bc == HARD:
        return HardEmbeddedStepper(grid, coeffs, params, solver, motion=motion)
    return SoftEmbeddedStepper(grid, coeffs, params, solver)


# ── Operation-level entry points ─────────────────────────────


def cn_step_fourfield(state, coeffs, params, grid, solver=None, f_mid=None):
    return FourFieldStepper(grid, coeffs, params, solver).step(state, f_mid)


def leapfrog_step_fixed(state, coeffs, params, grid, solver=None, f=None):
    return LeapfrogStepper(grid, coeffs, params, solver).step(state, f)


def pml_de_step_soft(state, emb_next, coeffs, params, grid, f=None, solver=None):
    return SoftEmbeddedStepper(grid, coeffs, params, solver).step(state, emb_next, f)


def pml_de_step_hard(state, emb_next, coeffs, params, grid, f=None, solver=None, motion=None):
    return HardEmbeddedStepper(grid, coeffs, params, solver, motion=motion).step(state, emb_next, f)


def reconstruct_q_chi(p_pair, lam_pair, coeffs, params, grid, f_mid=None):
    """Recover ``(q, chi)`` at both levels from two consecutive reduced-scheme levels.

    Returns ``((q_n, q_n1), (chi_n, chi_n1))``.
    """
    p0, p1 = p_pair
    lam0, lam1 = lam_pair
    tau, c = params.tau, params.c
    p_mid = 0.5 * (p0 + p1)
    q_mid = (p1 - p0) / tau + coeffs.a * p_mid
    forcing = (
        -coeffs.b * p_mid
        + c * c * laplace_weighted(1.0, p_mid, grid)
        + c * div_minus(0.5 * (lam0 + lam1), grid)
    )
    if f_mid is not None:
        forcing = forcing + f_mid
    q0 = q_mid - 0.5 * tau * forcing
    q1 = q_mid + 0.5 * tau * forcing
    chi0 = c * grad_plus(p0, grid) + lam0
    chi1 = c * grad_plus(p1, grid) + lam1
    return (q0, q1), (chi0, chi1)


def bootstrap_first_step(p0, p1_t, emb, coeffs, params, grid, f0=None):
    """Second-order Taylor start producing the state at step 1 from ``p(0)`` and ``p_t(0)``."""
    tau, c = params.tau, params.c
    accel = c * c * laplace_weighted(1.0, p0, grid) - coeffs.a * p1_t - coeffs.b * p0
    if f0 is not None:
        accel = accel + f0
    p1 = p0 + tau * p1_t + 0.5 * tau * tau * emb.psi_cell * accel
    stepper = SoftEmbeddedStepper(grid, coeffs, params)
    lam0 = grid.edge_zeros()
    lam1 = stepper.update_lambda(lam0, p0, p1)
    return WaveState(p0.copy(), p1, lam0, lam1, tau, 1)
