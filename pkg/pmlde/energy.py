"""Discrete energies, dissipations and balance residuals.

Notation for the three-level schemes: ``p_pair = (p^n, p^{n+1})``,
``p_triple = (p^{n-1}, p^n, p^{n+1})`` and likewise for ``lambda``.
The embedded balance per step reads

    (E^{n+1/2} - E^{n-1/2}) / tau = -D + R + S + K

with ``S`` the source power and ``K`` the coupling through edges where the
damping trace differs between the two adjacent cells (zero outside the PML).
"""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import config
from .grid import EdgeField, grad_plus, inner_cell, inner_edge, norm_cell_sq, norm_edge_sq
from .integrators import HARD, FourFieldState

logger = logging.getLogger(__name__)


# ── Four-field scheme ────────────────────────────────────────


def energy_fourfield(state, coeffs, grid):
    """``(|q|^2 + |chi|^2 + |p|_b^2 + |lambda|^2_{gamma1/a}) / 2``."""
    return 0.5 * math.fsum(
        [
            norm_cell_sq(state.q, grid),
            norm_edge_sq(state.chi, grid),
            norm_cell_sq(state.p, grid, coeffs.b),
            norm_edge_sq(state.lam, grid, coeffs.edge_ainv_gamma1),
        ]
    )


def dissipation_fourfield(mid, coeffs, grid):
    """Dissipation evaluated on the midpoint (time-averaged) four-field state."""
    g1 = coeffs.edge_gamma1
    return math.fsum(
        [
            norm_cell_sq(mid.p, grid, coeffs.a * coeffs.b),
            norm_edge_sq(mid.chi, grid, g1 + coeffs.edge_ainv_gamma1 * g1),
            norm_edge_sq(mid.chi - mid.lam, grid, coeffs.edge_ainv_b),
        ]
    )


def midpoint(s0, s1):
    """Average of two four-field states."""
    return FourFieldState(
        0.5 * (s0.p + s1.p), 0.5 * (s0.q + s1.q), 0.5 * (s0.chi + s1.chi), 0.5 * (s0.lam + s1.lam)
    )


# ── Three-level schemes ──────────────────────────────────────


def _kinetic(p_pair, coeffs, tau):
    p0, p1 = p_pair
    return (p1 - p0) / tau + coeffs.a * 0.5 * (p0 + p1)


def _chi_mid(p_pair, lam_pair, c, grid):
    p0, p1 = p_pair
    lam0, lam1 = lam_pair
    return c * grad_plus(0.5 * (p0 + p1), grid) + 0.5 * (lam0 + lam1)


def _penalty(emb, params):
    if params.bc == HARD:
        return np.zeros_like(emb.w)
    return emb.w / params.eta_d


def _interior(emb, params):
    if params.bc == HARD:
        return (emb.psi_cell < params.psi_hat).astype(float)
    return 1.0 - emb.psi_cell


def energy_leapfrog_staggered(p_pair, lam_pair, coeffs, params, grid):
    """Staggered energy of the reduced scheme at ``n + 1/2``."""
    p0, p1 = p_pair
    lam0, lam1 = lam_pair
    return 0.5 * math.fsum(
        [
            norm_cell_sq(_kinetic(p_pair, coeffs, params.tau), grid),
            norm_edge_sq(_chi_mid(p_pair, lam_pair, params.c, grid), grid),
            norm_cell_sq(0.5 * (p0 + p1), grid, coeffs.b),
            norm_edge_sq(0.5 * (lam0 + lam1), grid, coeffs.edge_ainv_gamma1),
        ]
    )


def dissipation_leapfrog(p_triple, lam_triple, coeffs, params, grid):
    """Dissipation of the reduced scheme at step ``n``."""
    pm, p, pp = p_triple
    lm, lam, lp = lam_triple
    g1 = coeffs.edge_gamma1
    u = 0.25 * (pp + 2.0 * p + pm)
    lam_avg = 0.25 * (lp + 2.0 * lam + lm)
    grad_u = grad_plus(u, grid)
    chi_avg = params.c * grad_u + lam_avg
    return math.fsum(
        [
            norm_cell_sq(u, grid, coeffs.a * coeffs.b),
            norm_edge_sq(chi_avg, grid, g1 + coeffs.edge_ainv_gamma1 * g1),
            params.c**2 * norm_edge_sq(grad_u, grid, coeffs.edge_ainv_b),
        ]
    )


def energy_embedded(p_pair, lam_pair, emb_next, coeffs, params, grid):
    """Weighted staggered energy at ``n + 1/2`` with the indicator at ``t^{n+1}``."""
    p0, p1 = p_pair
    lam0, lam1 = lam_pair
    psi, psie = emb_next.psi_cell, emb_next.psi_edge
    theta = coeffs.b * psi + _penalty(emb_next, params)
    p_mid = 0.5 * (p0 + p1)
    return 0.5 * math.fsum(
        [
            norm_cell_sq(_kinetic(p_pair, coeffs, params.tau), grid, psi),
            norm_edge_sq(_chi_mid(p_pair, lam_pair, params.c, grid), grid, psie),
            norm_edge_sq(0.5 * (lam0 + lam1), grid, psie * coeffs.edge_ainv_gamma1),
            norm_cell_sq(p_mid, grid, theta),
            inner_cell(params.beta * _interior(emb_next, params), 0.5 * (p0 * p0 + p1 * p1), grid),
        ]
    )


def dissipation_embedded(p_triple, lam_triple, emb_next, coeffs, params, grid):
    """Nonnegative dissipation of the embedded scheme at step ``n``."""
    pm, p, pp = p_triple
    lm, lam, lp = lam_triple
    tau, c = params.tau, params.c
    psie = emb_next.psi_edge
    g1 = coeffs.edge_gamma1
    theta = coeffs.b * emb_next.psi_cell + _penalty(emb_next, params)
    u = 0.25 * (pp + 2.0 * p + pm)
    d2t = (pp - pm) / (2.0 * tau)
    grad_u = grad_plus(u, grid)
    chi_avg = c * grad_u + 0.25 * (lp + 2.0 * lam + lm)
    return math.fsum(
        [
            norm_cell_sq(u, grid, coeffs.a * theta),
            norm_cell_sq(d2t, grid, (params.alpha + tau * params.beta) * _interior(emb_next, params)),
            norm_edge_sq(chi_avg, grid, psie * (g1 + coeffs.edge_ainv_gamma1 * g1)),
            c * c * norm_edge_sq(grad_u, grid, psie * coeffs.edge_ainv_b),
        ]
    )


def remainder_embedded(p_pair_prev, lam_pair_prev, emb_prev, emb_next, coeffs, params, grid):
    """Energy exchange caused by the moving indicator between ``t^n`` and ``t^{n+1}``.

    ``p_pair_prev = (p^{n-1}, p^n)``; ``emb_prev`` is sampled at ``t^n``.
    Vanishes identically for a static indicator.
    """
    tau = params.tau
    p0, p1 = p_pair_prev
    lam0, lam1 = lam_pair_prev
    dpsi = (emb_next.psi_cell - emb_prev.psi_cell) / tau
    dpsie = (emb_next.psi_edge - emb_prev.psi_edge) / tau
    dtheta = coeffs.b * dpsi + (_penalty(emb_next, params) - _penalty(emb_prev, params)) / tau
    dinterior = (_interior(emb_next, params) - _interior(emb_prev, params)) / tau
    q = _kinetic(p_pair_prev, coeffs, tau)
    chi = _chi_mid(p_pair_prev, lam_pair_prev, params.c, grid)
    lam_mid = 0.5 * (lam0 + lam1)
    p_mid = 0.5 * (p0 + p1)
    return 0.5 * math.fsum(
        [
            inner_cell(q, q, grid, dpsi),
            inner_edge(chi, chi, grid, dpsie),
            inner_edge(lam_mid, lam_mid, grid, dpsie * coeffs.edge_ainv_gamma1),
            inner_cell(p_mid, p_mid, grid, dtheta),
            inner_cell(params.beta * dinterior, 0.5 * (p0 * p0 + p1 * p1), grid),
        ]
    )


def source_power(f_avg, p_triple, emb_next, coeffs, params, grid):
    """Work done by the source, ``(psi A^2 f, A^- q)``."""
    if f_avg is None:
        return 0.0
    pm, p, pp = p_triple
    rate = (pp - pm) / (2.0 * params.tau) + coeffs.a * 0.25 * (pp + 2.0 * p + pm)
    return inner_cell(emb_next.psi_cell * f_avg, rate, grid)


def pml_coupling(p_triple, lam_triple, emb_next, coeffs, params, grid):
    """Exchange through edges whose two cells carry different damping traces."""
    pm, p, pp = p_triple
    lm, lam, lp = lam_triple
    c = params.c
    u = 0.25 * (pp + 2.0 * p + pm)
    grad_u = grad_plus(u, grid)
    chi_avg = c * grad_u + 0.25 * (lp + 2.0 * lam + lm)
    mismatch = coeffs.edge_a * grad_u - grad_plus(coeffs.a * u, grid)
    return c * inner_edge(chi_avg, mismatch, grid, emb_next.psi_edge)


def energy_identity_residual(e_prev, e_next, tau, dissipation, remainder, source=0.0, coupling=0.0):
    """Balance defect ``D^- E + D - R - S - K``."""
    return math.fsum([e_next / tau, -e_prev / tau, dissipation, -remainder, -source, -coupling])


def relative_residual(residual, tau, e_prev, e_next):
    scale = max(abs(e_prev), abs(e_next))
    return abs(residual) * tau / scale if scale > 0 else abs(residual) * tau


# ── Physical energy ──────────────────────────────────────────


def physical_region(grid, layout):
    """Boolean masks ``(cells, (x_edges, y_edges))`` of the physical box."""
    return (
        layout.in_physical(*grid.cell_centers()),
        (layout.in_physical(*grid.x_edges()), layout.in_physical(*grid.y_edges())),
    )


def energy_physical(p_pair, grid, emb, params, region=None, threshold=config.PHYS_ENERGY_PSI_THRESHOLD,
                    cell_mask=None):
    """Kinetic plus gradient energy of the pressure outside the object.

    Counts cells and edges with ``psi >= threshold`` inside ``region`` (see
    ``physical_region``; the whole grid when omitted).  ``cell_mask`` further
    drops cells, and the edges touching them, e.g. those covered by a finer level.
    """
    p0, p1 = p_pair
    cells = emb.psi_cell >= threshold
    xedges = emb.psi_xedge >= threshold
    yedges = emb.psi_yedge >= threshold
    if region is not None:
        cells = cells & region[0]
        xedges = xedges & region[1][0]
        yedges = yedges & region[1][1]
    if cell_mask is not None:
        cells = cells & cell_mask
        xedges = xedges & cell_mask[1:, :] & cell_mask[:-1, :]
        yedges = yedges & cell_mask[:, 1:] & cell_mask[:, :-1]
    dtp = (p1 - p0) / params.tau
    grad_mid = grad_plus(0.5 * (p0 + p1), grid)
    return 0.5 * math.fsum(
        [
            norm_cell_sq(dtp, grid, cells.astype(float)),
            params.c**2 * norm_edge_sq(grad_mid, grid, EdgeField(xedges, yedges)),
        ]
    )


# ── Ledger ───────────────────────────────────────────────────


@dataclass
class LedgerRow:
    n: int
    t: float
    E_embed: float
    D: float
    R: float
    residual: float
    E_phys_level0: float
    E_phys_all: float
    solver_iters: int
    S: float = 0.0
    K: float = 0.0
    relative_residual: float = 0.0
    level_residuals: tuple = ()

    def __post_init__(self):
        self.level_residuals = tuple(self.level_residuals)

    def as_csv_row(self):
        data = asdict(self)
        return [data[name] for name in config.ENERGY_COLUMNS]


class EnergyLedger:
    """Per-step energy balance time series."""

    def __init__(self, rows=None):
        self.rows = list(rows or [])
        self.e_prev = None

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def append(self, row):
        self.rows.append(row)
        self.e_prev = row.E_embed
        logger.debug(
            "ledger n=%d E=%.12e D=%.3e R=%.3e residual=%.3e", row.n, row.E_embed, row.D, row.R, row.residual
        )

    def tail(self, count=1):
        return self.rows[-count:] if count else []

    def max_relative_residual(self):
        return max((row.relative_residual for row in self.rows), default=0.0)

    def is_nonincreasing(self, slack=0.0):
        values = [row.E_embed for row in self.rows]
        return all(b <= a + slack * max(abs(a), 1e-300) for a, b in zip(values, values[1:]))
