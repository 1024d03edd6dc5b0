"""Gaussian-windowed point-like sources."""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .exceptions import ConfigValidationError


@dataclass(frozen=True)
class SourceSpec:
    """Source ``f = c^2 g(x) sin(w (t - t0)) exp(-sigma (t - t0)^2)``.

    ``eta`` is the spatial variance of the Gaussian ``g``.
    """

    center: Tuple[float, float]
    eta: float
    w: float
    sigma: float
    t0: float = 0.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigValidationError("source.eta must be positive", invariant="source.eta>0")
        if not self.sigma > 0:
            raise ConfigValidationError("source.sigma must be positive", invariant="source.sigma>0")

    def spatial(self, x, y):
        r_sq = (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2
        return np.exp(-r_sq / (2.0 * self.eta)) / (math.sqrt(2.0 * math.pi) * self.eta)

    def temporal(self, t):
        s = t - self.t0
        return math.sin(self.w * s) * math.exp(-self.sigma * s * s)


def eval_source(spec, grid, t, c):
    """Source values at the cell centres of ``grid`` at time ``t``."""
    if spec is None:
        return grid.cell_zeros()
    amplitude = c * c * spec.temporal(t)
    if amplitude == 0.0:
        return grid.cell_zeros()
    return amplitude * spec.spatial(*grid.cell_centers())


def averaged_source(spec, grid, t_prev, t_curr, t_next, c):
    """Three-level average ``(f(t+) + 2 f(t) + f(t-)) / 4``."""
    if spec is None:
        return grid.cell_zeros()
    weight = (spec.temporal(t_next) + 2.0 * spec.temporal(t_curr) + spec.temporal(t_prev)) / 4.0
    return c * c * weight * spec.spatial(*grid.cell_centers())
