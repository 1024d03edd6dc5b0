"""PML damping profiles and the coefficient fields derived from them."""

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import config
from .exceptions import ConfigValidationError, OutOfDomain
from .grid import EdgeField

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PmlLayout:
    """Physical box ``(-a1, a1) x (-a2, a2)`` wrapped by layers of thickness ``l1``, ``l2``."""

    a1: float
    a2: float
    l1: float
    l2: float
    xibar1: float
    xibar2: float

    def __post_init__(self):
        for name in ("a1", "a2", "l1", "l2"):
            if not getattr(self, name) > 0:
                raise ConfigValidationError(f"pml.{name} must be positive", invariant=f"pml.{name}>0")
        for name in ("xibar1", "xibar2"):
            if not getattr(self, name) >= 0:
                raise ConfigValidationError(f"pml.{name} must be nonnegative", invariant=f"pml.{name}>=0")

    @classmethod
    def with_default_strength(cls, a1, a2, l1, l2, c, reflection=config.DEFAULT_REFLECTION):
        """Layout whose peak damping meets the round-trip reflection target."""
        return cls(a1, a2, l1, l2, default_peak(l1, c, reflection), default_peak(l2, c, reflection))

    @property
    def domain(self):
        """Computational box ``(xlo, xhi, ylo, yhi)``."""
        return (-self.a1 - self.l1, self.a1 + self.l1, -self.a2 - self.l2, self.a2 + self.l2)

    @property
    def physical(self):
        return (-self.a1, self.a1, -self.a2, self.a2)

    def in_physical(self, x, y):
        return (np.abs(x) < self.a1) & (np.abs(y) < self.a2)


def default_peak(thickness, c, reflection=config.DEFAULT_REFLECTION):
    """Peak damping giving round-trip reflection ``exp(-2 int xi / c)`` equal to ``reflection``.

    The ramp integrates to ``peak * thickness / 2`` across the layer.
    """
    return c * math.log(1.0 / reflection) / thickness


def xi(coord, half_width, thickness, peak):
    """Damping profile, zero in the physical box and ramping smoothly to ``peak``."""
    coord = np.asarray(coord, dtype=float)
    dist = np.abs(coord)
    outer = half_width + thickness
    if np.any(dist > outer * (1.0 + 1e-12)):
        raise OutOfDomain(f"coordinate outside [-{outer}, {outer}]")
    s = np.clip((dist - half_width) / thickness, 0.0, 1.0)
    return np.where(dist < half_width, 0.0, peak * (s - np.sin(2.0 * np.pi * s) / (2.0 * np.pi)))


def _safe_ratio(num, den):
    # 0/0 == 0 wherever the damping trace vanishes
    return np.divide(num, den, out=np.zeros_like(num, dtype=float), where=den > 0)


@dataclass(frozen=True)
class PmlSample:
    """Damping pair at one family of staggered locations."""

    xi1: np.ndarray
    xi2: np.ndarray

    @cached_property
    def a(self):
        return self.xi1 + self.xi2

    @cached_property
    def b(self):
        return self.xi1 * self.xi2

    @cached_property
    def ainv_b(self):
        return _safe_ratio(self.b, self.a)

    @property
    def gamma1(self):
        return (self.xi1, self.xi2)

    @property
    def gamma2(self):
        return (self.xi2 - self.xi1, self.xi1 - self.xi2)

    @property
    def gamma1_tilde(self):
        return (self.xi2, self.xi1)

    @cached_property
    def ainv_gamma1(self):
        return (_safe_ratio(self.xi1, self.a), _safe_ratio(self.xi2, self.a))


@dataclass(frozen=True)
class PmlCoefficients:
    """Damping coefficients sampled at cell centres and at both edge families.

    Edge-valued diagonal matrices keep only the entry acting on the edge's own
    component: entry 1 on x-edges, entry 2 on y-edges.
    """

    cell: PmlSample
    xedge: PmlSample
    yedge: PmlSample

    @classmethod
    def uniform(cls, grid, xi1, xi2):
        """Spatially constant damping; used by verification runs."""

        def sample(shape):
            return PmlSample(np.full(shape, float(xi1)), np.full(shape, float(xi2)))

        return cls(
            sample((grid.nx, grid.ny)), sample((grid.nx - 1, grid.ny)), sample((grid.nx, grid.ny - 1))
        )

    @classmethod
    def zero(cls, grid):
        return cls.uniform(grid, 0.0, 0.0)

    @property
    def a(self):
        return self.cell.a

    @property
    def b(self):
        return self.cell.b

    @cached_property
    def edge_a(self):
        return EdgeField(self.xedge.a, self.yedge.a)

    @cached_property
    def edge_ainv_b(self):
        return EdgeField(self.xedge.ainv_b, self.yedge.ainv_b)

    @cached_property
    def edge_gamma1(self):
        return EdgeField(self.xedge.gamma1[0], self.yedge.gamma1[1])

    @cached_property
    def edge_gamma2(self):
        return EdgeField(self.xedge.gamma2[0], self.yedge.gamma2[1])

    @cached_property
    def edge_gamma1_tilde(self):
        return EdgeField(self.xedge.gamma1_tilde[0], self.yedge.gamma1_tilde[1])

    @cached_property
    def edge_ainv_gamma1(self):
        return EdgeField(self.xedge.ainv_gamma1[0], self.yedge.ainv_gamma1[1])

    def damped_cells(self):
        return self.cell.a > 0

    def damped_edges(self):
        return EdgeField(self.xedge.a > 0, self.yedge.a > 0)


def sample_pml(layout, grid):
    """Sample the damping profiles at every staggered location of ``grid``."""

    def sample(x, y):
        return PmlSample(
            xi(x, layout.a1, layout.l1, layout.xibar1), xi(y, layout.a2, layout.l2, layout.xibar2)
        )

    coeffs = PmlCoefficients(
        sample(*grid.cell_centers()), sample(*grid.x_edges()), sample(*grid.y_edges())
    )
    logger.debug(
        "sampled PML on %dx%d grid, %d damped cells",
        grid.nx,
        grid.ny,
        int(np.count_nonzero(coeffs.damped_cells())),
    )
    return coeffs


def identity_residuals(sample):
    """Largest relative violation of each nodewise coefficient identity."""
    g1 = sample.gamma1
    g1t = sample.gamma1_tilde
    g2 = sample.gamma2
    a, b = sample.a, sample.b
    scale = np.maximum(np.maximum(np.abs(sample.xi1), np.abs(sample.xi2)), 1.0)

    def worst(values, norm):
        return max(float(np.max(np.abs(v) / norm, initial=0.0)) for v in values)

    return {
        "gamma1*gamma1_tilde=b": worst([g1[k] * g1t[k] - b for k in (0, 1)], scale**2),
        "gamma1^2-a*gamma1+b=0": worst([g1[k] ** 2 - a * g1[k] + b for k in (0, 1)], scale**2),
        "2*gamma1+gamma2=a": worst([2.0 * g1[k] + g2[k] - a for k in (0, 1)], scale),
        "gamma1+gamma1_tilde=a": worst([g1[k] + g1t[k] - a for k in (0, 1)], scale),
    }
