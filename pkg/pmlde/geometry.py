"""Rigidly moving objects as diffuse-interface indicator fields.

Signed distances are positive inside the object and negative on the wave side.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy.special import expit

from . import config
from .exceptions import ConfigValidationError, GeometryEscape
from .grid import EdgeField

logger = logging.getLogger(__name__)


# ── Shapes ───────────────────────────────────────────────────


@dataclass(frozen=True)
class Circle:
    center: Tuple[float, float]
    radius: float

    kind = "circle"

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigValidationError("circle radius must be positive", invariant="circle.radius>0")

    @property
    def lipschitz(self):
        return 1.0

    def static_distance(self, x, y):
        return self.radius - np.hypot(x - self.center[0], y - self.center[1])

    def bounding_box(self):
        cx, cy = self.center
        r = self.radius
        return (cx - r, cx + r, cy - r, cy + r)


@dataclass(frozen=True)
class Star:
    """Star with boundary radius ``r0 + r1 cos(lobes * theta)`` about ``center``."""

    center: Tuple[float, float]
    r0: float
    r1: float
    lobes: int

    kind = "star"

    def __post_init__(self):
        if not (self.r0 > self.r1 >= 0):
            raise ConfigValidationError("star needs r0 > r1 >= 0", invariant="star.r0>r1>=0")
        if int(self.lobes) != self.lobes or self.lobes < 3:
            raise ConfigValidationError("star needs at least 3 lobes", invariant="star.lobes>=3")

    @property
    def lipschitz(self):
        # Largest rescaling factor of the radial level set
        return math.hypot(1.0, self.r1 * self.lobes / (self.r0 - self.r1))

    def static_distance(self, x, y):
        dx = x - self.center[0]
        dy = y - self.center[1]
        rho = np.hypot(dx, dy)
        theta = np.arctan2(dy, dx)
        boundary = self.r0 + self.r1 * np.cos(self.lobes * theta)
        # Gradient norm of the radial level set at the boundary point of the same ray
        slope = self.r1 * self.lobes * np.sin(self.lobes * theta) / boundary
        return (boundary - rho) / np.sqrt(1.0 + slope**2)

    def bounding_box(self):
        cx, cy = self.center
        r = self.r0 + self.r1
        return (cx - r, cx + r, cy - r, cy + r)


@dataclass(frozen=True)
class Polygon:
    """Simple polygon given by its vertices in order."""

    vertices: Tuple[Tuple[float, float], ...]

    kind = "polygon"

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) < 3:
            raise ConfigValidationError("polygon needs at least 3 vertices", invariant="polygon.vertices>=3")
        if not _is_simple(verts):
            raise ConfigValidationError("polygon must not self-intersect", invariant="polygon.simple")

    @property
    def lipschitz(self):
        return 1.0

    def static_distance(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        verts = np.asarray(self.vertices)
        nxt = np.roll(verts, -1, axis=0)
        dist_sq = np.full(x.shape, np.inf)
        inside = np.zeros(x.shape, dtype=bool)
        for (ax, ay), (bx, by) in zip(verts, nxt):
            ex, ey = bx - ax, by - ay
            t = np.clip(((x - ax) * ex + (y - ay) * ey) / (ex * ex + ey * ey), 0.0, 1.0)
            dist_sq = np.minimum(dist_sq, (x - ax - t * ex) ** 2 + (y - ay - t * ey) ** 2)
            # Even-odd crossing test along +x
            crosses = (ay > y) != (by > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                x_cross = ax + (y - ay) * ex / (by - ay)
            inside ^= crosses & (x < x_cross)
        dist = np.sqrt(dist_sq)
        return np.where(inside, dist, -dist)

    def bounding_box(self):
        verts = np.asarray(self.vertices)
        return (verts[:, 0].min(), verts[:, 0].max(), verts[:, 1].min(), verts[:, 1].max())


def _segments_cross(p1, p2, p3, p4):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def _is_simple(verts):
    n = len(verts)
    edges = [(verts[k], verts[(k + 1) % n]) for k in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(*edges[i], *edges[j]):
                return False
    return True


# ── Motion ───────────────────────────────────────────────────


@dataclass(frozen=True)
class RigidMotion:
    """Rigid translation ``x(t) = x(0) + velocity t + acceleration t^2 / 2``."""

    velocity: Tuple[float, float] = (0.0, 0.0)
    acceleration: Tuple[float, float] = field(default=(0.0, 0.0))

    @property
    def speed(self):
        return math.hypot(*self.velocity)

    @property
    def is_static(self):
        return self.speed == 0.0 and not self.is_accelerated

    @property
    def is_accelerated(self):
        return any(v != 0.0 for v in self.acceleration)

    def displacement(self, t):
        return tuple(v * t + 0.5 * acc * t * t for v, acc in zip(self.velocity, self.acceleration))

    def check_subsonic(self, c):
        if not self.speed < c:
            raise ConfigValidationError(
                f"object speed {self.speed} must stay below the wave speed {c}",
                invariant="motion.subsonic",
            )


STATIC = RigidMotion()


def signed_distance(shape, motion, x, y, t):
    """Signed distance to the object boundary at time ``t``, positive inside."""
    dx, dy = motion.displacement(t)
    return shape.static_distance(np.asarray(x, dtype=float) - dx, np.asarray(y, dtype=float) - dy)


def moved_bounding_box(shape, motion, t):
    xlo, xhi, ylo, yhi = shape.bounding_box()
    dx, dy = motion.displacement(t)
    return (xlo + dx, xhi + dx, ylo + dy, yhi + dy)


# ── Indicator profile ────────────────────────────────────────


def psi_eps(r, eps):
    """Smooth indicator ``1 / (exp(6 r / eps) + 1)``: 1 outside, 0 inside."""
    z = 6.0 * np.asarray(r, dtype=float) / eps
    psi = expit(-np.clip(z, -config.EXPONENT_CLAMP, config.EXPONENT_CLAMP))
    psi = np.where(z > config.EXPONENT_CLAMP, 0.0, psi)
    psi = np.where(z < -config.EXPONENT_CLAMP, 1.0, psi)
    return psi if psi.ndim else float(psi)


def w_eps(r, eps):
    """Interface weight ``|d psi / dr| = (6 / eps) psi (1 - psi)``."""
    psi = psi_eps(r, eps)
    return (6.0 / eps) * psi * (1.0 - psi)


@dataclass(frozen=True)
class EmbeddingField:
    """Indicator ``psi`` at cells and both edge families, weight ``w`` at cells."""

    psi_cell: np.ndarray
    psi_xedge: np.ndarray
    psi_yedge: np.ndarray
    w: np.ndarray
    eps: float
    time: float

    @classmethod
    def unit(cls, grid, eps=1.0, time=0.0):
        """No object: ``psi == 1`` and ``w == 0`` everywhere."""
        return cls(
            np.ones((grid.nx, grid.ny)),
            np.ones((grid.nx - 1, grid.ny)),
            np.ones((grid.nx, grid.ny - 1)),
            np.zeros((grid.nx, grid.ny)),
            eps,
            time,
        )

    @property
    def psi_edge(self):
        return EdgeField(self.psi_xedge, self.psi_yedge)


def sample_embedding(shape, motion, grid, t, eps, layout=None):
    """Sample the indicator of ``shape`` moved to time ``t`` on ``grid``.

    With a PML ``layout`` the object, widened by its interface zone, must stay
    inside the physical box.
    """
    if not eps > 0:
        raise ConfigValidationError("embedding eps must be positive", invariant="eps>0")
    if layout is not None:
        check_clearance(shape, motion, t, eps, layout)

    def psi_at(coords):
        return psi_eps(signed_distance(shape, motion, coords[0], coords[1], t), eps)

    r_cell = signed_distance(shape, motion, *grid.cell_centers(), t)
    return EmbeddingField(
        psi_eps(r_cell, eps),
        psi_at(grid.x_edges()),
        psi_at(grid.y_edges()),
        w_eps(r_cell, eps),
        eps,
        t,
    )


def check_clearance(shape, motion, t, eps, layout):
    """Raise ``GeometryEscape`` if the object's interface zone reaches the PML collar."""
    margin = config.SUPPORT_MARGIN_EPS * eps * shape.lipschitz
    xlo, xhi, ylo, yhi = moved_bounding_box(shape, motion, t)
    if xlo - margin <= -layout.a1 or xhi + margin >= layout.a1 or ylo - margin <= -layout.a2 or yhi + margin >= layout.a2:
        raise GeometryEscape(
            f"{shape.kind} at t={t:g} comes within {margin:g} of the PML collar"
        )


def check_support(embedding, coeffs):
    """Raise ``GeometryEscape`` unless ``psi == 1`` and ``w == 0`` wherever damping is active."""
    damped = coeffs.cell.a > 0
    violations = [
        np.any(damped & (embedding.psi_cell != 1.0)),
        np.any(damped & (embedding.w != 0.0)),
        np.any((coeffs.xedge.a > 0) & (embedding.psi_xedge != 1.0)),
        np.any((coeffs.yedge.a > 0) & (embedding.psi_yedge != 1.0)),
    ]
    if any(violations):
        raise GeometryEscape(f"embedding at t={embedding.time:g} overlaps the damping layer")


def sweep_clearance(shape, motion, t_end, eps, layout, samples=64):
    """Check clearance over ``[0, t_end]`` at configuration time."""
    times = [0.0, t_end] if not motion.is_accelerated else np.linspace(0.0, t_end, samples)
    for t in times:
        check_clearance(shape, motion, float(t), eps, layout)
