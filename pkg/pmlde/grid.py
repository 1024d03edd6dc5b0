"""Staggered Cartesian grid, difference operators and discrete inner products.

Pressure-like fields live at cell centres as ``(nx, ny)`` arrays indexed
``[i, j]`` with ``i`` along x.  Vector-like fields live on interior edges:
the x-component on the ``(nx - 1, ny)`` x-edges, the y-component on the
``(nx, ny - 1)`` y-edges.  Edge values on the outer boundary are identically
zero (homogeneous closure) and are not stored.
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigValidationError


def fsum(values):
    """Correctly rounded sum of an array, independent of memory order."""
    return math.fsum(np.asarray(values, dtype=float).ravel())


@dataclass(frozen=True)
class StaggeredGrid:
    """Uniform cell/edge layout over ``[x0, x0 + nx*hx] x [y0, y0 + ny*hy]``."""

    nx: int
    ny: int
    hx: float
    hy: float
    x0: float
    y0: float

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ConfigValidationError(
                f"grid needs at least 4x4 cells, got {self.nx}x{self.ny}",
                invariant="grid.size",
            )
        if not (self.hx > 0 and self.hy > 0):
            raise ConfigValidationError("grid spacings must be positive", invariant="grid.spacing")

    @classmethod
    def covering(cls, xlo, xhi, ylo, yhi, nx, ny):
        """Grid spanning the box exactly with ``nx x ny`` cells."""
        return cls(nx, ny, (xhi - xlo) / nx, (yhi - ylo) / ny, xlo, ylo)

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def cell_area(self):
        return self.hx * self.hy

    @property
    def bounds(self):
        return (self.x0, self.x0 + self.nx * self.hx, self.y0, self.y0 + self.ny * self.hy)

    def cell_x(self):
        return self.x0 + (np.arange(self.nx) + 0.5) * self.hx

    def cell_y(self):
        return self.y0 + (np.arange(self.ny) + 0.5) * self.hy

    def cell_centers(self):
        """Coordinates ``(X, Y)`` of the cell centres."""
        return np.meshgrid(self.cell_x(), self.cell_y(), indexing="ij")

    def x_edges(self):
        """Coordinates of the interior x-edges, shape ``(nx - 1, ny)``."""
        xe = self.x0 + np.arange(1, self.nx) * self.hx
        return np.meshgrid(xe, self.cell_y(), indexing="ij")

    def y_edges(self):
        """Coordinates of the interior y-edges, shape ``(nx, ny - 1)``."""
        ye = self.y0 + np.arange(1, self.ny) * self.hy
        return np.meshgrid(self.cell_x(), ye, indexing="ij")

    def cell_zeros(self):
        return np.zeros(self.shape)

    def edge_zeros(self):
        return EdgeField.zeros(self)

    def subgrid(self, i0, j0, i1, j1):
        """Grid of the cell index box ``[i0, i1) x [j0, j1)``."""
        return StaggeredGrid(
            i1 - i0, j1 - j0, self.hx, self.hy, self.x0 + i0 * self.hx, self.y0 + j0 * self.hy
        )

    def refined(self, ratio):
        return StaggeredGrid(
            self.nx * ratio, self.ny * ratio, self.hx / ratio, self.hy / ratio, self.x0, self.y0
        )


class EdgeField:
    """Pair of x-edge and y-edge arrays with elementwise arithmetic."""

    __slots__ = ("x", "y")
    __array_ufunc__ = None

    def __init__(self, x, y):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros((grid.nx - 1, grid.ny)), np.zeros((grid.nx, grid.ny - 1)))

    @classmethod
    def full(cls, grid, value):
        return cls(np.full((grid.nx - 1, grid.ny), value), np.full((grid.nx, grid.ny - 1), value))

    def copy(self):
        return EdgeField(self.x.copy(), self.y.copy())

    def _combine(self, other, op):
        if isinstance(other, EdgeField):
            return EdgeField(op(self.x, other.x), op(self.y, other.y))
        return EdgeField(op(self.x, other), op(self.y, other))

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __rsub__(self, other):
        return self._combine(other, lambda a, b: np.subtract(b, a))

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._combine(other, np.divide)

    def __neg__(self):
        return EdgeField(-self.x, -self.y)

    def __eq__(self, other):
        if not isinstance(other, EdgeField):
            return NotImplemented
        return np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)

    __hash__ = None

    def __repr__(self):
        return f"EdgeField(x{self.x.shape}, y{self.y.shape})"

    def abs_max(self):
        return max(float(np.max(np.abs(self.x), initial=0.0)), float(np.max(np.abs(self.y), initial=0.0)))

    def is_finite(self):
        return bool(np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y)))

    def ravel(self):
        return np.concatenate([self.x.ravel(), self.y.ravel()])

    @classmethod
    def unravel(cls, flat, grid):
        nxe = (grid.nx - 1) * grid.ny
        return cls(
            flat[:nxe].reshape(grid.nx - 1, grid.ny), flat[nxe:].reshape(grid.nx, grid.ny - 1)
        )

    @property
    def size(self):
        return self.x.size + self.y.size


# ── Difference operators ─────────────────────────────────────


def grad_plus(u, grid):
    """Forward differences of a cell field onto the interior edges."""
    return EdgeField(
        (u[1:, :] - u[:-1, :]) / grid.hx,
        (u[:, 1:] - u[:, :-1]) / grid.hy,
    )


def div_minus(v, grid):
    """Backward-difference divergence of an edge field, zero boundary flux."""
    out = np.zeros((grid.nx, grid.ny))
    vx = v.x / grid.hx
    vy = v.y / grid.hy
    out[:-1, :] += vx
    out[1:, :] -= vx
    out[:, :-1] += vy
    out[:, 1:] -= vy
    return out


def div_minus_weighted(omega, v, grid):
    """Weighted divergence ``div(omega * v)``."""
    return div_minus(omega * v, grid)


def laplace_weighted(omega, u, grid):
    """Weighted 5-point Laplacian ``div(omega * grad u)``."""
    return div_minus(omega * grad_plus(u, grid), grid)


def centered_gradient(u, grid):
    """Cell-centred gradient obtained by averaging the two adjacent edge differences."""
    return average_edges_to_cells(grad_plus(u, grid))


def average_edges_to_cells(v):
    """Cell averages of the two adjacent edge values per direction."""
    nx, ny = v.y.shape[0], v.x.shape[1]
    ax = np.zeros((nx, ny))
    ay = np.zeros((nx, ny))
    ax[:-1, :] += 0.5 * v.x
    ax[1:, :] += 0.5 * v.x
    ay[:, :-1] += 0.5 * v.y
    ay[:, 1:] += 0.5 * v.y
    return ax, ay


# ── Inner products ───────────────────────────────────────────


def inner_cell(u, v, grid, weight=None):
    """Discrete L2 pairing of two cell fields."""
    prod = u * v if weight is None else weight * u * v
    return grid.cell_area * fsum(prod)


def inner_edge(v, w, grid, weight=None):
    """Discrete L2 pairing of two edge fields with an optional diagonal edge weight."""
    prod = v * w if weight is None else weight * v * w
    return grid.cell_area * math.fsum([fsum(prod.x), fsum(prod.y)])


def norm_cell_sq(u, grid, weight=None):
    return inner_cell(u, u, grid, weight)


def norm_edge_sq(v, grid, weight=None):
    return inner_edge(v, v, grid, weight)


def sbp_residual(omega, u, v, grid):
    """``(div(omega v), u) + (v, grad u)_omega``, zero up to roundoff."""
    return math.fsum(
        [
            inner_cell(div_minus_weighted(omega, v, grid), u, grid),
            inner_edge(v, grad_plus(u, grid), grid, weight=omega),
        ]
    )
