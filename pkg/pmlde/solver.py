"""Matrix-free Krylov solvers for the per-step implicit systems.

All inner products use correctly rounded summation, so iterates are
bit-reproducible for identical inputs.
"""

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.linalg import solve_triangular

from . import config

logger = logging.getLogger(__name__)


class SolveStatus(str, enum.Enum):
    CONVERGED = "converged"
    BREAKDOWN = "breakdown"
    MAX_ITER = "max_iter"


@dataclass
class SolveReport:
    """Outcome of one linear solve."""

    iterations: int
    final_residual: float
    status: SolveStatus
    method: str
    rhs_norm: float = 0.0
    fallback: bool = False
    history: List[float] = field(default_factory=list, repr=False)

    @property
    def converged(self):
        return self.status is SolveStatus.CONVERGED

    @property
    def relative_residual(self):
        return self.final_residual / self.rhs_norm if self.rhs_norm else self.final_residual


@dataclass(frozen=True)
class SolverOptions:
    tol: float = config.DEFAULT_SOLVER_TOL
    maxiter_factor: float = config.DEFAULT_MAXITER_FACTOR
    method: str = None
    restart: int = config.GMRES_RESTART

    def max_iter(self, size):
        return max(1, int(math.ceil(self.maxiter_factor * math.sqrt(size))))


class LinearOperator:
    """Matrix-free linear map acting on arrays of a fixed shape."""

    def __init__(self, apply, shape, symmetric=True, name="operator"):
        self._apply = apply
        self.shape = tuple(shape)
        self.symmetric = symmetric
        self.name = name

    def __call__(self, u):
        return self._apply(u)

    @property
    def size(self):
        return int(np.prod(self.shape))

    def probe_diagonal(self, tile=3):
        """Diagonal entries from unit spikes spaced ``tile`` cells apart.

        Exact for stencils reaching at most one neighbour in each direction.
        """
        diag = np.zeros(self.shape)
        if len(self.shape) != 2:
            for k in range(self.size):
                spike = np.zeros(self.size)
                spike[k] = 1.0
                diag.ravel()[k] = self(spike.reshape(self.shape)).ravel()[k]
            return diag
        for di in range(tile):
            for dj in range(tile):
                spike = np.zeros(self.shape)
                spike[di::tile, dj::tile] = 1.0
                diag[di::tile, dj::tile] = self(spike)[di::tile, dj::tile]
        return diag

    def jacobi(self):
        """Inverse diagonal, identity where the diagonal vanishes."""
        diag = self.probe_diagonal()
        safe = np.where(diag != 0.0, diag, 1.0)
        return 1.0 / safe


def dot(a, b):
    return math.fsum((a * b).ravel())


def norm(a):
    return math.sqrt(dot(a, a))


# ── Krylov methods ───────────────────────────────────────────


def cg(op, rhs, x0, tol, max_iter, minv=None):
    """Jacobi-preconditioned conjugate gradient with breakdown detection."""
    rhs_norm = norm(rhs)
    target = tol * rhs_norm
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=float)
    r = rhs - op(x)
    rnorm = norm(r)
    history = [rnorm]
    if rnorm <= target:
        return x, SolveReport(0, rnorm, SolveStatus.CONVERGED, "cg", rhs_norm, history=history)

    z = r if minv is None else minv * r
    p = z.copy()
    rz = dot(r, z)
    for k in range(1, max_iter + 1):
        ap = op(p)
        pap = dot(p, ap)
        if not math.isfinite(pap) or pap <= 0.0:
            return x, SolveReport(k, rnorm, SolveStatus.BREAKDOWN, "cg", rhs_norm, history=history)
        alpha = rz / pap
        x = x + alpha * p
        r = r - alpha * ap
        rnorm = norm(r)
        if rnorm <= target:
            # Confirm against the true residual before accepting
            r = rhs - op(x)
            rnorm = norm(r)
            history.append(rnorm)
            if rnorm <= target:
                return x, SolveReport(k, rnorm, SolveStatus.CONVERGED, "cg", rhs_norm, history=history)
            z = r if minv is None else minv * r
            p = z.copy()
            rz = dot(r, z)
            continue
        history.append(rnorm)
        z = r if minv is None else minv * r
        rz_new = dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, SolveReport(max_iter, rnorm, SolveStatus.MAX_ITER, "cg", rhs_norm, history=history)


def bicgstab(op, rhs, x0, tol, max_iter, minv=None):
    """Right-preconditioned BiCGSTAB for nonsymmetric operators."""
    rhs_norm = norm(rhs)
    target = tol * rhs_norm
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=float)
    r = rhs - op(x)
    rnorm = norm(r)
    history = [rnorm]
    if rnorm <= target:
        return x, SolveReport(0, rnorm, SolveStatus.CONVERGED, "bicgstab", rhs_norm, history=history)

    precond = (lambda u: u) if minv is None else (lambda u: minv * u)
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(rhs)
    p = np.zeros_like(rhs)

    def breakdown(k):
        return x, SolveReport(k, rnorm, SolveStatus.BREAKDOWN, "bicgstab", rhs_norm, history=history)

    for k in range(1, max_iter + 1):
        rho_new = dot(r_hat, r)
        if rho_new == 0.0 or not math.isfinite(rho_new):
            return breakdown(k)
        p = r + (rho_new / rho) * (alpha / omega) * (p - omega * v)
        ph = precond(p)
        v = op(ph)
        rv = dot(r_hat, v)
        if rv == 0.0 or not math.isfinite(rv):
            return breakdown(k)
        alpha = rho_new / rv
        s = r - alpha * v
        if norm(s) <= target:
            x = x + alpha * ph
        else:
            sh = precond(s)
            t = op(sh)
            tt = dot(t, t)
            if tt == 0.0 or not math.isfinite(tt):
                return breakdown(k)
            omega = dot(t, s) / tt
            x = x + alpha * ph + omega * sh
            if omega == 0.0:
                return breakdown(k)
        rho = rho_new
        r = rhs - op(x)
        rnorm = norm(r)
        history.append(rnorm)
        if rnorm <= target:
            return x, SolveReport(k, rnorm, SolveStatus.CONVERGED, "bicgstab", rhs_norm, history=history)
    return x, SolveReport(max_iter, rnorm, SolveStatus.MAX_ITER, "bicgstab", rhs_norm, history=history)


def gmres(op, rhs, x0, tol, max_iter, minv=None, restart=config.GMRES_RESTART):
    """Restarted GMRES with modified Gram-Schmidt Arnoldi and Givens rotations."""
    rhs_norm = norm(rhs)
    target = tol * rhs_norm
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=float)
    precond = (lambda u: u) if minv is None else (lambda u: minv * u)
    history = []
    iterations = 0
    while True:
        r = rhs - op(x)
        beta = norm(r)
        history.append(beta)
        if beta <= target:
            return x, SolveReport(iterations, beta, SolveStatus.CONVERGED, "gmres", rhs_norm, history=history)
        if iterations >= max_iter:
            return x, SolveReport(iterations, beta, SolveStatus.MAX_ITER, "gmres", rhs_norm, history=history)
        if not math.isfinite(beta):
            return x, SolveReport(iterations, beta, SolveStatus.BREAKDOWN, "gmres", rhs_norm, history=history)

        m = min(restart, max_iter - iterations)
        basis = [r / beta]
        hess = np.zeros((m + 1, m))
        g = np.zeros(m + 1)
        g[0] = beta
        cs = np.zeros(m)
        sn = np.zeros(m)
        k = 0
        for j in range(m):
            w = op(precond(basis[j]))
            for i in range(j + 1):
                hess[i, j] = dot(w, basis[i])
                w = w - hess[i, j] * basis[i]
            h_next = norm(w)
            hess[j + 1, j] = h_next
            for i in range(j):
                hij = hess[i, j]
                hess[i, j] = cs[i] * hij + sn[i] * hess[i + 1, j]
                hess[i + 1, j] = -sn[i] * hij + cs[i] * hess[i + 1, j]
            denom = math.hypot(hess[j, j], hess[j + 1, j])
            if denom == 0.0:
                break
            cs[j] = hess[j, j] / denom
            sn[j] = hess[j + 1, j] / denom
            hess[j, j] = denom
            hess[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            iterations += 1
            if abs(g[j + 1]) <= target or h_next == 0.0 or iterations >= max_iter:
                break
            basis.append(w / h_next)
        if k == 0:
            return x, SolveReport(iterations, beta, SolveStatus.BREAKDOWN, "gmres", rhs_norm, history=history)
        y = solve_triangular(hess[:k, :k], g[:k])
        update = np.zeros_like(rhs)
        for i in range(k):
            update = update + y[i] * basis[i]
        x = x + precond(update)


_METHODS = {"cg": cg, "bicgstab": bicgstab, "gmres": gmres}


def solve(op, rhs, x0=None, tol=config.DEFAULT_SOLVER_TOL, max_iter=None, method=None,
          minv=None, restart=config.GMRES_RESTART):
    """Solve ``op(x) = rhs``.

    The method defaults to CG for symmetric operators and BiCGSTAB otherwise.
    A breakdown is reported, not retried; callers pick the fallback method.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = SolverOptions(tol=tol).max_iter(rhs.size)
    if norm(rhs) == 0.0:
        return np.zeros_like(rhs), SolveReport(0, 0.0, SolveStatus.CONVERGED, method or "none")
    method = method or ("cg" if op.symmetric else "bicgstab")
    try:
        krylov = _METHODS[method]
    except KeyError:
        raise ValueError(f"unknown Krylov method '{method}'") from None

    if method == "gmres":
        x, report = gmres(op, rhs, x0, tol, max_iter, minv, restart)
    else:
        x, report = krylov(op, rhs, x0, tol, max_iter, minv)
    logger.debug("%s %s: %s in %d iterations, residual %.3e",
                 op.name, report.method, report.status.value, report.iterations, report.final_residual)
    return x, report
