"""The ``-Δ + V(εx)`` operator on interior nodes and its iterative inverse."""

from __future__ import annotations

import weakref

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .domain import Grid, Problem


class LinearSolveError(RuntimeError):
    """CG did not reach the requested tolerance."""


def laplacian(u: np.ndarray, h: float) -> np.ndarray:
    """Standard ``(2d+1)``-point Laplacian; zero on the boundary layer."""
    out = -2.0 * u.ndim * u
    for ax in range(u.ndim):
        lo = [slice(None)] * u.ndim
        hi = [slice(None)] * u.ndim
        lo[ax] = slice(1, None)
        hi[ax] = slice(None, -1)
        out[tuple(lo)] += u[tuple(hi)]
        out[tuple(hi)] += u[tuple(lo)]
    out /= h * h
    interior = (slice(1, -1),) * u.ndim
    res = np.zeros_like(u)
    res[interior] = out[interior]
    return res


def _stiffness(grid: Grid) -> sp.csr_matrix:
    m = grid.n - 2
    t = sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1]) / grid.h**2
    if grid.d == 1:
        return t.tocsr()
    eye = sp.identity(m)
    return (sp.kron(t, eye) + sp.kron(eye, t)).tocsr()


class HOperator:
    """SPD operator ``A = -Δ_h + V(εx)`` restricted to interior nodes."""

    def __init__(self, problem: Problem):
        grid = problem.grid
        self.grid = grid
        self._inner = (slice(1, -1),) * grid.d
        v = problem.V_eps[self._inner].ravel()
        self.matrix = (_stiffness(grid) + sp.diags(v)).tocsr()
        self._diag = self.matrix.diagonal()
        self._precond = sp.diags(1.0 / self._diag)

    def apply(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.shape)
        out[self._inner] = (self.matrix @ u[self._inner].ravel()).reshape(
            (self.grid.n - 2,) * self.grid.d
        )
        return out

    def solve(self, r: np.ndarray, rtol: float = 1e-8, maxiter: int | None = None) -> np.ndarray:
        """Solve ``A g = r`` by Jacobi-preconditioned CG."""
        b = r[self._inner].ravel()
        if not np.any(b):
            return np.zeros(self.grid.shape)
        if maxiter is None:
            maxiter = max(1000, 20 * self.grid.n)
        x, info = cg(self.matrix, b, rtol=rtol, atol=0.0, maxiter=maxiter, M=self._precond)
        if info != 0:
            res = np.linalg.norm(b - self.matrix @ x) / np.linalg.norm(b)
            raise LinearSolveError(
                f"CG stopped after {maxiter} iterations with relative residual {res:.3e}"
            )
        g = np.zeros(self.grid.shape)
        g[self._inner] = x.reshape((self.grid.n - 2,) * self.grid.d)
        return g


_CACHE: "weakref.WeakKeyDictionary[Problem, HOperator]" = weakref.WeakKeyDictionary()


def h_operator(problem: Problem) -> HOperator:
    op = _CACHE.get(problem)
    if op is None:
        op = HOperator(problem)
        _CACHE[problem] = op
    return op
