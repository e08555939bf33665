"""Energies, Pohozaev functional, residual and the dual norm of the gradient."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .domain import DomainError, Problem, check_field, gradient_energy
from .linalg import h_operator, laplacian
from .localization import penalty, penalty_gradient


@dataclass
class EnergyReport:
    kinetic: float
    potential: float
    nonlinear: float
    penalty: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


def _finite(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise FloatingPointError(f"{what} is not finite")
    return float(value)


def _nonlinear(u: np.ndarray, problem: Problem) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        val = float(np.sum(problem.nonlinearity.F(u))) * problem.grid.cell
    return _finite(val, "∫F(u)")


def energy_report(u: np.ndarray, problem: Problem) -> EnergyReport:
    grid = problem.grid
    u = check_field(u, grid)
    kin = 0.5 * gradient_energy(u, grid.h)
    pot = 0.5 * float(np.sum(problem.V_eps * u * u)) * grid.cell
    nl = _nonlinear(u, problem)
    pen = penalty(u, problem) if problem.params.localized else 0.0
    return EnergyReport(kin, pot, nl, pen, kin + pot - nl + pen)


def energy_J(u: np.ndarray, problem: Problem) -> float:
    """``½∫(|∇u|² + V(εx)u²) - ∫F(u)`` by grid quadrature."""
    r = energy_report(u, problem)
    return r.kinetic + r.potential - r.nonlinear


def energy_Gamma(u: np.ndarray, problem: Problem) -> float:
    """Penalized energy ``J_ε + Φ_ε``."""
    return energy_report(u, problem).total


def limit_energy_L(u: np.ndarray, m: float, problem: Problem) -> float:
    """``½‖∇u‖² + (m/2)‖u‖² - ∫F(u)``."""
    if not m > 0:
        raise DomainError(f"mass coefficient must be positive, got {m}")
    grid = problem.grid
    u = check_field(u, grid)
    kin = gradient_energy(u, grid.h)
    mass = float(np.sum(u * u)) * grid.cell
    return 0.5 * kin + 0.5 * m * mass - _nonlinear(u, problem)


def pohozaev_P(u: np.ndarray, m: float, problem: Problem, N: int | None = None) -> float:
    """``((N-2)/2)‖∇u‖² + (Nm/2)‖u‖² - N∫F(u)`` with ``N`` the grid dimension by default."""
    grid = problem.grid
    N = grid.d if N is None else int(N)
    if N < 1:
        raise DomainError("dimension for the Pohozaev identity must be >= 1")
    u = check_field(u, grid)
    kin = gradient_energy(u, grid.h)
    mass = float(np.sum(u * u)) * grid.cell
    return 0.5 * (N - 2) * kin + 0.5 * N * m * mass - N * _nonlinear(u, problem)


def residual(u: np.ndarray, problem: Problem, with_penalty: bool = True) -> np.ndarray:
    """L² representer of ``Γ_ε'(u)``: ``-Δu + V(εx)u - f(u) + Φ_ε'(u)``."""
    grid = problem.grid
    u = check_field(u, grid)
    r = -laplacian(u, grid.h) + (problem.V_eps * u - problem.nonlinearity.f(u)) * grid.interior
    if with_penalty and problem.params.localized:
        r = r + penalty_gradient(u, problem) * grid.interior
    return r


def riesz(r: np.ndarray, problem: Problem, rtol: float | None = None) -> np.ndarray:
    """Solve ``(-Δ + V(εx)) g = r``."""
    r = check_field(r, problem.grid)
    tol = problem.params.lin_tol if rtol is None else rtol
    return h_operator(problem).solve(r, rtol=tol)


def dual_norm(r: np.ndarray, problem: Problem, g: np.ndarray | None = None) -> float:
    """``‖r‖_{H_ε^{-1}} = ⟨r, A^{-1} r⟩^{1/2}``."""
    if g is None:
        g = riesz(r, problem)
    val = float(np.sum(r * g)) * problem.grid.cell
    return float(np.sqrt(max(val, 0.0)))
