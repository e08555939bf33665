"""Preconditioned steepest descent on the penalized energy ``Γ_ε``.

The search direction is the ``H_ε`` gradient ``g = (-Δ + V(εx))^{-1} Γ_ε'(u)``.
Optionally every trial point is rescaled to the maximum of ``t -> Γ_ε(t w)``
(a Nehari retraction), which removes the unstable amplitude direction of a
mountain-pass critical point; the reduced energy has the same critical
points and the same gradient there.

Energies along a trace are tracked as ``Γ_ε(u_0)`` plus accurately computed
increments, so the recorded sequence is non-increasing bit for bit.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .domain import Problem, check_field
from .functionals import dual_norm, energy_Gamma, residual, riesz
from .linalg import LinearSolveError
from .localization import (
    DegenerateBarycenter,
    barycenter,
    barycenter_gradient,
    he_norm,
    manifold_distance,
    penalty,
)

REASONS = ("converged", "max-iters", "left-Z-set", "degenerate", "stalled")


class FlowWarning(UserWarning):
    """The starting point of a descent is outside the expected set."""


@dataclass
class FlowState:
    u: np.ndarray = field(repr=False)
    iteration: int
    energy: float
    residual: float
    upsilon: np.ndarray
    penalty: float
    step: float
    _r: np.ndarray | None = field(default=None, repr=False)
    _g: np.ndarray | None = field(default=None, repr=False)

    def row(self) -> list:
        return [self.iteration, self.energy, self.residual, *np.atleast_1d(self.upsilon), self.penalty, self.step]


@dataclass
class StopRule:
    tol: float = 1e-8
    max_iter: int = 500
    stride: int = 1
    retract: bool = True
    check_every: int = 10
    tau_max: float = 1.0


@dataclass
class FlowTrace:
    states: list[FlowState]
    reason: str
    final: FlowState
    D1: float
    drifts: list[tuple[float, float]]
    final_distance: float | None = None
    final_in_Z: bool | None = None
    start_in_Z: bool | None = None
    energy_direct: float | None = None

    @property
    def energies(self) -> np.ndarray:
        return np.array([s.energy for s in self.states])

    def monotone(self) -> bool:
        e = self.energies
        return bool(np.all(np.diff(e) <= 0))

    def drift_ok(self) -> bool:
        """``|ΔΥ| <= D1 ‖Δu‖_ε`` on every accepted step."""
        return all(dy <= self.D1 * du for dy, du in self.drifts)

    def summary(self) -> dict:
        f = self.final
        return {
            "reason": self.reason,
            "iterations": f.iteration,
            "energy": f.energy,
            "energy_direct": self.energy_direct,
            "residual": f.residual,
            "penalty": f.penalty,
            "upsilon": [float(v) for v in np.atleast_1d(f.upsilon)],
            "D1": self.D1,
            "monotone": self.monotone(),
            "drift_ok": self.drift_ok(),
            "final_distance": self.final_distance,
            "final_in_Z": self.final_in_Z,
            "start_in_Z": self.start_in_Z,
        }

    def write_csv(self, path) -> Path:
        path = Path(path)
        d = np.atleast_1d(self.final.upsilon).size
        header = ["iter", "energy", "residual"] + [f"upsilon_{k}" for k in range(d)] + ["penalty", "step"]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for s in self.states:
                w.writerow([s.iteration] + [repr(float(v)) for v in s.row()[1:]])
        return path


# -- energy bookkeeping ----------------------------------------------------------


def energy_change(u_new: np.ndarray, u: np.ndarray, problem: Problem) -> float:
    """``Γ_ε(u_new) - Γ_ε(u)`` evaluated in a cancellation-free form."""
    grid = problem.grid
    dlt = u_new - u
    sig = u_new + u
    quad = 0.0
    for ax in range(grid.d):
        quad += float(np.sum(np.diff(dlt, axis=ax) * np.diff(sig, axis=ax))) / grid.h**2
    quad += float(np.sum(problem.V_eps * dlt * sig))
    nl = float(np.sum(problem.nonlinearity.dF(u_new, u)))
    out = (0.5 * quad - nl) * grid.cell
    if problem.params.localized:
        out += penalty(u_new, problem) - penalty(u, problem)
    return out


def _quadratic(u, problem):
    grid = problem.grid
    q = sum(float(np.sum(np.diff(u, axis=ax) ** 2)) for ax in range(grid.d)) / grid.h**2
    return (q + float(np.sum(problem.V_eps * u * u))) * grid.cell


def nehari_scale(w: np.ndarray, problem: Problem) -> float:
    """Maximiser of ``t -> Γ_ε(t w)`` near the pure-power guess."""
    nl = problem.nonlinearity
    q = _quadratic(w, problem)
    pos = np.maximum(w, 0.0)
    n = float(np.sum(pos**nl.p)) * problem.grid.cell
    if not (q > 0 and n > 0):
        return 1.0
    t = (q / n) ** (1.0 / (nl.p - 2.0))
    exact = nl.clamp is None or t * float(pos.max()) <= nl.clamp
    if exact and (not problem.params.localized or penalty(t * w, problem) == 0.0):
        return t
    res = optimize.minimize_scalar(
        lambda s: -energy_Gamma(s * w, problem), bounds=(0.25 * t, 4.0 * t), method="bounded",
        options={"xatol": 1e-10 * t},
    )
    return float(res.x)


# -- descent ----------------------------------------------------------------------


def _upsilon(u, problem):
    if not problem.params.localized:
        return np.full(problem.grid.d, np.nan)
    rep = barycenter(u, problem)
    if rep.degenerate:
        raise DegenerateBarycenter(f"denominator {rep.denominator:.3e}")
    return rep.value


def _gradient(u, problem):
    r = residual(u, problem)
    g = riesz(r, problem)
    return r, g, dual_norm(r, problem, g)


def make_state(u: np.ndarray, problem: Problem, energy: float | None = None, iteration: int = 0, step: float = 0.0) -> FlowState:
    u = check_field(u, problem.grid)
    r, g, dn = _gradient(u, problem)
    ups = _upsilon(u, problem)
    pen = penalty(u, problem) if problem.params.localized else 0.0
    e = energy_Gamma(u, problem) if energy is None else energy
    return FlowState(u, iteration, e, dn, ups, pen, step, r, g)


def barycenter_sensitivity(u: np.ndarray, problem: Problem) -> float:
    """Operator norm of ``Υ'(u)`` from ``H_ε`` to ``R^d``."""
    reps = barycenter_gradient(u, problem)
    return float(np.sqrt(sum(dual_norm(rep, problem) ** 2 for rep in reps)))


def step(state: FlowState, problem: Problem, tau0: float = 1.0, retract: bool = True, c1: float = 1e-4) -> tuple[FlowState, bool]:
    """One Armijo-backtracked descent step; returns ``(new_state, accepted)``.

    On exhausted backtracking the input state is returned unchanged.
    """
    u, g = state.u, state._g
    slope = float(np.sum(state._r * g)) * problem.grid.cell
    tau = tau0
    while tau >= 1e-12 * tau0:
        w = u - tau * g
        if retract:
            w = nehari_scale(w, problem) * w
        try:
            dE = energy_change(w, u, problem)
        except DegenerateBarycenter:
            dE = np.inf
        if dE <= -c1 * tau * slope and dE <= 0.0:
            new = make_state(w, problem, energy=state.energy + dE, iteration=state.iteration + 1, step=tau)
            return new, True
        tau *= 0.5
    return state, False


def descend(u0: np.ndarray, problem: Problem, stop: StopRule | None = None, s0=None) -> FlowTrace:
    """Iterate :func:`step` until the dual residual drops below ``stop.tol``."""
    stop = stop or StopRule()
    u0 = check_field(u0, problem.grid).copy()
    u0[~problem.grid.interior] = 0.0
    localized = problem.params.localized
    p = problem.params
    start_in_Z = None
    if s0 is not None and localized:
        start_in_Z = _in_Z(u0, problem, s0, p.rho1, 3 * p.delta0)
        if not start_in_Z:
            warnings.warn("descent starts outside Z(rho1, 3 delta0)", FlowWarning, stacklevel=2)

    try:
        if stop.retract:
            u0 = nehari_scale(u0, problem) * u0
        state = make_state(u0, problem)
    except DegenerateBarycenter:
        raise
    states = [state]
    drifts: list[tuple[float, float]] = []
    sens = [barycenter_sensitivity(state.u, problem)] if localized else [0.0]
    tau, streak = 1.0, 0
    reason = "max-iters"
    while True:
        if state.residual < stop.tol:
            reason = "converged"
            break
        if state.iteration >= stop.max_iter:
            break
        try:
            new, ok = step(state, problem, tau0=tau, retract=stop.retract)
        except DegenerateBarycenter:
            reason = "degenerate"
            break
        except LinearSolveError:
            reason = "stalled"
            break
        if not ok:
            reason = "stalled"
            break
        if localized:
            du = he_norm(new.u - state.u, problem)
            drifts.append((float(np.linalg.norm(new.upsilon - state.upsilon)), du))
            try:
                sens.append(barycenter_sensitivity(new.u, problem))
            except DegenerateBarycenter:
                state = new
                reason = "degenerate"
                break
        streak = streak + 1 if new.step == tau else 0
        if streak >= 2:
            tau, streak = min(2.0 * tau, stop.tau_max), 0
        elif new.step < tau:
            tau = max(new.step, 1e-3)
        state = new
        if state.iteration % stop.stride == 0:
            states.append(state)
        if localized and s0 is not None and state.iteration % stop.check_every == 0:
            if problem.distance_to_O(problem.eps * state.upsilon) >= 3 * p.delta0:
                reason = "left-Z-set"
                break
    if states[-1] is not state:
        states.append(state)
    trace = FlowTrace(states, reason, state, float(max(sens)), drifts, start_in_Z=start_in_Z)
    trace.energy_direct = energy_Gamma(state.u, problem)
    if s0 is not None and localized:
        try:
            trace.final_distance = manifold_distance(state.u, s0, problem).dist
            trace.final_in_Z = _in_Z(state.u, problem, s0, p.rho0, 3 * p.delta0, trace.final_distance)
        except DegenerateBarycenter:
            trace.final_in_Z = False
    return trace


def _in_Z(u, problem, s0, rho, delta, dist=None) -> bool:
    rep = barycenter(u, problem)
    if rep.degenerate:
        return False
    if problem.distance_to_O(problem.eps * rep.value) >= delta:
        return False
    if dist is None:
        dist = manifold_distance(u, s0, problem).dist
    return dist < rho
