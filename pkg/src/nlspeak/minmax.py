"""Initial path, min-max level, the degree map and the end-to-end solve.

In d = 1 the dilation path of a ground state is a minimum of the energy
rather than a maximum, so the path modulates the amplitude instead:
``γ(p, s) = e^{2θ1 s} (φ_ε U0)(x - p/ε)``.  This keeps the endpoint signs of
``P_{V0}`` (positive at ``s = -1``, negative at ``s = 1``) and puts the
maximum of the energy in the interior of the parameter box.  In d = 2 the
path is ``θ(s) (φ_ε U0)(e^{-2θ1 s}(x - p/ε))``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .domain import DomainError, Problem
from .flow import FlowTrace, StopRule, descend
from .functionals import energy_Gamma, energy_report, pohozaev_P
from .localization import CutoffSpec, DegenerateBarycenter, barycenter


class OriginHit(ValueError):
    """A loop sample lies at the origin; the winding number is undefined."""


class Undersampled(ValueError):
    """Consecutive loop samples turn by more than π/2."""


class SolveError(RuntimeError):
    """The solve pipeline failed a named check; ``record`` holds what was computed."""

    def __init__(self, check: str, message: str, record=None):
        super().__init__(f"{check}: {message}")
        self.check = check
        self.record = record


# -- path ------------------------------------------------------------------------


def theta_profile(s: float, theta1: float) -> float:
    """Piecewise-affine amplitude ``θ(s)``: ``θ1`` at ``s = -1``, 1 on ``[-1/2, 1/2]``, ``1 + θ1`` at ``s = 1``."""
    if not -1.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [-1, 1], got {s}")
    if not 0 < theta1 < 0.5:
        raise ValueError("theta1 must lie in (0, 1/2)")
    if s <= -0.5:
        return 2 * (1 - theta1) * s + 2 - theta1
    if s <= 0.5:
        return 1.0
    return 2 * theta1 * s + 1 - theta1


def amplitude_profile(s: float, theta1: float) -> float:
    """Amplitude of the d = 1 path, ``e^{2θ1 s}``."""
    if not -1.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [-1, 1], got {s}")
    return float(np.exp(2 * theta1 * s))


@dataclass
class PathPoint:
    p: np.ndarray
    s: float
    u: np.ndarray = field(repr=False)
    gamma: float
    pohozaev: float
    eps_upsilon: np.ndarray

    def to_dict(self) -> dict:
        return {
            "p": [float(v) for v in self.p],
            "s": self.s,
            "gamma": self.gamma,
            "pohozaev": self.pohozaev,
            "eps_upsilon": [float(v) for v in np.atleast_1d(self.eps_upsilon)],
        }


def path_field(p, s: float, problem: Problem, U0, theta1: float | None = None) -> np.ndarray:
    grid = problem.grid
    eps = problem.eps
    theta1 = problem.params.theta1 if theta1 is None else theta1
    center = np.asarray(p, dtype=float).reshape(grid.d) / eps
    if not grid.contains(center):
        raise DomainError(f"path center p/eps = {center} lies outside the box")
    cut = CutoffSpec(rho1=problem.params.rho1 or 1.0, delta0=problem.params.delta0)
    r = grid.distance(center)
    if grid.d == 1:
        a, rr = amplitude_profile(s, theta1), r
    else:
        a, rr = theta_profile(s, theta1), np.exp(-2 * theta1 * s) * r
    live = (eps * rr < problem.params.delta0) & grid.interior
    u = np.zeros(grid.shape)
    u[live] = a * cut.phi(eps * rr[live]) * U0.profile(rr[live])
    return u


def initial_path(p, s: float, problem: Problem, s0, theta1: float | None = None) -> PathPoint:
    """Evaluate the path at ``(p, s)``: field, ``Γ_ε``, ``P_{V0}`` and ``εΥ``."""
    U0 = s0.top
    u = path_field(p, s, problem, U0, theta1)
    rep = barycenter(u, problem)
    ups = np.full(problem.grid.d, np.nan) if rep.degenerate else problem.eps * rep.value
    gamma = energy_Gamma(u, problem) if not rep.degenerate else energy_report_no_penalty(u, problem)
    return PathPoint(
        p=np.asarray(p, dtype=float).reshape(problem.grid.d),
        s=float(s),
        u=u,
        gamma=gamma,
        pohozaev=pohozaev_P(u, problem.V0, problem),
        eps_upsilon=ups,
    )


def energy_report_no_penalty(u, problem) -> float:
    # the penalty is undefined without a barycenter; only reached for tiny fields
    r = energy_report(u, problem.with_params(R0=None))
    return r.kinetic + r.potential - r.nonlinear


def p_samples(problem: Problem, n_p: int = 9) -> np.ndarray:
    """At most ``n_p^d`` points of ``O^{δ0}`` (a ball around ``x0``), boundary included."""
    rad = problem.params.o_radius + problem.params.delta0
    x0 = problem.x0
    t = np.linspace(-rad, rad, n_p) if n_p > 1 else np.zeros(1)
    if problem.grid.d == 1:
        return x0 + t[:, None]
    P = np.array([[a, b] for a in t for b in t if a * a + b * b <= rad * rad * (1 + 1e-12)])
    return x0 + P


def p_boundary(problem: Problem, n: int = 16) -> np.ndarray:
    rad = problem.params.o_radius + problem.params.delta0
    x0 = problem.x0
    if problem.grid.d == 1:
        return x0 + np.array([[-rad], [rad]])
    ang = 2 * np.pi * np.arange(n) / n
    return x0 + rad * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def endpoint_signs(problem: Problem, s0, theta1: float) -> bool:
    lo = initial_path(problem.x0, -1.0, problem, s0, theta1)
    hi = initial_path(problem.x0, 1.0, problem, s0, theta1)
    return lo.pohozaev > 0 and hi.pohozaev < 0


def choose_theta1(problem: Problem, s0, max_halvings: int = 6) -> float:
    """Halve ``θ1`` until the endpoint signs of ``P_{V0}`` hold."""
    theta1 = problem.params.theta1
    for _ in range(max_halvings + 1):
        if endpoint_signs(problem, s0, theta1):
            return theta1
        theta1 /= 2
    raise SolveError("endpoint-signs", "P_V0 endpoint signs fail for every tried theta1")


@dataclass
class PathLevel:
    c: float
    argmax: PathPoint
    boundary_max: float
    margin: float
    nu3: float
    theta1: float
    R1: float
    samples: list[PathPoint] = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "argmax": self.argmax.to_dict(),
            "boundary_max": self.boundary_max,
            "margin": self.margin,
            "nu3": self.nu3,
            "theta1": self.theta1,
            "R1": self.R1,
            "n_samples": len(self.samples),
        }


def path_level(problem: Problem, s0, n_s: int = 33, n_p: int = 9, theta1: float | None = None) -> PathLevel:
    """Maximum of ``Γ_ε`` over the sampled path, with its argmax and the boundary maximum."""
    theta1 = choose_theta1(problem, s0) if theta1 is None else theta1
    ss = np.linspace(-1.0, 1.0, n_s)
    ps = p_samples(problem, n_p)
    bps = p_boundary(problem)
    rad = problem.params.o_radius + problem.params.delta0
    samples, boundary = [], []
    for p in ps:
        on_edge = abs(np.linalg.norm(p - problem.x0) - rad) < 1e-9
        for s in ss:
            pt = initial_path(p, s, problem, s0, theta1)
            samples.append(pt)
            if on_edge or abs(s) == 1.0:
                boundary.append(pt.gamma)
    if problem.grid.d == 2:
        for p in bps:
            for s in ss:
                boundary.append(initial_path(p, s, problem, s0, theta1).gamma)
    key = [(-pt.gamma, *pt.p, pt.s) for pt in samples]
    best = samples[min(range(len(samples)), key=key.__getitem__)]
    bmax = max(boundary)
    offsets = [
        float(np.linalg.norm(pt.p - pt.eps_upsilon)) / problem.eps
        for pt in samples
        if np.all(np.isfinite(pt.eps_upsilon))
    ]
    E = s0.top.level
    return PathLevel(
        c=best.gamma,
        argmax=best,
        boundary_max=bmax,
        margin=best.gamma - bmax,
        nu3=(E - bmax) / 2,
        theta1=theta1,
        R1=max(offsets) if offsets else float("nan"),
        samples=samples,
    )


# -- degree ----------------------------------------------------------------------------


def degree_map(p, s: float, problem: Problem, s0, budget: int = 0, theta1: float | None = None) -> np.ndarray:
    """``(εΥ - x0, P_{V0})`` at the path point, after ``budget`` descent steps."""
    pt = initial_path(p, s, problem, s0, theta1)
    u = pt.u
    if budget > 0:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            u = descend(u, problem, StopRule(tol=0.0, max_iter=budget, retract=False)).final.u
    rep = barycenter(u, problem)
    if rep.degenerate:
        raise DegenerateBarycenter("degree map at a degenerate field")
    return np.concatenate([problem.eps * rep.value - problem.x0, [pohozaev_P(u, problem.V0, problem)]])


def boundary_loop(n: int, p_lo: float, p_hi: float) -> np.ndarray:
    """``n`` points on the boundary of ``[p_lo, p_hi] x [-1, 1]``, counterclockwise from ``(p_lo, -1)``."""
    w, h = p_hi - p_lo, 2.0
    per = 2 * (w + h)
    t = np.arange(n) * per / n
    pts = np.empty((n, 2))
    for i, ti in enumerate(t):
        if ti < w:
            pts[i] = (p_lo + ti, -1.0)
        elif ti < w + h:
            pts[i] = (p_hi, -1.0 + (ti - w))
        elif ti < 2 * w + h:
            pts[i] = (p_hi - (ti - w - h), 1.0)
        else:
            pts[i] = (p_lo, 1.0 - (ti - 2 * w - h))
    return pts


def winding_degree(values) -> int:
    """Winding number about the origin of the closed polygon through ``values``."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
        raise ValueError("need at least three planar samples")
    if np.any(np.all(v == 0.0, axis=1)):
        raise OriginHit("a loop sample lies at the origin")
    ang = np.arctan2(v[:, 1], v[:, 0])
    inc = np.diff(np.concatenate([ang, ang[:1]]))
    inc = (inc + np.pi) % (2 * np.pi) - np.pi
    worst = float(np.max(np.abs(inc)))
    if worst > np.pi / 2:
        raise Undersampled(f"angle jump {worst:.3f} exceeds pi/2; refine the loop")
    total = inc.sum() / (2 * np.pi)
    return int(np.rint(total))


@dataclass
class DegreeReport:
    degree: int
    n_samples: int
    max_jump: float
    min_radius: float
    values: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "n_samples": self.n_samples,
            "max_jump": self.max_jump,
            "min_radius": self.min_radius,
        }


def loop_degree(problem: Problem, s0, n: int = 256, budget: int = 0, theta1: float | None = None) -> DegreeReport:
    """Degree of the map ``(p, s) -> (εΥ - x0, P_{V0})`` on the boundary of ``O^{δ0} x [-1, 1]`` (d = 1)."""
    if problem.grid.d != 1:
        raise ValueError("the loop degree is defined for d = 1")
    theta1 = choose_theta1(problem, s0) if theta1 is None else theta1
    rad = problem.params.o_radius + problem.params.delta0
    x0 = float(problem.x0[0])
    pts = boundary_loop(n, x0 - rad, x0 + rad)
    vals = np.array([degree_map([p], s, problem, s0, budget, theta1) for p, s in pts])
    # rescale each component to unit spread so angles are not dominated by one axis
    scale = np.max(np.abs(vals), axis=0)
    scaled = vals / np.where(scale > 0, scale, 1.0)
    deg = winding_degree(scaled)
    ang = np.arctan2(scaled[:, 1], scaled[:, 0])
    inc = np.diff(np.concatenate([ang, ang[:1]]))
    inc = (inc + np.pi) % (2 * np.pi) - np.pi
    return DegreeReport(deg, n, float(np.max(np.abs(inc))), float(np.min(np.linalg.norm(scaled, axis=1))), vals)


# -- solve ---------------------------------------------------------------------------------


@dataclass
class SolveRecord:
    eps: float
    u: np.ndarray = field(repr=False)
    gamma: float
    residual: float
    penalty: float
    x_eps: list
    dist_V: float
    decay_c: float | None
    decay_C: float | None
    decay_r2: float | None
    decay_window: list | None
    pohozaev_relative: float
    manifold_distance: float | None
    in_Z: bool | None
    c_eps: float
    path_margin: float
    iterations: int
    reason: str
    max_point: list
    trace: FlowTrace | None = field(default=None, repr=False)
    checks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k not in ("u", "trace")}
        out["in_Z"] = None if self.in_Z is None else bool(self.in_Z)
        return out

    def original_axes(self, grid) -> tuple[np.ndarray, ...]:
        """Axes of ``v_ε(x) = u_ε(x/ε)`` in original coordinates."""
        return tuple(self.eps * a for a in grid.axes)


def solve(problem: Problem, s0, stop: StopRule | None = None, path: PathLevel | None = None, decay_window=(5.0, 15.0)) -> SolveRecord:
    """Min-max level, descent from its argmax, then validation of the limit point."""
    from .verify import tail_profile

    stop = stop or StopRule(tol=problem.params.tol, max_iter=problem.params.max_iter)
    path = path or path_level(problem, s0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        trace = descend(path.argmax.u, problem, stop, s0=s0)
    final = trace.final
    u = final.u
    grid = problem.grid
    x_eps = problem.eps * final.upsilon
    dist_V = float(np.linalg.norm(x_eps - problem.x0))
    m = float(problem.potential(x_eps))
    kin = energy_report(u, problem).kinetic * 2
    poho = abs(pohozaev_P(u, m, problem)) / kin if kin > 0 else float("nan")
    reach = grid.L - float(np.max(np.abs(final.upsilon - np.asarray(grid.origin))))
    window = (decay_window[0], min(decay_window[1], reach - grid.h))
    try:
        dec = tail_profile(u, problem, window=window)
        decay = (dec.c, dec.C, dec.r2, list(window))
    except ValueError:
        decay = (None, None, None, None)
    imax = np.unravel_index(int(np.argmax(u)), u.shape)
    rec = SolveRecord(
        eps=problem.eps,
        u=u,
        gamma=final.energy,
        residual=final.residual,
        penalty=final.penalty,
        x_eps=[float(v) for v in x_eps],
        dist_V=dist_V,
        decay_c=decay[0],
        decay_C=decay[1],
        decay_r2=decay[2],
        decay_window=decay[3],
        pohozaev_relative=poho,
        manifold_distance=trace.final_distance,
        in_Z=trace.final_in_Z,
        c_eps=path.c,
        path_margin=path.margin,
        iterations=final.iteration,
        reason=trace.reason,
        max_point=[float(problem.eps * grid.points[imax][k]) for k in range(grid.d)],
        trace=trace,
    )
    rec.checks = {
        "converged": trace.reason == "converged",
        "penalty_zero": final.penalty == 0.0,
        "in_Z": bool(trace.final_in_Z),
        "monotone": trace.monotone(),
        "drift_ok": trace.drift_ok(),
    }
    if not rec.checks["converged"]:
        raise SolveError("converged", f"descent stopped with reason '{trace.reason}'", rec)
    if not rec.checks["penalty_zero"]:
        raise SolveError("penalty_zero", f"penalty {final.penalty:.3e} at the limit point", rec)
    return rec
