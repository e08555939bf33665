"""Smooth barycenter, tail penalty and distances to the ground-state manifold."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage, optimize

from .domain import Grid, Problem, check_field, gradient_energy

DENOMINATOR_FLOOR = 1e-8


class DegenerateBarycenter(ValueError):
    """The field carries no ball of mass above the lower knot of ψ."""


# -- cutoffs ------------------------------------------------------------------------


def smoothstep(t):
    """Quintic ``6t^5 - 15t^4 + 10t^3`` clipped to ``[0, 1]``."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def smoothstep_prime(t):
    inside = (t > 0) & (t < 1)
    t = np.clip(t, 0.0, 1.0)
    return np.where(inside, 30.0 * t * t * (1.0 - t) ** 2, 0.0)


@dataclass(frozen=True)
class CutoffSpec:
    """Knots of the three cutoffs.

    ``psi`` rises from 0 to 1 on ``[rho1^2/16, rho1^2/2]`` (ball masses),
    ``phi`` falls from 1 to 0 on ``[delta0/2, delta0]`` (original-coordinate
    radius) and ``chi`` rises from 0 to 1 on ``[1, 2]``.
    """

    rho1: float
    delta0: float

    @property
    def psi_knots(self) -> tuple[float, float]:
        return self.rho1**2 / 16.0, self.rho1**2 / 2.0

    def psi(self, r):
        a, b = self.psi_knots
        return smoothstep((np.asarray(r) - a) / (b - a))

    def dpsi(self, r):
        a, b = self.psi_knots
        return smoothstep_prime((np.asarray(r) - a) / (b - a)) / (b - a)

    def phi(self, r):
        half = self.delta0 / 2.0
        return 1.0 - smoothstep((np.asarray(r) - half) / half)

    def dphi(self, r):
        half = self.delta0 / 2.0
        return -smoothstep_prime((np.asarray(r) - half) / half) / half

    @staticmethod
    def chi(r):
        return smoothstep(np.asarray(r) - 1.0)

    @staticmethod
    def dchi(r):
        return smoothstep_prime(np.asarray(r) - 1.0)

    def as_dict(self) -> dict:
        a, b = self.psi_knots
        return {
            "psi_knots": [a, b],
            "phi_knots": [self.delta0 / 2.0, self.delta0],
            "chi_knots": [1.0, 2.0],
        }


def cutoffs(problem: Problem) -> CutoffSpec:
    p = problem.params
    if p.rho1 is None:
        raise ValueError("rho1 is not set; build the ground-state set first")
    return CutoffSpec(rho1=p.rho1, delta0=p.delta0)


def _require_R0(problem: Problem) -> float:
    if problem.params.R0 is None:
        raise ValueError("R0 is not set; build the ground-state set first")
    return problem.params.R0


# -- ball masses ----------------------------------------------------------------------


def ball_footprint(grid: Grid, R: float) -> np.ndarray:
    k = int(np.floor(R / grid.h + 1e-9))
    offs = np.arange(-k, k + 1) * grid.h
    if grid.d == 1:
        return np.ones(2 * k + 1)
    X, Y = np.meshgrid(offs, offs, indexing="ij")
    return (X * X + Y * Y <= R * R * (1 + 1e-12)).astype(float)


def _ball_sum(a: np.ndarray, grid: Grid, R: float) -> np.ndarray:
    return ndimage.convolve(a, ball_footprint(grid, R), mode="constant", cval=0.0)


def ball_mass(u: np.ndarray, grid: Grid, P, R0: float) -> float:
    """``∫_{B(P,R0)} u²`` over grid nodes with ``|x - P| <= R0``."""
    inside = grid.distance(P) <= R0 * (1 + 1e-12)
    return float(np.sum(u[inside] ** 2)) * grid.cell


def ball_masses(u: np.ndarray, grid: Grid, R0: float) -> np.ndarray:
    """``ball_mass(u, P)`` for every grid node ``P``."""
    return _ball_sum(u * u, grid, R0) * grid.cell


# -- barycenter ---------------------------------------------------------------------


@dataclass
class BarycenterReport:
    value: np.ndarray
    denominator: float
    degenerate: bool

    def to_dict(self) -> dict:
        out = asdict(self)
        out["value"] = [float(v) for v in np.atleast_1d(self.value)]
        return out


def _weights(u, problem):
    grid = problem.grid
    R0 = _require_R0(problem)
    cut = cutoffs(problem)
    masses = ball_masses(u, grid, R0)
    return masses, cut.psi(masses), cut


def barycenter(u: np.ndarray, problem: Problem) -> BarycenterReport:
    """Smoothed center of mass ``∫ d(u,P) P dP / ∫ d(u,P) dP``."""
    grid = problem.grid
    _, dP, _ = _weights(u, problem)
    denom = float(dP.sum()) * grid.cell
    if denom < DENOMINATOR_FLOOR:
        return BarycenterReport(np.full(grid.d, np.nan), denom, True)
    num = np.tensordot(dP, grid.points, axes=grid.d) * grid.cell
    return BarycenterReport(num / denom, denom, False)


def barycenter_gradient(u: np.ndarray, problem: Problem) -> np.ndarray:
    """L² representers of ``Υ'(u)``, shape ``(d,) + grid.shape``.

    ``Υ'(u)v = Σ_x v(x) rep[k](x) h^d`` exactly for the discrete ``Υ``.
    """
    grid = problem.grid
    masses, dP, cut = _weights(u, problem)
    denom = float(dP.sum()) * grid.cell
    if denom < DENOMINATOR_FLOOR:
        raise DegenerateBarycenter(f"barycenter denominator {denom:.3e} below floor")
    ups = np.tensordot(dP, grid.points, axes=grid.d) * grid.cell / denom
    slope = cut.dpsi(masses)
    R0 = problem.params.R0
    reps = np.empty((grid.d,) + grid.shape)
    for k in range(grid.d):
        g = slope * (grid.points[..., k] - ups[k])
        reps[k] = 2.0 * u * _ball_sum(g, grid, R0) * grid.cell / denom
    return reps


def barycenter_directional(u: np.ndarray, v: np.ndarray, problem: Problem) -> np.ndarray:
    """Central finite difference of ``Υ`` along ``v``."""
    nv = float(np.sqrt(np.sum(v * v)))
    if nv == 0.0:
        return np.zeros(problem.grid.d)
    t = 1e-4 * float(np.sqrt(np.sum(u * u))) / nv
    plus = barycenter(u + t * v, problem)
    minus = barycenter(u - t * v, problem)
    if plus.degenerate or minus.degenerate:
        raise DegenerateBarycenter("directional derivative at a degenerate field")
    return (plus.value - minus.value) / (2.0 * t)


# -- penalty -------------------------------------------------------------------------


def _chi_field(problem: Problem, ups: np.ndarray):
    grid = problem.grid
    se = np.sqrt(problem.eps)
    diff = grid.points - ups
    r = np.linalg.norm(diff, axis=-1)
    return CutoffSpec.chi(se * r), diff, r


def outside_mass(u: np.ndarray, problem: Problem, ups=None) -> float:
    """``ε^{-1/2} ∫ χ_{ε,u} u²``."""
    grid = problem.grid
    if ups is None:
        rep = barycenter(u, problem)
        if rep.degenerate:
            raise DegenerateBarycenter("penalty needs a barycenter")
        ups = rep.value
    chi, _, _ = _chi_field(problem, ups)
    return float(np.sum(chi * u * u)) * grid.cell / np.sqrt(problem.eps)


def _trivially_inside(u, problem) -> bool:
    # χ <= 1, so a total mass below sqrt(ε) keeps the penalty at zero for any Υ
    return float(np.sum(u * u)) * problem.grid.cell <= np.sqrt(problem.eps)


def penalty(u: np.ndarray, problem: Problem) -> float:
    """``Φ_ε(u) = (ε^{-1/2} ∫ χ_{ε,u} u² - 1)_+²``."""
    if _trivially_inside(u, problem):
        return 0.0
    a = outside_mass(u, problem)
    return max(a - 1.0, 0.0) ** 2


def penalty_gradient(u: np.ndarray, problem: Problem) -> np.ndarray:
    """L² representer of ``Φ_ε'(u)``, including the variation of ``Υ``."""
    grid = problem.grid
    if _trivially_inside(u, problem):
        return np.zeros(grid.shape)
    rep = barycenter(u, problem)
    if rep.degenerate:
        raise DegenerateBarycenter("penalty gradient needs a barycenter")
    ups = rep.value
    chi, diff, r = _chi_field(problem, ups)
    se = np.sqrt(problem.eps)
    a = float(np.sum(chi * u * u)) * grid.cell / se
    excess = a - 1.0
    if excess <= 0.0:
        return np.zeros(grid.shape)
    out = 2.0 * chi * u
    dchi = CutoffSpec.dchi(se * r)
    if np.any(dchi):
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, diff / r[..., None], 0.0)
        reps = barycenter_gradient(u, problem)
        for k in range(grid.d):
            # ∂χ_{ε,u}/∂Υ_k = -sqrt(ε) χ'(.) (x_k - Υ_k)/|x - Υ|
            coef = -se * float(np.sum(dchi * unit[..., k] * u * u)) * grid.cell
            out = out + coef * reps[k]
    return 2.0 * excess / se * out


# -- ground-state manifold ------------------------------------------------------------


def member_field(member, problem: Problem, center, amplitude: float = 1.0) -> np.ndarray:
    """``amplitude * (φ_ε U)(x - center)`` on the grid (``U`` possibly dilated)."""
    grid = problem.grid
    r = grid.distance(center)
    cut = CutoffSpec(rho1=problem.params.rho1 or 1.0, delta0=problem.params.delta0)
    # φ_ε vanishes beyond δ0/ε, so only the support is evaluated
    live = (problem.eps * r < problem.params.delta0) & grid.interior
    out = np.zeros(grid.shape)
    rl = r[live]
    out[live] = amplitude * cut.phi(problem.eps * rl) * member(rl)
    return out


def _template(member, problem: Problem) -> tuple[np.ndarray, int]:
    """``(φ_ε U)`` on node offsets ``k h``, ``|k| <= K``, covering the cutoff support."""
    grid = problem.grid
    K = int(np.ceil(problem.params.delta0 / (problem.eps * grid.h)))
    offs = np.arange(-K, K + 1) * grid.h
    mesh = np.meshgrid(*([offs] * grid.d), indexing="ij")
    r = np.sqrt(sum(m * m for m in mesh))
    cut = CutoffSpec(rho1=problem.params.rho1 or 1.0, delta0=problem.params.delta0)
    return cut.phi(problem.eps * r) * member(r), K


def _place(T: np.ndarray, K: int, idx, grid: Grid) -> np.ndarray:
    """Template centred on node ``idx``, clipped to the grid, boundary zeroed."""
    out = np.zeros(grid.shape)
    dst, src = [], []
    for i in idx:
        lo, hi = i - K, i + K + 1
        dst.append(slice(max(lo, 0), min(hi, grid.n)))
        src.append(slice(max(lo, 0) - lo, 2 * K + 1 - (hi - min(hi, grid.n))))
    out[tuple(dst)] = T[tuple(src)]
    out[~grid.interior] = 0.0
    return out


def he_norm(w: np.ndarray, problem: Problem) -> float:
    grid = problem.grid
    return float(
        np.sqrt(gradient_energy(w, grid.h) + np.sum(problem.V_eps * w * w) * grid.cell)
    )


@dataclass
class DistanceRecord:
    dist: float
    member_index: int
    m: float
    theta: float
    shift: np.ndarray

    def to_dict(self) -> dict:
        return {
            "dist": self.dist,
            "member_index": self.member_index,
            "m": self.m,
            "theta": self.theta,
            "shift": [float(s) for s in np.atleast_1d(self.shift)],
        }


def manifold_distance(u: np.ndarray, s0, problem: Problem, search_radius: float | None = None) -> DistanceRecord:
    """Distance in ``H_ε`` from ``u`` to the translated, cut-off members of ``S0``.

    Coarse search over grid-node shifts within ``search_radius`` (default
    ``2 R0 + 2h``) of ``Υ(u)``, then a continuous refinement of the shift.
    """
    grid = problem.grid
    u = check_field(u, grid)
    members = list(s0)
    if not members:
        raise ValueError("empty ground-state set")
    rep = barycenter(u, problem) if problem.params.localized else None
    if rep is None or rep.degenerate:
        seed = np.zeros(grid.d) + np.asarray(grid.origin)
        coarse = [seed]
    else:
        seed = rep.value
        radius = search_radius if search_radius is not None else 2.0 * problem.params.R0 + 2 * grid.h
        k = int(np.ceil(radius / grid.h))
        base = np.rint(seed / grid.h) * grid.h
        offs = np.arange(-k, k + 1) * grid.h
        if grid.d == 1:
            coarse = [base + np.array([o]) for o in offs]
        else:
            coarse = [base + np.array([a, b]) for a in offs for b in offs if a * a + b * b <= (radius + grid.h) ** 2]

    nodes = [grid.nearest_index(y) for y in coarse]
    aligned = all(np.allclose(grid.points[i], y, atol=1e-9 * grid.h) for i, y in zip(nodes, coarse))
    best = None
    for idx, member in enumerate(members):
        def dist_at(y, member=member):
            return he_norm(u - member_field(member, problem, y), problem)

        if aligned:
            T, K = _template(member, problem)
            vals = [he_norm(u - _place(T, K, i, grid), problem) for i in nodes]
        else:
            vals = [dist_at(y) for y in coarse]
        j = int(np.argmin(vals))
        y0 = coarse[j]
        if rep is None or rep.degenerate:
            y_best, d_best = y0, vals[j]
        elif grid.d == 1:
            res = optimize.minimize_scalar(
                lambda t: dist_at(np.array([t])),
                bounds=(y0[0] - grid.h, y0[0] + grid.h),
                method="bounded",
                options={"xatol": 1e-6 * grid.h},
            )
            y_best, d_best = np.array([res.x]), float(res.fun)
        else:
            res = optimize.minimize(
                dist_at, y0, method="Nelder-Mead",
                options={"xatol": 1e-5 * grid.h, "fatol": 1e-12, "initial_simplex": [y0, y0 + [grid.h, 0], y0 + [0, grid.h]]},
            )
            y_best, d_best = np.asarray(res.x), float(res.fun)
        if d_best > vals[j]:
            y_best, d_best = y0, vals[j]
        key = (d_best, idx)
        if best is None or key < best[0]:
            best = (key, idx, member, y_best)
    (d_best, idx), _, member, y_best = best
    return DistanceRecord(
        dist=float(d_best),
        member_index=idx,
        m=float(member.m),
        theta=float(getattr(member, "theta", 0.0)),
        shift=np.asarray(y_best, dtype=float),
    )


def zset_membership(u: np.ndarray, rho: float, delta: float, s0, problem: Problem) -> bool:
    """``dist(u, S_ε) < ρ`` and ``dist(εΥ(u), O) < δ``."""
    rep = barycenter(u, problem)
    if rep.degenerate:
        return False
    if problem.distance_to_O(problem.eps * rep.value) >= delta:
        return False
    return manifold_distance(u, s0, problem).dist < rho
