"""Numerical experiments for the decay, gradient-floor and concentration estimates."""

from __future__ import annotations

import warnings
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .domain import Problem, apply_dirichlet, check_field
from .functionals import dual_norm, residual, riesz
from .limit import BoxWarning, ground_state
from .localization import (
    DegenerateBarycenter,
    barycenter,
    he_norm,
    manifold_distance,
    member_field,
)


class RecursionHypothesisError(ValueError):
    """The sampled ``Q`` does not satisfy the recursion hypothesis."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


# -- tail decay ---------------------------------------------------------------------


@dataclass
class DecayReport:
    radii: np.ndarray
    Q: np.ndarray
    slope: float
    intercept: float
    r2: float
    window: tuple[float, float]
    center: np.ndarray

    @property
    def c(self) -> float:
        return -self.slope

    @property
    def C(self) -> float:
        return float(np.exp(self.intercept))

    def to_dict(self) -> dict:
        return {
            "radii": [float(r) for r in self.radii],
            "Q": [float(q) for q in self.Q],
            "slope": self.slope,
            "intercept": self.intercept,
            "c": self.c,
            "C": self.C,
            "r2": self.r2,
            "window": list(self.window),
            "center": [float(c) for c in np.atleast_1d(self.center)],
        }


def _node_density(u: np.ndarray, grid) -> tuple[np.ndarray, np.ndarray]:
    """Nonnegative per-location energy terms with their positions.

    Squared forward differences sit at edge midpoints, ``u²`` at nodes, so the
    sum over everything equals ``‖∇u‖² + ‖u‖²`` in the discrete sense.
    """
    pos = [grid.points.reshape(-1, grid.d)]
    val = [(u * u).ravel()]
    for ax in range(grid.d):
        du = np.diff(u, axis=ax) / grid.h
        lo = [slice(None)] * grid.d
        lo[ax] = slice(None, -1)
        mid = grid.points[tuple(lo)].copy()
        mid[..., ax] += 0.5 * grid.h
        pos.append(mid.reshape(-1, grid.d))
        val.append((du * du).ravel())
    return np.concatenate(pos), np.concatenate(val) * grid.cell


def tail_profile(
    u: np.ndarray,
    problem: Problem,
    radii=None,
    window: tuple[float, float] = (5.0, 15.0),
    center=None,
) -> DecayReport:
    """``Q(R) = ∫_{|x - Υ(u)| > R} |∇u|² + u²`` and a log-linear fit over ``window``."""
    grid = problem.grid
    u = check_field(u, grid)
    if center is None:
        rep = barycenter(u, problem)
        if rep.degenerate:
            raise DegenerateBarycenter("tail profile needs a barycenter")
        center = rep.value
    center = np.asarray(center, dtype=float).reshape(grid.d)
    lo = np.asarray(grid.origin) - grid.L
    hi = np.asarray(grid.origin) + grid.L
    reach = float(np.min(np.minimum(center - lo, hi - center)))
    if window[0] >= window[1] or window[0] < 0 or window[1] > reach:
        raise ValueError(
            f"fit window {window} outside the data (box reaches {reach:.3f} from the center)"
        )
    if radii is None:
        radii = np.arange(0.0, reach + 1e-12, 0.5)
    radii = np.asarray(radii, dtype=float)
    pos, val = _node_density(u, grid)
    dist = np.linalg.norm(pos - center, axis=-1)
    order = np.argsort(dist)
    cum = np.concatenate([[0.0], np.cumsum(val[order][::-1])])[::-1]
    # Q(R) sums the terms with distance > R
    idx = np.searchsorted(dist[order], radii, side="right")
    Q = cum[idx]
    sel = (radii >= window[0]) & (radii <= window[1]) & (Q > 0)
    if sel.sum() < 3:
        raise ValueError("fewer than three positive samples in the fit window")
    x, y = radii[sel], np.log(Q[sel])
    slope, intercept = np.polyfit(x, y, 1)
    fit = slope * x + intercept
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayReport(radii, Q, float(slope), float(intercept), r2, tuple(window), center)


def decay_recursion_check(Q, theta: float, b: float, R1: float = 0.0) -> bool:
    """Check the conclusion of the scalar decay recursion on a sampled ``Q``.

    ``Q[k]`` is ``Q(R1 + k)``.  The hypothesis (``Q`` non-increasing and
    ``Q(r) <= Q(r-1)/θ + b``) is verified first; a violation raises
    :class:`RecursionHypothesisError` naming the step.  Returns whether
    ``Q(R) <= θ^{R1+1} Q(R1) e^{-R ln θ} + θb/(θ-1)`` at every sampled
    ``R > R1 + 1``.
    """
    if not theta > 1:
        raise ValueError("theta must exceed 1")
    if b < 0:
        raise ValueError("b must be non-negative")
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 1 or Q.size < 2:
        raise ValueError("need at least two samples of Q")
    for k in range(1, Q.size):
        if Q[k] > Q[k - 1]:
            raise RecursionHypothesisError(k, f"Q increases from {Q[k-1]:.6g} to {Q[k]:.6g}")
        if Q[k] > Q[k - 1] / theta + b:
            raise RecursionHypothesisError(
                k, f"Q(r) = {Q[k]:.6g} exceeds Q(r-1)/theta + b = {Q[k-1] / theta + b:.6g}"
            )
    R = R1 + np.arange(Q.size)
    ln = np.log(theta)
    bound = np.exp((R1 + 1) * ln - R * ln) * Q[0] + theta * b / (theta - 1)
    check = R > R1 + 1
    slack = 1e-12 * np.maximum(np.abs(bound), 1.0)
    return bool(np.all(Q[check] <= bound[check] + slack[check]))


def recursion_instances(rng, n: int, valid: bool, length: int = 30):
    """Random ``(Q, θ, b)`` triples satisfying (or violating at one step) ``Q(r) <= Q(r-1)/θ + b``."""
    out = []
    for _ in range(n):
        theta = float(rng.uniform(1.1, 4.0))
        b = float(rng.uniform(0.0, 1.0))
        Q = [float(rng.uniform(1.0, 10.0))]
        for _ in range(length - 1):
            cap = Q[-1] / theta + b
            Q.append(min(Q[-1], cap * float(rng.uniform(0.0, 1.0))))
        k = None
        if not valid:
            # push one sample above the recursion cap but keep Q non-increasing
            cands = [j for j in range(1, length) if Q[j - 1] > Q[j - 1] / theta + b]
            k = int(rng.choice(cands)) if cands else None
            if k is None:
                Q[0] = Q[0] * 10 + 10 * b * theta
                k = 1
            hi = Q[k - 1]
            lo = Q[k - 1] / theta + b
            Q[k] = lo + (hi - lo) * float(rng.uniform(0.1, 1.0))
            for j in range(k + 1, length):
                Q[j] = min(Q[j], Q[j - 1])
        out.append((np.array(Q), theta, b, k))
    return out


# -- directional derivative -------------------------------------------------------------


def d1(u: np.ndarray, grid, axis: int = 0) -> np.ndarray:
    """Central difference along ``axis``, zero on the boundary layer."""

    def sl(a, b):
        return tuple(slice(a, b) if k == axis else slice(None) for k in range(u.ndim))

    out = np.zeros_like(u)
    out[sl(1, -1)] = (u[sl(2, None)] - u[sl(None, -2)]) / (2 * grid.h)
    return apply_dirichlet(out)


@dataclass
class DirectionalReport:
    eps: float
    z: list
    m: float
    dV: float
    pairing: float
    measured: float
    predicted: float
    ratio: float
    dual_residual: float
    derivative_norm: float
    upper_bound: float
    aux_distance: float

    def to_dict(self) -> dict:
        return asdict(self)


def directional_derivative_test(z, problem: Problem, gradient_floor: float = 1e-8) -> DirectionalReport:
    """Translation derivative of ``J_ε`` at a ground state placed at ``z/ε``.

    ``u`` is the ground state at ``m = V(z)`` centred at ``z/ε``.  ``measured``
    is ``d/dt J_ε(u(· - t e_1))`` at ``t = 0``, i.e. ``-⟨J_ε'(u), ∂_1 u⟩``, and
    ``predicted`` is ``(ε/2) ∂_1V(z) ∫u²``.  The auxiliary field
    ``w = (-Δ + V_ε)^{-1} f(u)`` is solved as well; ``aux_distance`` is
    ``‖u - w‖_ε``.
    """
    grid = problem.grid
    eps = problem.eps
    z = np.asarray(z, dtype=float).reshape(grid.d)
    grad = problem.potential.gradient(z)
    if np.linalg.norm(grad) < gradient_floor:
        raise ValueError(f"|grad V(z)| = {np.linalg.norm(grad):.3e} is below the floor {gradient_floor:g}")
    m = float(problem.potential(z))
    g = ground_state(min(m, problem.V0), problem)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoxWarning)
        u = g.field(grid, center=z / eps)
    r = residual(u, problem, with_penalty=False)
    du = d1(u, grid, 0)
    pairing = float(np.sum(r * du)) * grid.cell
    mass = float(np.sum(u * u)) * grid.cell
    predicted = 0.5 * eps * float(grad[0]) * mass
    measured = -pairing
    gres = riesz(r, problem)
    dn = dual_norm(r, problem, gres)
    dnorm = he_norm(du, problem)
    w = riesz(problem.nonlinearity.f(u) * grid.interior, problem)
    return DirectionalReport(
        eps=eps,
        z=[float(v) for v in z],
        m=m,
        dV=float(grad[0]),
        pairing=pairing,
        measured=measured,
        predicted=predicted,
        ratio=measured / predicted,
        dual_residual=dn,
        derivative_norm=dnorm,
        upper_bound=dn * dnorm,
        aux_distance=he_norm(u - w, problem),
    )


def loglog_slope(x, y) -> float:
    x = np.log(np.abs(np.asarray(x, dtype=float)))
    y = np.log(np.abs(np.asarray(y, dtype=float)))
    return float(np.polyfit(x, y, 1)[0])


# -- gradient floor ----------------------------------------------------------------------


@dataclass
class EnsembleSpec:
    """Ensemble recipe for the gradient-floor experiment.

    ``n_perturb`` seeded smooth perturbations per base field, scaled to each
    fraction of ``rho0`` in ``fractions``; ``n_rays`` directions (d = 2) and
    ``n_radii`` radii sample the annulus for regime (a).
    """

    seed: int = 0
    n_perturb: int = 6
    fractions: tuple[float, ...] = (0.45, 0.7, 0.95)
    small_fraction: float = 0.2
    n_radii: int = 4
    n_rays: int = 8
    n_bumps: int = 4


@dataclass
class Member:
    id: str
    regime: str
    eps: float
    variant: str
    dual: float
    dist: float
    upsilon_offset: float
    in_set: bool
    duality_ok: bool


@dataclass
class FloorRow:
    eps: float
    regime: str
    min_dual_norm: float
    witness: str
    n_members: int
    n_in_set: int
    min_dual_norm_all: float
    witness_all: str

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FloorTable:
    rows: list[FloorRow]
    members: list[Member] = field(default_factory=list)

    def column(self, regime: str, key: str = "min_dual_norm") -> tuple[np.ndarray, np.ndarray]:
        rows = sorted((r for r in self.rows if r.regime == regime), key=lambda r: -r.eps)
        return np.array([r.eps for r in rows]), np.array([getattr(r, key) for r in rows])

    def duality_ok(self) -> bool:
        return all(m.duality_ok for m in self.members)


def _rays(d: int, n: int) -> list[np.ndarray]:
    if d == 1:
        return [np.array([1.0]), np.array([-1.0])]
    ang = 2 * np.pi * np.arange(n) / n
    return [np.array([np.cos(a), np.sin(a)]) for a in ang]


def _perturbation(rng, grid, center, R0, n_bumps):
    w = np.zeros(grid.shape)
    for _ in range(n_bumps):
        c = center + rng.uniform(-R0, R0, size=grid.d)
        width = rng.uniform(0.5, 2.0)
        w += rng.normal() * np.exp(-grid.distance(c) ** 2 / width**2)
    w[~grid.interior] = 0.0
    return w


def _evaluate(u, problem, s0):
    r = residual(u, problem)
    g = riesz(r, problem)
    dn = dual_norm(r, problem, g)
    du = d1(u, problem.grid, 0)
    nd = he_norm(du, problem)
    pair = abs(float(np.sum(r * du)) * problem.grid.cell)
    duality = nd == 0 or pair / nd <= dn * (1 + 1e-6) + 1e-14
    rep = barycenter(u, problem)
    if rep.degenerate:
        return dn, np.inf, np.nan, duality
    dist = manifold_distance(u, s0, problem).dist
    off = problem.distance_to_O(problem.eps * rep.value)
    return dn, dist, off, duality


def _floor_ensemble(problem: Problem, s0, spec: EnsembleSpec):
    """Base fields ``(regime, id, field_fn)`` for one problem."""
    grid = problem.grid
    p = problem.params
    pot = problem.potential
    x0 = problem.x0
    V0 = problem.V0
    bases = []
    lo_m = V0 - p.delta0
    # regime (a): S0 members at points of the annulus where V equals their m
    r_in, r_out = p.o_radius + p.delta0, p.o_radius + 3 * p.delta0
    for j, e in enumerate(_rays(grid.d, spec.n_rays)):
        radii = np.linspace(r_in, r_out, 400)
        vals = pot(x0 + radii[:, None] * e)
        ok = (vals >= lo_m) & (vals <= V0)
        if not ok.any():
            continue
        rr = np.linspace(radii[ok][0], radii[ok][-1], spec.n_radii)
        for k, rad in enumerate(rr):
            z = x0 + rad * e
            m = float(min(pot(z), V0))
            bases.append(("a", f"a-r{j}-{k}", z, m))
    # regime (b): sampled S0 members placed where V equals their m, inside O^{3δ0}
    e = _rays(grid.d, spec.n_rays)[0]
    radii = np.linspace(0.0, r_out, 2000)
    vals = pot(x0 + radii[:, None] * e)
    for k, g in enumerate(sorted({round(g.m, 12) for g in s0})):
        i = int(np.argmin(np.abs(vals - g)))
        bases.append(("b", f"b-m{k}", x0 + radii[i] * e, float(g)))
    return bases


def gradient_floor_experiment(eps_list, make_problem, s0, spec: EnsembleSpec | None = None) -> FloorTable:
    """Minimum dual gradient norm over seeded ensembles, per ε and regime.

    Regime (a): barycenter at distance in ``[δ0, 3δ0)`` from ``O`` and manifold
    distance below ``ρ0``.  Regime (b): barycenter within ``3δ0`` of ``O`` and
    manifold distance in ``[ρ0/3, ρ0]``.  ``min_dual_norm`` is taken over the
    members meeting these conditions; ``min_dual_norm_all`` drops the
    manifold-distance condition.  Each base appears with and without the
    cutoff ``φ_ε``.
    """
    spec = spec or EnsembleSpec()
    rows, members = [], []
    for eps in eps_list:
        problem = make_problem(eps)
        p = problem.params
        bases = _floor_ensemble(problem, s0, spec)
        if not bases:
            raise ValueError(f"empty ensemble at eps={eps}")
        grid = problem.grid
        found: dict[str, list[Member]] = {"a": [], "b": []}
        for regime, bid, z, m in bases:
            g = ground_state(m, problem)
            center = z / eps
            if not grid.contains(center, margin=grid.h):
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", BoxWarning)
                variants = {"cut": member_field(g, problem, center), "uncut": g.field(grid, center=center)}
            for vname, u0 in variants.items():
                if regime == "a":
                    fracs = [0.0] + [spec.small_fraction] * spec.n_perturb
                else:
                    fracs = [f for f in spec.fractions for _ in range(spec.n_perturb)]
                for k, frac in enumerate(fracs):
                    if frac == 0.0:
                        u = u0
                    else:
                        rng = np.random.default_rng([spec.seed, ord(regime), zlib.crc32(bid.encode()), k])
                        w = _perturbation(rng, grid, center, p.R0, spec.n_bumps)
                        u = u0 + frac * p.rho0 * w / he_norm(w, problem)
                    dn, dist, off, duality = _evaluate(u, problem, s0)
                    if regime == "a":
                        in_set = dist < p.rho0 and p.delta0 <= off < 3 * p.delta0
                    else:
                        in_set = p.rho0 / 3 <= dist <= p.rho0 and off < 3 * p.delta0
                    mem = Member(f"{bid}-{vname}-{k}", regime, eps, vname, dn, dist, off, bool(in_set), bool(duality))
                    found[regime].append(mem)
                    members.append(mem)
        for regime in ("a", "b"):
            group = found[regime]
            if not group:
                raise ValueError(f"empty ensemble for regime {regime} at eps={eps}")
            inside = [mm for mm in group if mm.in_set]
            best = min(inside, key=lambda mm: (mm.dual, mm.id)) if inside else None
            if regime == "a":
                pool = [mm for mm in group if p.delta0 <= mm.upsilon_offset < 3 * p.delta0]
            else:
                pool = [mm for mm in group if mm.upsilon_offset < 3 * p.delta0]
            best_all = min(pool or group, key=lambda mm: (mm.dual, mm.id))
            rows.append(
                FloorRow(
                    eps=eps,
                    regime=regime,
                    min_dual_norm=best.dual if best else float("nan"),
                    witness=best.id if best else "",
                    n_members=len(group),
                    n_in_set=len(inside),
                    min_dual_norm_all=best_all.dual,
                    witness_all=best_all.id,
                )
            )
    return FloorTable(rows, members)


# -- convergence diagnostics ----------------------------------------------------------------


@dataclass
class Diagnostics:
    dist: float
    m: float
    theta: float
    shift: list
    offset: float
    R0: float

    @property
    def within_2R0(self) -> bool:
        return self.offset <= 2 * self.R0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["within_2R0"] = self.within_2R0
        return out


def convergence_diagnostics(u: np.ndarray, problem: Problem, s0) -> Diagnostics:
    """Best-fit translated member of ``S0`` and its offset from ``Υ(u)``."""
    rec = manifold_distance(u, s0, problem)
    rep = barycenter(u, problem)
    if rep.degenerate:
        raise DegenerateBarycenter("diagnostics need a barycenter")
    return Diagnostics(
        dist=rec.dist,
        m=rec.m,
        theta=rec.theta,
        shift=[float(v) for v in rec.shift],
        offset=float(np.linalg.norm(rec.shift - rep.value)),
        R0=float(problem.params.R0),
    )


def soliton(grid, m: float = 1.0, center=None) -> np.ndarray:
    """Closed-form 1D cubic soliton ``√(2m) sech(√m x)`` (reference field)."""
    c = np.zeros(grid.d) if center is None else np.asarray(center, dtype=float)
    r = grid.distance(c)
    u = np.sqrt(2 * m) / np.cosh(np.sqrt(m) * r)
    u[~grid.interior] = 0.0
    return u


__all__ = [
    "DecayReport",
    "DirectionalReport",
    "Diagnostics",
    "EnsembleSpec",
    "FloorTable",
    "RecursionHypothesisError",
    "convergence_diagnostics",
    "decay_recursion_check",
    "directional_derivative_test",
    "gradient_floor_experiment",
    "loglog_slope",
    "soliton",
    "tail_profile",
]
