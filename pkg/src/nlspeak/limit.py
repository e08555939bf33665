"""Ground states of ``-ΔU + mU = f(U)``, the curve ``m -> E_m`` and ``S0``.

Radial profiles are found by shooting on ``U(0)`` with bisection.  The
shooting solution tracks the decaying separatrix only up to the point where
the unstable mode takes over, so beyond a matching radius the profile is
continued by the linear decaying solution ``r^{-ν} K_ν(√m r)``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import integrate, interpolate, special

from .domain import DomainError, Problem, read_field, write_field


class ShootingError(RuntimeError):
    """No bracket for the shooting parameter, or the bisection stalled."""


class BoxWarning(UserWarning):
    """A field does not decay to zero inside the computational box."""


def _omega(d: int) -> float:
    return 2.0 if d == 1 else 2.0 * np.pi


def _tail(r, m, d):
    """Decaying radial solution of ``-ΔU + mU = 0`` (up to a constant)."""
    k = np.sqrt(m)
    r = np.asarray(r, dtype=float)
    if d == 1:
        return np.exp(-k * r), -k * np.exp(-k * r)
    return special.k0(k * r), -k * special.k1(k * r)


@dataclass
class GroundState:
    """Radial ground state with derived quantities.

    Calling the object evaluates ``U`` (dilated by ``theta``) at radius ``r``.
    Quadratures use the continuous profile, not a grid.
    """

    m: float
    d: int
    amplitude: float
    r_match: float
    level: float
    mass: float
    kinetic: float
    nonlinear: float
    pohozaev: float
    decay_rate: float
    theta: float = 0.0
    _spline: interpolate.CubicHermiteSpline = field(default=None, repr=False)
    _tail_scale: float = field(default=1.0, repr=False)

    @property
    def l2(self) -> float:
        return float(np.sqrt(self.mass))

    @property
    def pohozaev_relative(self) -> float:
        return abs(self.pohozaev) / self.kinetic

    def profile(self, r):
        """Undilated ``U(r)``."""
        r = np.abs(np.asarray(r, dtype=float))
        inner = r <= self.r_match
        out = np.empty_like(r)
        out[inner] = self._spline(r[inner])
        with np.errstate(under="ignore"):
            out[~inner] = self._tail_scale * _tail(np.maximum(r[~inner], 1e-300), self.m, self.d)[0]
        return out

    def __call__(self, r):
        return self.profile(np.exp(-self.theta) * np.asarray(r, dtype=float))

    def dilated(self, theta: float) -> GroundState:
        out = GroundState(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        out.theta = float(theta)
        return out

    def field(self, grid, center=None, theta: float = 0.0, amplitude: float = 1.0) -> np.ndarray:
        """``amplitude * U(e^{-θ}|x - center|)`` on a grid, zero on the boundary."""
        c = np.zeros(grid.d) if center is None else center
        r = grid.distance(c)
        u = amplitude * self.profile(np.exp(-(self.theta + theta)) * r)
        edge = np.abs(u[~grid.interior]).max() if u.size else 0.0
        if edge > 1e-8 * max(abs(amplitude) * self.amplitude, 1e-300):
            warnings.warn(f"profile is {edge:.2e} on the box boundary", BoxWarning, stacklevel=2)
        u[~grid.interior] = 0.0
        return u

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "d": self.d,
            "theta": self.theta,
            "amplitude": self.amplitude,
            "level": self.level,
            "mass": self.mass,
            "kinetic": self.kinetic,
            "pohozaev": self.pohozaev,
            "pohozaev_relative": self.pohozaev_relative,
            "decay_rate": self.decay_rate,
            "r_match": self.r_match,
        }


# -- shooting ------------------------------------------------------------------------


def _series_start(a, m, f, d, r0):
    c = m * a - float(f(a))
    return np.array([a + c * r0 * r0 / (2 * d), c * r0 / d]), c


def _shoot(a, m, f, d, r_max, dense=False):
    """Integrate from ``U(0) = a``; +1 if ``U`` hits zero, -1 if ``U'`` turns positive."""
    r0 = 1e-6 / np.sqrt(m)
    y0, c = _series_start(a, m, f, d, r0)
    if c >= 0 and not dense:
        return -1, None

    def rhs(r, y):
        u, v = y
        acc = m * u - float(f(u))
        if d > 1:
            acc -= (d - 1) / r * v
        return [v, acc]

    def hit_zero(r, y):
        return y[0]

    hit_zero.terminal = True
    hit_zero.direction = -1

    def turn(r, y):
        return y[1]

    turn.terminal = True
    turn.direction = 1

    sol = integrate.solve_ivp(
        rhs, (r0, r_max), y0, method="DOP853", events=(hit_zero, turn),
        rtol=1e-12, atol=1e-14 * a, dense_output=dense,
    )
    if sol.t_events[0].size:
        return 1, sol
    if sol.t_events[1].size:
        return -1, sol
    return (1 if sol.y[0, -1] < 0 else -1), sol


def _bracket(m, f, d, t0, r_max):
    hi = max(float(t0), 1e-8)
    for _ in range(60):
        if _shoot(hi, m, f, d, r_max)[0] > 0:
            break
        hi *= 1.5
    else:
        raise ShootingError(f"no overshooting amplitude found for m={m}; check that F(t) > m t^2/2 somewhere")
    lo = hi
    for _ in range(200):
        lo *= 0.8
        if _shoot(lo, m, f, d, r_max)[0] < 0:
            return lo, hi
        hi = lo
    raise ShootingError(f"no undershooting amplitude found for m={m}")


def _bisect(lo, hi, m, f, d, r_max, width=1e-12):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= width * hi or mid in (lo, hi):
            return lo, hi
        if _shoot(mid, m, f, d, r_max)[0] > 0:
            hi = mid
        else:
            lo = mid
    raise ShootingError("bisection did not converge")


def ground_state(m: float, problem: Problem, dr: float = 2e-3) -> GroundState:
    """Positive radial ground state of ``-ΔU + mU = f(U)`` in the grid dimension."""
    V0 = problem.V0
    if not 0 < m <= V0 * (1 + 1e-12):
        raise DomainError(f"mass coefficient {m} outside (0, V0={V0}]")
    nl = problem.nonlinearity
    t0 = problem.params.t0
    if not float(nl.F(t0)) > m * t0 * t0 / 2:
        raise DomainError(f"superlinearity check fails at m={m}: F({t0}) <= m t0^2/2")
    return _ground_state(float(m), problem.grid.d, nl, float(t0), float(dr))


@lru_cache(maxsize=256)
def _ground_state(m, d, nl, t0, dr) -> GroundState:
    f = nl.f
    r_max = 80.0 / np.sqrt(m)
    lo, hi = _bracket(m, f, d, t0, r_max)
    lo, hi = _bisect(lo, hi, m, f, d, r_max)
    a = lo
    _, sol = _shoot(a, m, f, d, r_max, dense=True)
    if sol is None or not sol.t_events[1].size:
        raise ShootingError(f"undershooting trajectory for m={m} did not turn")
    r_turn = float(sol.t_events[1][0])
    u_min = float(sol.sol(r_turn)[0])

    # match where the decaying branch dominates the unstable one by 10^3
    rs = np.arange(0.0, r_turn, dr)
    rs[0] = sol.t[0]
    ys = sol.sol(rs)
    keep = np.nonzero(ys[0] >= 1e3 * max(u_min, 0.0))[0]
    if keep.size < 10:
        raise ShootingError(f"shooting resolved too little of the profile for m={m}")
    n_keep = keep[-1] + 1
    rs, us, vs = rs[:n_keep], ys[0, :n_keep], ys[1, :n_keep]
    rs[0], us[0], vs[0] = 0.0, a, 0.0
    r_match = float(rs[-1])
    spline = interpolate.CubicHermiteSpline(rs, us, vs)
    tail_scale = float(us[-1] / _tail(r_match, m, d)[0])

    # quadrature on a fine radial grid well into the tail
    r_end = r_match + 40.0 / np.sqrt(m)
    rq = np.concatenate([rs, np.arange(r_match + dr, r_end, dr)])
    tail_u, tail_v = _tail(rq[n_keep:], m, d)
    uq = np.concatenate([us, tail_scale * tail_u])
    vq = np.concatenate([vs, tail_scale * tail_v])
    wq = _omega(d) * (rq ** (d - 1) if d > 1 else np.ones_like(rq))
    mass = float(integrate.simpson(wq * uq * uq, x=rq))
    kin = float(integrate.simpson(wq * vq * vq, x=rq))
    nonlin = float(integrate.simpson(wq * nl.F(uq), x=rq))
    level = 0.5 * kin + 0.5 * m * mass - nonlin
    poho = 0.5 * (d - 2) * kin + 0.5 * d * m * mass - d * nonlin

    win = (rs >= r_match / 3) & (rs <= 2 * r_match / 3)
    y = np.log(us[win] * rs[win] ** ((d - 1) / 2.0))
    decay = float(np.polyfit(rs[win], y, 1)[0])

    return GroundState(
        m=float(m), d=d, amplitude=float(a), r_match=r_match, level=level, mass=mass,
        kinetic=kin, nonlinear=nonlin, pohozaev=poho, decay_rate=decay,
        _spline=spline, _tail_scale=tail_scale,
    )


def energy_curve(ms, problem: Problem) -> list[tuple[float, float]]:
    """``(m, E_m)`` pairs; ``ms`` must be strictly increasing and ``E_m`` comes out increasing."""
    ms = [float(m) for m in ms]
    if not ms:
        raise ValueError("empty list of mass coefficients")
    for a, b in zip(ms, ms[1:]):
        if not b > a:
            raise ValueError(f"ms must be strictly increasing: {a} then {b}")
    curve = [(m, ground_state(m, problem).level) for m in ms]
    for (m1, e1), (m2, e2) in zip(curve, curve[1:]):
        if not e2 > e1:
            raise ShootingError(f"E_m not increasing between m={m1} ({e1}) and m={m2} ({e2})")
    return curve


def dilation_path(U0: GroundState, theta: float, s: float, grid, center=None) -> np.ndarray:
    """``s * U0(e^{-θ}x)`` sampled on the grid."""
    if s < 0:
        raise ValueError("amplitude must be non-negative")
    if s == 0:
        return grid.zeros()
    return U0.field(grid, center=center, theta=theta, amplitude=s)


# -- S0 ----------------------------------------------------------------------------


@dataclass
class GroundStateSet:
    """Finite sample of ``S0`` with the localisation constants it determines."""

    members: list[GroundState]
    R0: float
    rho1: float
    rho2: float
    rho0: float
    theta0: float
    energies: list[tuple[float, float]]

    def __iter__(self):
        return iter(self.members)

    def __len__(self):
        return len(self.members)

    @property
    def top(self) -> GroundState:
        """Undilated ground state at the largest ``m`` (``U0`` of the path)."""
        undilated = [g for g in self.members if g.theta == 0.0]
        return max(undilated, key=lambda g: g.m)

    def apply(self, problem: Problem) -> Problem:
        return problem.with_params(R0=self.R0, rho1=self.rho1, rho2=self.rho2, rho0=self.rho0)

    def manifest(self) -> dict:
        return {
            "R0": self.R0,
            "rho1": self.rho1,
            "rho2": self.rho2,
            "rho0": self.rho0,
            "theta0": self.theta0,
            "energies": [[m, e] for m, e in self.energies],
            "members": [g.to_dict() for g in self.members],
        }


def _radial_mass(g: GroundState, R: float, dr: float = 1e-3) -> float:
    """``‖U‖²`` over the ball of radius ``R`` (dilation included)."""
    if R <= 0:
        return 0.0
    r = np.arange(0.0, R + dr / 2, dr)
    w = _omega(g.d) * (r ** (g.d - 1) if g.d > 1 else np.ones_like(r))
    return float(integrate.simpson(w * g(r) ** 2, x=r))


def _total_mass(g: GroundState) -> float:
    return g.mass * np.exp(g.d * g.theta)


def localisation_constants(members, max_iter: int = 50) -> tuple[float, float]:
    """Jointly consistent ``(R0, rho1)``.

    ``rho1`` is just below ``(4/3) min ‖U‖_{L²(B(0,R0/2))}`` and ``R0`` is the
    smallest radius (on a 0.01 lattice, at least 1) with every tail norm
    below ``rho1/8``.
    """
    R0 = 1.0
    rho1 = None
    seen = set()
    for _ in range(max_iter):
        rho1 = (4.0 / 3.0) * min(np.sqrt(_radial_mass(g, R0 / 2)) for g in members) * (1 - 1e-3)
        R_new = 1.0
        for g in members:
            total = _total_mass(g)
            R = R_new
            while np.sqrt(max(total - _radial_mass(g, R), 0.0)) >= rho1 / 8:
                R += 0.01
            R_new = max(R_new, R)
        R_new = round(R_new, 2)
        if abs(R_new - R0) < 1e-9:
            return R0, rho1
        if R_new < R0 and R_new in seen:
            # lattice 2-cycle: the larger radius already meets the tail bound
            return R0, rho1
        seen.add(R0)
        R0 = R_new
    raise ShootingError("R0 / rho1 iteration did not settle")


def _sign_pattern_holds(g: GroundState, theta: float, problem: Problem, ss) -> bool:
    # P_V0(s U(e^{-θ}.)) and d/ds L_V0 along s, from radial quadrature
    m, d = g.m, g.d
    r = np.arange(0.0, g.r_match + 40 / np.sqrt(m), 2e-3)
    w = _omega(d) * (r ** (d - 1) if d > 1 else np.ones_like(r))
    u = g.profile(r)
    du = np.gradient(u, r)
    scale = np.exp(d * theta)
    kin = float(integrate.simpson(w * du * du, x=r)) * np.exp((d - 2) * theta)
    mass = float(integrate.simpson(w * u * u, x=r)) * scale
    nl = problem.nonlinearity
    for s in ss:
        Fs = float(integrate.simpson(w * nl.F(s * u), x=r)) * scale
        fs = float(integrate.simpson(w * nl.f(s * u) * u, x=r)) * scale
        P = 0.5 * (d - 2) * s * s * kin + 0.5 * d * m * s * s * mass - d * Fs
        dL = s * kin + m * s * mass - fs
        if s < 1 and not (P > 0 and dL > 0):
            return False
        if s > 1 and not (P < 0 and dL < 0):
            return False
    return True


def estimate_theta0(U0: GroundState, problem: Problem, s_max: float = 1.5, n_s: int = 33) -> float:
    """Largest ``θ`` on a 0.01 lattice in ``(0, 0.5]`` keeping the sign pattern on a sampled ``s`` path."""
    ss = [s for s in np.linspace(0.0, s_max, n_s)[1:] if abs(s - 1.0) > 1e-12]
    theta0 = 0.0
    for theta in np.arange(0.01, 0.5001, 0.01):
        if _sign_pattern_holds(U0, theta, problem, ss) and _sign_pattern_holds(U0, -theta, problem, ss):
            theta0 = float(theta)
        else:
            break
    return theta0


def build_S0(problem: Problem) -> GroundStateSet:
    """Ground states at ``m ∈ {V0-δ0, V0-δ0/2, V0}`` (plus dilations when d = 2)."""
    V0 = problem.V0
    delta0 = problem.params.delta0
    ms = sorted({round(m, 12) for m in (V0 - delta0, V0 - delta0 / 2, V0)})
    if ms[0] <= 0:
        raise DomainError("delta0 must be smaller than V0")
    states = [ground_state(m, problem) for m in ms]
    energies = [(g.m, g.level) for g in states]
    for (m1, e1), (m2, e2) in zip(energies, energies[1:]):
        if not e2 > e1:
            raise ShootingError(f"E_m not increasing between m={m1} and m={m2}")
    if len(states) > 1 and not 2 * energies[0][1] > energies[-1][1]:
        raise DomainError(
            f"delta0={delta0} too large: 2 E(V0 - delta0) = {2 * energies[0][1]:.6f} "
            f"<= E(V0) = {energies[-1][1]:.6f}"
        )
    theta0 = 0.0
    members = list(states)
    if problem.grid.d == 2:
        theta0 = estimate_theta0(states[-1], problem)
        if theta0 > 0:
            members = [g.dilated(t) for g in states for t in (-theta0, 0.0, theta0)]
    R0, rho1 = localisation_constants(members)
    rho2 = 0.5 * min(np.sqrt(_total_mass(g)) for g in members)
    rho0 = min(rho1, rho2) / 32.0
    return GroundStateSet(members, R0, rho1, rho2, rho0, theta0, energies)


def save_S0(s0: GroundStateSet, problem: Problem, directory) -> list[Path]:
    """Write one snapshot per member plus ``manifest.json``; returns the files written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    manifest = s0.manifest()
    for i, g in enumerate(s0.members):
        name = f"member_{i:02d}.snls"
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BoxWarning)
            files.append(write_field(directory / name, g.field(problem.grid), problem.grid))
        manifest["members"][i]["file"] = name
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    files.append(path)
    return files


def load_S0(problem: Problem, directory) -> GroundStateSet:
    """Rebuild a saved set; members are re-solved from ``m`` and checked against the manifest."""
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no ground-state set at {directory} (run the 'limit' command first)")
    manifest = json.loads(path.read_text())
    cache: dict[float, GroundState] = {}
    members = []
    for rec in manifest["members"]:
        m = rec["m"]
        if m not in cache:
            cache[m] = ground_state(m, problem)
        g = cache[m]
        if abs(g.amplitude - rec["amplitude"]) > 1e-9 * rec["amplitude"]:
            raise ShootingError(f"re-solved ground state at m={m} disagrees with the manifest")
        if "file" in rec:
            read_field(directory / rec["file"])
        members.append(g.dilated(rec["theta"]) if rec["theta"] else g)
    return GroundStateSet(
        members, manifest["R0"], manifest["rho1"], manifest["rho2"], manifest["rho0"],
        manifest["theta0"], [tuple(e) for e in manifest["energies"]],
    )
