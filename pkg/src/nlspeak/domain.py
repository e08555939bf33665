"""Grids, potentials, nonlinearities and the parameter bundle.

Everything works in rescaled coordinates ``x`` where the equation reads
``-Δu + V(εx) u = f(u)``.  Fields are plain ``numpy`` arrays of shape
``grid.shape`` with homogeneous Dirichlet values on the outer layer of nodes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

MAX_NODES = 1 << 22

SNAPSHOT_MAGIC = b"SNLS"
SNAPSHOT_VERSION = 1


class DomainError(ValueError):
    """Invalid grid, potential, nonlinearity or parameter input."""


@dataclass(frozen=True)
class Grid:
    """Uniform box grid ``[-L, L]^d`` (shifted by ``origin``) with ``n`` nodes per axis."""

    d: int
    L: float
    n: int
    origin: tuple[float, ...] = ()

    def __post_init__(self):
        if self.d not in (1, 2):
            raise DomainError(f"dimension must be 1 or 2, got {self.d}")
        if not self.L > 0:
            raise DomainError(f"half-width must be positive, got {self.L}")
        if self.n < 3 or self.n % 2 == 0:
            raise DomainError(f"points per axis must be odd and >= 3, got {self.n}")
        if self.n**self.d > MAX_NODES:
            raise DomainError(
                f"{self.n}^{self.d} nodes exceeds the memory budget of {MAX_NODES}"
            )
        if not self.origin:
            object.__setattr__(self, "origin", (0.0,) * self.d)
        elif len(self.origin) != self.d:
            raise DomainError("origin must have one entry per axis")

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.n - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def cell(self) -> float:
        """Quadrature weight ``h^d``."""
        return self.h**self.d

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        # symmetric about the centre node, which sits exactly at the origin
        k = np.arange(self.n) - (self.n - 1) // 2
        return tuple(o + k * self.h for o in self.origin)

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape ``grid.shape + (d,)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    @cached_property
    def interior(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[(slice(1, -1),) * self.d] = True
        return mask

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def distance(self, center) -> np.ndarray:
        """``|x - center|`` at every node."""
        c = np.asarray(center, dtype=float).reshape(self.d)
        return np.linalg.norm(self.points - c, axis=-1)

    def nearest_index(self, point) -> tuple[int, ...]:
        p = np.asarray(point, dtype=float).reshape(self.d)
        idx = np.rint((p - np.asarray(self.origin) + self.L) / self.h).astype(int)
        return tuple(int(np.clip(i, 0, self.n - 1)) for i in idx)

    def contains(self, point, margin: float = 0.0) -> bool:
        p = np.asarray(point, dtype=float).reshape(self.d)
        lo = np.asarray(self.origin) - self.L + margin
        hi = np.asarray(self.origin) + self.L - margin
        return bool(np.all(p >= lo) and np.all(p <= hi))


def make_grid(d: int, L: float, n: int) -> Grid:
    """Build a grid with ``h = 2L/(n-1)`` and node coordinates ``-L + i h``."""
    return Grid(d=int(d), L=float(L), n=int(n))


def grid_for_spacing(d: int, L: float, h: float) -> Grid:
    """Grid with spacing exactly ``h`` and half-width at least ``L``."""
    half = int(np.ceil(L / h - 1e-9))
    return Grid(d=int(d), L=half * h, n=2 * half + 1)


def check_field(u: np.ndarray, grid: Grid | None = None) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if grid is not None and u.shape != grid.shape:
        raise DomainError(f"field shape {u.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(u)):
        raise DomainError("field contains non-finite values")
    return u


def apply_dirichlet(u: np.ndarray) -> np.ndarray:
    """Zero the outer layer of nodes (in place) and return ``u``."""
    for ax in range(u.ndim):
        idx = [slice(None)] * u.ndim
        idx[ax] = 0
        u[tuple(idx)] = 0.0
        idx[ax] = -1
        u[tuple(idx)] = 0.0
    return u


# -- potentials ---------------------------------------------------------------


@dataclass(frozen=True)
class GaussianBump:
    """``V(x) = v_inf + amplitude * exp(-|x - center|^2 / width^2)``."""

    v_inf: float = 1.0
    amplitude: float = 1.0
    center: tuple[float, ...] = (0.0,)
    width: float = 1.0
    kind: str = field(default="gaussian-bump", init=False)
    has_gradient: bool = field(default=True, init=False)

    def __post_init__(self):
        if not self.v_inf > 0:
            raise DomainError("v_inf must be positive")
        if not self.amplitude > 0:
            raise DomainError("amplitude must be positive for an interior maximum")
        if not self.width > 0:
            raise DomainError("width must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def V0(self) -> float:
        return self.v_inf + self.amplitude

    @property
    def argmax(self) -> np.ndarray:
        return np.asarray(self.center)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r2 = np.sum((x - np.asarray(self.center)) ** 2, axis=-1)
        return self.v_inf + self.amplitude * np.exp(-r2 / self.width**2)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        dx = x - np.asarray(self.center)
        r2 = np.sum(dx**2, axis=-1)
        g = -2.0 * self.amplitude / self.width**2 * np.exp(-r2 / self.width**2)
        return g[..., None] * dx


@dataclass(frozen=True, eq=False)
class TabulatedPotential:
    """Potential sampled on a regular grid, interpolated linearly.

    ``values`` is indexed ``[i, j, ...]`` over ``axes``; outside the table the
    value is held at ``fill`` (defaults to the table minimum).
    """

    axes: tuple[np.ndarray, ...]
    values: np.ndarray
    fill: float | None = None
    kind: str = field(default="tabulated", init=False)
    has_gradient: bool = field(default=False, init=False)

    def __post_init__(self):
        from scipy.interpolate import RegularGridInterpolator

        vals = np.asarray(self.values, dtype=float)
        if vals.min() <= 0:
            raise DomainError("tabulated potential must be positive")
        fill = float(vals.min()) if self.fill is None else float(self.fill)
        interp = RegularGridInterpolator(
            tuple(np.asarray(a, dtype=float) for a in self.axes),
            vals,
            bounds_error=False,
            fill_value=fill,
        )
        object.__setattr__(self, "_interp", interp)

    @property
    def d(self) -> int:
        return len(self.axes)

    @property
    def V0(self) -> float:
        return float(np.max(self.values))

    @property
    def argmax(self) -> np.ndarray:
        idx = np.unravel_index(np.argmax(self.values), np.shape(self.values))
        return np.array([a[i] for a, i in zip(self.axes, idx)])

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self._interp(x.reshape(-1, self.d)).reshape(x.shape[:-1])

    def gradient(self, x, step: float = 1e-5) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape)
        for k in range(self.d):
            e = np.zeros(self.d)
            e[k] = step
            out[..., k] = (self(x + e) - self(x - e)) / (2 * step)
        return out


# -- nonlinearity ---------------------------------------------------------------


@dataclass(frozen=True)
class PowerNonlinearity:
    """``f(t) = t^(p-1)`` for ``t >= 0`` and ``0`` for ``t < 0``.

    With ``clamp`` set, ``f`` is held constant at ``f(clamp)`` beyond it and
    ``F`` continues affinely, so ``F`` stays the exact antiderivative.
    """

    p: float = 4.0
    clamp: float | None = None
    kind: str = field(default="power", init=False)

    def __post_init__(self):
        if not self.p > 2:
            raise DomainError(f"power must exceed 2, got {self.p}")
        if self.clamp is not None and not self.clamp > 0:
            raise DomainError("clamp level must be positive")

    @property
    def bound(self) -> float:
        """Sup of ``|f|`` on ``[0, inf)``; infinite without truncation."""
        return np.inf if self.clamp is None else self.clamp ** (self.p - 1)

    def _raw_f(self, t):
        return np.where(t > 0, np.abs(t) ** (self.p - 1), 0.0)

    def _raw_F(self, t):
        return np.where(t > 0, np.abs(t) ** self.p / self.p, 0.0)

    def f(self, t):
        t = np.asarray(t, dtype=float)
        if self.clamp is None:
            return self._raw_f(t)
        return self._raw_f(np.minimum(t, self.clamp))

    def F(self, t):
        t = np.asarray(t, dtype=float)
        if self.clamp is None:
            return self._raw_F(t)
        c = self.clamp
        below = self._raw_F(np.minimum(t, c))
        return below + np.where(t > c, self._raw_f(c) * (t - c), 0.0)

    def dF(self, a, b):
        """``F(a) - F(b)`` without cancellation when ``a`` and ``b`` are close."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        direct = self.F(a) - self.F(b)
        both = (a > 0) & (b > 0)
        if self.clamp is not None:
            both &= (a <= self.clamp) & (b <= self.clamp)
        if not np.any(both):
            return direct
        bb = np.where(both, b, 1.0)
        rel = np.where(both, (a - b) / bb, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            close = np.expm1(self.p * np.log1p(rel)) * bb**self.p / self.p
        return np.where(both, close, direct)

    def df(self, t):
        """Derivative of ``f`` (zero past the clamp)."""
        t = np.asarray(t, dtype=float)
        out = np.where(t > 0, (self.p - 1) * np.abs(t) ** (self.p - 2), 0.0)
        if self.clamp is not None:
            out = np.where(t > self.clamp, 0.0, out)
        return out


def truncate_nonlinearity(f: PowerNonlinearity, K: float) -> PowerNonlinearity:
    """Hold ``f`` constant at ``f(2K)`` beyond ``2K``."""
    if not K > 0:
        raise DomainError(f"truncation amplitude must be positive, got {K}")
    return replace(f, clamp=2.0 * float(K))


# -- parameters -----------------------------------------------------------------


@dataclass(frozen=True)
class Params:
    """Scalar constants shared by every module.

    ``o_radius`` is the radius of the neighbourhood ``O`` of the maximum set of
    ``V``; ``R0``, ``rho1`` and ``rho0`` are filled in from the ground-state set
    (see :func:`nlspeak.limit.build_S0`) and may be left ``None`` before that.
    """

    eps: float = 0.1
    delta0: float = 0.7
    o_radius: float = 0.3
    theta1: float = 0.2
    t0: float = 2.5
    R0: float | None = None
    rho1: float | None = None
    rho0: float | None = None
    rho2: float | None = None
    tol: float = 1e-8
    lin_tol: float = 1e-8
    max_iter: int = 500

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise DomainError(f"eps must lie in (0, 1), got {self.eps}")
        if not self.delta0 > 0:
            raise DomainError("delta0 must be positive")
        if not self.o_radius > 0:
            raise DomainError("o_radius must be positive")
        if not 0 < self.theta1 < 0.5:
            raise DomainError("theta1 must lie in (0, 1/2)")
        if self.rho0 is not None and self.rho1 is not None and self.rho0 > self.rho1:
            raise DomainError("rho0 must not exceed rho1")

    @property
    def localized(self) -> bool:
        return self.R0 is not None and self.rho1 is not None


@dataclass(frozen=True, eq=False)
class Problem:
    """Grid, potential, nonlinearity and constants for one value of ε."""

    grid: Grid
    potential: GaussianBump | TabulatedPotential
    nonlinearity: PowerNonlinearity
    params: Params

    def __post_init__(self):
        if self.potential.d != self.grid.d:
            raise DomainError("potential and grid dimensions differ")

    @property
    def eps(self) -> float:
        return self.params.eps

    @property
    def V0(self) -> float:
        return self.potential.V0

    @property
    def x0(self) -> np.ndarray:
        """Maximum point of ``V`` in original coordinates."""
        return np.asarray(self.potential.argmax, dtype=float)

    @cached_property
    def V_eps(self) -> np.ndarray:
        """``V(εx)`` sampled on the grid."""
        return self.potential(self.eps * self.grid.points)

    @cached_property
    def dV_eps(self) -> np.ndarray:
        """``∇V`` evaluated at ``εx``, shape ``grid.shape + (d,)``."""
        return self.potential.gradient(self.eps * self.grid.points)

    def with_params(self, **changes) -> Problem:
        return Problem(self.grid, self.potential, self.nonlinearity, replace(self.params, **changes))

    def with_grid(self, grid: Grid) -> Problem:
        return Problem(grid, self.potential, self.nonlinearity, self.params)

    def distance_to_O(self, x) -> float:
        """Distance of an original-coordinate point to ``O = B(x0, o_radius)``."""
        r = float(np.linalg.norm(np.asarray(x, dtype=float) - self.x0))
        return max(r - self.params.o_radius, 0.0)


def check_potential(potential, grid: Grid, eps: float, params: Params) -> dict:
    """Check positivity, interior maximum and annulus gradient of ``V``.

    Sampled at the original-coordinate points ``ε x`` of the grid.  Returns the sampled quantities; raises :class:`DomainError` when one fails.
    """
    x = eps * grid.points
    V = potential(x)
    v_min = float(V.min())
    floor = getattr(potential, "v_inf", v_min)
    if v_min < floor - 1e-12 or v_min <= 0:
        raise DomainError(f"potential not bounded below by v_inf: min V = {v_min}")
    boundary = V[~grid.interior]
    if not potential.V0 > boundary.max():
        raise DomainError("maximum of V is attained on the box boundary")
    r = np.linalg.norm(x - np.asarray(potential.argmax), axis=-1)
    annulus = (r >= params.o_radius) & (r <= params.o_radius + 3 * params.delta0)
    grad_min = None
    if annulus.any():
        g = np.linalg.norm(potential.gradient(x[annulus]), axis=-1)
        grad_min = float(g.min())
        if not grad_min > 0:
            raise DomainError("grad V vanishes on the annulus around O")
    box = eps * grid.L
    if params.o_radius + 5 * params.delta0 > box:
        raise DomainError(
            f"O^(5 delta0) of radius {params.o_radius + 5 * params.delta0:g} "
            f"does not fit in the box of half-width {box:g}"
        )
    return {"v_min": v_min, "v_boundary_max": float(boundary.max()), "grad_min_annulus": grad_min}


# -- norms ------------------------------------------------------------------------


def gradient_energy(u: np.ndarray, h: float) -> float:
    """``‖∇u‖²`` from forward differences over every grid edge."""
    total = 0.0
    for ax in range(u.ndim):
        du = np.diff(u, axis=ax) / h
        total += float(np.sum(du * du))
    return total * h**u.ndim


def norms(u: np.ndarray, problem: Problem) -> dict:
    """L², H¹ and ``H_ε`` norms of a field."""
    grid = problem.grid
    u = check_field(u, grid)
    w = grid.cell
    l2sq = float(np.sum(u * u)) * w
    grad = gradient_energy(u, grid.h)
    pot = float(np.sum(problem.V_eps * u * u)) * w
    return {"L2": np.sqrt(l2sq), "H1": np.sqrt(grad + l2sq), "He": np.sqrt(grad + pot)}


# -- snapshots ----------------------------------------------------------------------


def write_field(path, u: np.ndarray, grid: Grid) -> Path:
    """Write a field snapshot: 16-byte header, per-axis half-widths, then data."""
    u = check_field(u, grid)
    path = Path(path)
    header = struct.pack("<4sHHII", SNAPSHOT_MAGIC, SNAPSHOT_VERSION, grid.d, grid.n, 0)
    with path.open("wb") as fh:
        fh.write(header)
        fh.write(struct.pack(f"<{grid.d}d", *([grid.L] * grid.d)))
        fh.write(np.ascontiguousarray(u, dtype="<f8").tobytes())
    return path


def read_field(path) -> tuple[np.ndarray, Grid]:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise DomainError("snapshot too short")
    magic, version, d, n, _ = struct.unpack_from("<4sHHII", data, 0)
    if magic != SNAPSHOT_MAGIC:
        raise DomainError(f"bad snapshot magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise DomainError(f"unsupported snapshot version {version}")
    Ls = struct.unpack_from(f"<{d}d", data, 16)
    if len(set(Ls)) != 1:
        raise DomainError("anisotropic snapshots are not supported")
    grid = Grid(d=d, L=Ls[0], n=n)
    offset = 16 + 8 * d
    values = np.frombuffer(data, dtype="<f8", offset=offset)
    if values.size != grid.size:
        raise DomainError(f"snapshot holds {values.size} values, expected {grid.size}")
    return values.reshape(grid.shape).astype(float), grid
