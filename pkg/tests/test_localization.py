import numpy as np
import pytest

from nlspeak.domain import grid_for_spacing
from nlspeak.localization import (
    CutoffSpec,
    ball_mass,
    ball_masses,
    barycenter,
    barycenter_directional,
    barycenter_gradient,
    manifold_distance,
    member_field,
    penalty,
    penalty_gradient,
    smoothstep,
    zset_membership,
)

from conftest import localized


def test_smoothstep_ends():
    assert smoothstep(0.0) == 0.0 and smoothstep(1.0) == 1.0 and smoothstep(0.5) == 0.5
    assert smoothstep(-1.0) == 0.0 and smoothstep(2.0) == 1.0


def test_cutoff_knots():
    c = CutoffSpec(rho1=2.0, delta0=0.6)
    assert c.psi(0.25 - 1e-9) == 0.0 and c.psi(2.0) == 1.0
    assert c.phi(0.3) == 1.0 and c.phi(0.6) == 0.0
    assert CutoffSpec.chi(1.0) == 0.0 and CutoffSpec.chi(2.0) == 1.0


def test_ball_mass_matches_convolution():
    problem, s0 = localized(0.2)
    u = s0.top.field(problem.grid)
    masses = ball_masses(u, problem.grid, problem.params.R0)
    i = problem.grid.n // 2 + 7
    P = problem.grid.points[i]
    assert masses[i] == pytest.approx(ball_mass(u, problem.grid, P, problem.params.R0), rel=1e-12)


def test_barycenter_of_centered_member():
    problem, s0 = localized(0.1)
    u = member_field(s0.top, problem, [3.0])
    rep = barycenter(u, problem)
    assert not rep.degenerate
    assert rep.value[0] == pytest.approx(3.0, abs=1e-9)


def test_barycenter_degenerate_on_zero():
    problem, _ = localized(0.1)
    assert barycenter(problem.grid.zeros(), problem).degenerate


def test_barycenter_gradient_matches_finite_difference():
    problem, s0 = localized(0.1)
    x = problem.grid.points[..., 0]
    u = member_field(s0.top, problem, [0.4]) + 0.3 * np.exp(-((x - 2.0) ** 2))
    v = np.exp(-((x - 1.0) ** 2) / 4)
    v[~problem.grid.interior] = 0.0
    rep = barycenter_gradient(u, problem)
    exact = float(np.sum(rep[0] * v)) * problem.grid.cell
    assert exact == pytest.approx(barycenter_directional(u, v, problem)[0], rel=1e-5, abs=1e-9)


def test_penalty_and_gradient_on_spread_field():
    problem, s0 = localized(0.1)
    x = problem.grid.points[..., 0]
    u = member_field(s0.top, problem, [0.0]) + 0.5 * np.exp(-((x - 12.0) ** 2) / 4)
    u[~problem.grid.interior] = 0.0
    assert penalty(u, problem) > 0
    v = np.exp(-((x - 11.0) ** 2) / 4)
    t = 1e-6
    fd = (penalty(u + t * v, problem) - penalty(u - t * v, problem)) / (2 * t)
    g = float(np.sum(penalty_gradient(u, problem) * v)) * problem.grid.cell
    assert g == pytest.approx(fd, rel=1e-5)


def test_manifold_distance_of_member_is_tiny():
    problem, s0 = localized(0.1)
    u = member_field(s0.members[1], problem, [0.35])
    rec = manifold_distance(u, s0, problem)
    assert rec.dist < 1e-6
    assert rec.m == pytest.approx(s0.members[1].m)
    assert rec.shift[0] == pytest.approx(0.35, abs=1e-6)


def test_zset_membership():
    problem, s0 = localized(0.1)
    u = member_field(s0.top, problem, [0.0])
    assert zset_membership(u, s0.rho0, problem.params.delta0, s0, problem)
    far = member_field(s0.top, problem, [30.0])
    assert not zset_membership(far, s0.rho0, problem.params.delta0, s0, problem)


def test_2d_barycenter():
    from conftest import reference_problem
    from nlspeak.limit import build_S0

    grid = grid_for_spacing(2, 6.0, 0.2)
    problem = reference_problem(eps=0.4, d=2).with_grid(grid)
    s0 = build_S0(problem)
    problem = s0.apply(problem)
    u = member_field(s0.top, problem, [0.4, -0.6])
    assert np.allclose(barycenter(u, problem).value, [0.4, -0.6], atol=1e-9)
