import numpy as np
import pytest

from nlspeak.domain import make_grid
from nlspeak.localization import member_field
from nlspeak.verify import (
    EnsembleSpec,
    RecursionHypothesisError,
    convergence_diagnostics,
    decay_recursion_check,
    directional_derivative_test,
    gradient_floor_experiment,
    loglog_slope,
    recursion_instances,
    soliton,
    tail_profile,
)

from conftest import localized, reference_problem, solved


def test_soliton_decay_rate():
    p = reference_problem().with_grid(make_grid(1, 40.0, 801))
    rep = tail_profile(soliton(p.grid, 1.0), p, center=[0.0])
    assert 1.9 <= rep.c <= 2.1 and rep.r2 > 0.999


def test_compact_support_tail_is_zero():
    p = reference_problem().with_grid(make_grid(1, 40.0, 801))
    x = p.grid.points[..., 0]
    u = np.where(np.abs(x) < 2.0, np.cos(np.pi * x / 4) ** 2, 0.0)
    rep = tail_profile(u, p, radii=np.arange(0, 20.5, 0.5), window=(0.0, 1.9), center=[0.0])
    assert np.all(rep.Q[rep.radii > 2.0 + p.grid.h] == 0.0)


def test_tail_window_outside_box():
    p = reference_problem(eps=0.4)
    with pytest.raises(ValueError, match="window"):
        tail_profile(soliton(p.grid, 1.0), p, window=(5.0, 30.0), center=[0.0])


def test_tail_chi_mass_bound_at_converged_state():
    problem, _ = localized(0.1)
    rec = solved(0.1)
    rep = tail_profile(rec.u, problem)
    R = 1 / np.sqrt(problem.eps)
    Q = np.interp(R, rep.radii, rep.Q)
    assert Q / np.sqrt(problem.eps) < 1.0


def test_recursion_geometric():
    theta = 2.0
    Q = theta ** -np.arange(12.0)
    assert decay_recursion_check(Q, theta, 0.0)


def test_recursion_iterated_map():
    theta, b = 2.0, 1.0
    Q = [10.0]
    for _ in range(40):
        Q.append(Q[-1] / theta + b)
    assert decay_recursion_check(Q, theta, b)
    assert Q[-1] == pytest.approx(theta * b / (theta - 1), rel=1e-9)


def test_recursion_violation_names_step():
    Q = [8.0, 4.0, 3.9, 1.0]
    with pytest.raises(RecursionHypothesisError) as exc:
        decay_recursion_check(Q, 2.0, 0.0)
    assert exc.value.step == 2


def test_recursion_instances_generator():
    rng = np.random.default_rng(3)
    for Q, theta, b, _ in recursion_instances(rng, 20, True):
        assert decay_recursion_check(Q, theta, b)
    for Q, theta, b, k in recursion_instances(rng, 20, False):
        with pytest.raises(RecursionHypothesisError) as exc:
            decay_recursion_check(Q, theta, b)
        assert exc.value.step == k


def test_directional_oracle_values():
    rep = directional_derivative_test(np.array([0.5]), reference_problem(eps=0.1))
    assert rep.dV == pytest.approx(-2 * 0.5 * np.exp(-0.25))
    assert rep.m == pytest.approx(1 + np.exp(-0.25))
    assert abs(rep.predicted) == pytest.approx(2.0776 * 0.1, rel=1e-3)
    assert 0.75 <= rep.ratio <= 1.25
    assert abs(rep.pairing) <= rep.upper_bound * (1 + 1e-6)


def test_directional_at_maximum_rejected():
    with pytest.raises(ValueError, match="floor"):
        directional_derivative_test(np.array([0.0]), reference_problem(eps=0.1))


def test_loglog_slope():
    x = np.array([0.4, 0.2, 0.1])
    assert loglog_slope(x, 3 * x**1.5) == pytest.approx(1.5)


def test_floor_small_ensemble():
    problem, s0 = localized(0.1)
    spec = EnsembleSpec(seed=7, n_perturb=2, fractions=(0.7,), n_radii=2)
    table = gradient_floor_experiment([0.1], lambda e: localized(e)[0], s0, spec)
    assert {r.regime for r in table.rows} == {"a", "b"}
    assert table.duality_ok()
    for r in table.rows:
        assert r.n_members > 0 and r.min_dual_norm_all <= r.min_dual_norm


def test_floor_deterministic():
    problem, s0 = localized(0.1)
    spec = EnsembleSpec(seed=11, n_perturb=2, fractions=(0.7,), n_radii=2)
    a = gradient_floor_experiment([0.1], lambda e: localized(e)[0], s0, spec)
    b = gradient_floor_experiment([0.1], lambda e: localized(e)[0], s0, spec)
    assert [r.to_dict() for r in a.rows] == [r.to_dict() for r in b.rows]


def test_floor_near_critical_members():
    problem, s0 = localized(0.05)
    from nlspeak.functionals import dual_norm, residual

    u = member_field(s0.top, problem, [0.0])
    assert dual_norm(residual(u, problem), problem) <= 0.05


def test_diagnostics_exact_member():
    problem, s0 = localized(0.1)
    d = convergence_diagnostics(member_field(s0.members[0], problem, [1.0]), problem, s0)
    assert d.dist < 1e-6 and d.within_2R0


def test_diagnostics_improve_with_eps():
    a = convergence_diagnostics(solved(0.2).u, *localized(0.2))
    b = convergence_diagnostics(solved(0.05).u, *localized(0.05))
    assert b.dist < a.dist and a.within_2R0 and b.within_2R0
