import warnings

import numpy as np
import pytest

from nlspeak.domain import GaussianBump, Params, PowerNonlinearity, Problem, make_grid
from nlspeak.flow import (
    FlowWarning,
    StopRule,
    descend,
    energy_change,
    make_state,
    nehari_scale,
    step,
)
from nlspeak.functionals import energy_Gamma
from nlspeak.localization import member_field

from conftest import localized, sech_soliton


def test_energy_change_matches_direct_difference():
    problem, s0 = localized(0.1)
    u = member_field(s0.top, problem, [0.0])
    w = 1.01 * u + 1e-3 * np.exp(-problem.grid.points[..., 0] ** 2)
    w[~problem.grid.interior] = 0.0
    direct = energy_Gamma(w, problem) - energy_Gamma(u, problem)
    assert energy_change(w, u, problem) == pytest.approx(direct, rel=1e-9, abs=1e-13)


def test_nehari_scale_on_pure_power():
    problem, s0 = localized(0.1)
    u = member_field(s0.top, problem, [0.0])
    t = nehari_scale(0.5 * u, problem)
    ts = np.linspace(0.9 * t, 1.1 * t, 5)
    vals = [energy_Gamma(s * 0.5 * u, problem) for s in ts]
    assert np.argmax(vals) == 2


def test_step_decreases_energy_from_path_maximizer():
    from nlspeak.minmax import path_level

    problem, s0 = localized(0.1)
    u = path_level(problem, s0).argmax.u
    state = make_state(nehari_scale(u, problem) * u, problem)
    new, ok = step(state, problem)
    assert ok and new.energy < state.energy


def test_step_without_retraction():
    problem, s0 = localized(0.1)
    state = make_state(member_field(s0.top, problem, [0.2], amplitude=1.05), problem)
    new, ok = step(state, problem, retract=False)
    assert ok and new.energy <= state.energy


def test_constant_potential_converges_to_E_m():
    grid = make_grid(1, 30.0, 601)
    problem = Problem(grid, GaussianBump(1.0, 1e-300, (0.0,), 1.0), PowerNonlinearity(), Params(eps=0.5))
    u0 = 0.8 * sech_soliton(grid, 1.0, center=1.0) * np.exp(-((grid.points[..., 0] - 1.0) ** 2) / 200)
    trace = descend(u0, problem, StopRule(tol=1e-8))
    assert trace.reason == "converged"
    assert trace.final.energy == pytest.approx(4 / 3, abs=1e-3)
    assert trace.monotone()


def test_critical_point_converges_immediately():
    problem, s0 = localized(0.1)
    first = descend(member_field(s0.top, problem, [0.0]), problem, StopRule(tol=1e-9))
    again = descend(first.final.u, problem, StopRule(tol=1e-8))
    assert again.reason == "converged" and again.final.iteration <= 2


def test_descend_from_path_maximizer():
    problem, s0 = localized(0.1)
    u0 = member_field(s0.top, problem, [0.0])
    trace = descend(u0, problem, StopRule(tol=1e-8), s0=s0)
    assert trace.reason == "converged"
    assert trace.final.penalty == 0.0
    assert abs(problem.eps * trace.final.upsilon[0]) <= 0.5
    assert trace.monotone() and trace.drift_ok()
    assert trace.final_in_Z
    assert trace.energy_direct == pytest.approx(trace.final.energy, abs=1e-10)


def test_start_outside_warns():
    problem, s0 = localized(0.1)
    u0 = member_field(s0.top, problem, [40.0])
    with pytest.warns(FlowWarning):
        descend(u0, problem, StopRule(tol=1e-8, max_iter=3), s0=s0)


def test_max_iters_reason():
    problem, s0 = localized(0.1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        trace = descend(member_field(s0.top, problem, [0.3]), problem, StopRule(tol=0.0, max_iter=2))
    assert trace.reason == "max-iters" and trace.final.iteration == 2


def test_trace_csv(tmp_path):
    problem, s0 = localized(0.1)
    trace = descend(member_field(s0.top, problem, [0.0]), problem, StopRule(tol=1e-6))
    path = trace.write_csv(tmp_path / "t.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,energy,residual,upsilon_0,penalty,step"
    assert len(lines) == len(trace.states) + 1
