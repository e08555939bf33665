"""Acceptance criteria on the d = 1 reference problem (cubic f, V = 1 + exp(-x²)).

Each test records one PASS/FAIL line, printed in the terminal summary.
"""

import shutil
import warnings

import numpy as np

from nlspeak.cli import main
from nlspeak.domain import make_grid
from nlspeak.flow import StopRule, descend
from nlspeak.functionals import pohozaev_P
from nlspeak.limit import dilation_path, energy_curve, ground_state
from nlspeak.localization import barycenter, barycenter_directional, manifold_distance, member_field
from nlspeak.minmax import loop_degree, path_level
from nlspeak.verify import (
    EnsembleSpec,
    RecursionHypothesisError,
    decay_recursion_check,
    directional_derivative_test,
    gradient_floor_experiment,
    loglog_slope,
    recursion_instances,
    soliton,
    tail_profile,
)

from conftest import E_V0, REFERENCE_CONFIG, localized, reference_problem, solved

SWEEP = (0.4, 0.2, 0.1, 0.05)


def fine_problem():
    return reference_problem().with_grid(make_grid(1, 40.0, 1601))


def test_c01_limit_solver_oracle(report):
    p = fine_problem()
    errs = []
    for m in (1.0, 1.5, 2.0):
        g = ground_state(m, p)
        errs.append(abs(g.level / ((4 / 3) * m**1.5) - 1))
        errs.append(abs(g.amplitude / np.sqrt(2 * m) - 1))
    ok = max(errs) <= 1e-3
    assert report(1, ok, f"max relative error {max(errs):.2e} (tol 1e-3)")


def test_c02_pohozaev(report):
    p = fine_problem()
    _, s0 = localized(0.1)
    rel = max(g.pohozaev_relative for g in list(s0) + [ground_state(m, p) for m in (1.0, 1.5)])
    U = ground_state(1.0, p)
    val = pohozaev_P(dilation_path(U, 0.3, 1.0, p.grid), 1.0, p)
    target = (2 / 3) * (np.exp(0.3) - np.exp(-0.3))
    ok = rel <= 1e-3 and abs(val / target - 1) <= 0.01
    assert report(2, ok, f"max Pohozaev residual {rel:.2e}; P(theta=0.3) = {val:.5f} vs {target:.5f}")


def test_c03_energy_monotone(report):
    p = reference_problem()
    grids = [np.linspace(0.2, 2.0, 10), np.sort(np.random.default_rng(0).uniform(0.05, 2.0, 10))]
    ok = True
    for ms in grids:
        E = np.array([e for _, e in energy_curve(ms, p)])
        ok &= bool(np.all(np.diff(E) > 0))
    assert report(3, ok, "E_m strictly increasing on two 10-point m-grids")


def test_c04_barycenter(report):
    problem, s0 = localized(0.1)
    grid, R0 = problem.grid, problem.params.R0
    rng = np.random.default_rng(4)
    x = grid.points[..., 0]

    # grid-shift equivariance
    u = member_field(s0.top, problem, [0.3]) + member_field(s0.members[0], problem, [-2.0], 0.4)
    shift_err = 0.0
    for k in (-17, -3, 5, 29):
        v = np.roll(u, k)
        v[~grid.interior] = 0.0
        shift_err = max(shift_err, abs(barycenter(v, problem).value[0] - barycenter(u, problem).value[0] - k * grid.h))

    # near-manifold ensemble
    worst = 0.0
    for _ in range(50):
        g = s0.members[rng.integers(len(s0))]
        c = rng.uniform(-20, 20)
        w = member_field(g, problem, [c])
        for _ in range(3):
            w = w + rng.uniform(0.0, 0.1) * np.exp(-((x - c - rng.uniform(-4, 4)) ** 2) / rng.uniform(0.5, 4))
        w[~grid.interior] = 0.0
        best = manifold_distance(w, s0, problem).shift[0]
        worst = max(worst, abs(barycenter(w, problem).value[0] - best))

    # locality of the derivative
    ups = barycenter(u, problem).value[0]
    v = np.where(np.abs(x - ups) > 4 * R0 + grid.h, np.exp(-((x - ups - 6 * R0) ** 2)), 0.0)
    v[~grid.interior] = 0.0
    local = float(np.abs(barycenter_directional(u, v, problem)).max())

    ok = shift_err <= 1e-9 and worst <= 2 * R0 and local <= 1e-6
    assert report(4, ok, f"shift error {shift_err:.1e}; max |Y - best shift| {worst:.3f} (2R0 = {2 * R0:.3f}); far derivative {local:.1e}")


def test_c05_penalty_extinction(report):
    pens = {eps: solved(eps).penalty for eps in (0.2, 0.1, 0.05)}
    ok = all(v == 0.0 for v in pens.values())
    assert report(5, ok, f"penalties {pens}")


def test_c06_decay(report):
    fits = {}
    for eps in (0.2, 0.1, 0.05):
        problem, _ = localized(eps)
        rep = tail_profile(solved(eps).u, problem, window=(5.0, 15.0))
        fits[eps] = (rep.slope, rep.r2)
    p = fine_problem()
    control = tail_profile(soliton(p.grid, 1.0), p, window=(5.0, 15.0), center=[0.0]).c
    ok = all(s < 0 and r2 >= 0.99 for s, r2 in fits.values()) and 1.9 <= control <= 2.1
    desc = ", ".join(f"eps={e}: slope {s:.3f} r2 {r:.4f}" for e, (s, r) in fits.items())
    assert report(6, ok, f"{desc}; soliton c = {control:.4f}")


def test_c07_recursion(report):
    rng = np.random.default_rng(7)
    accepted = sum(bool(decay_recursion_check(Q, t, b)) for Q, t, b, _ in recursion_instances(rng, 100, True))
    rejected = 0
    for Q, t, b, k in recursion_instances(rng, 100, False):
        try:
            decay_recursion_check(Q, t, b)
        except RecursionHypothesisError as exc:
            rejected += exc.step == k
    ok = accepted == 100 and rejected == 100
    assert report(7, ok, f"accepted {accepted}/100 valid, rejected {rejected}/100 violating")


def test_c08_directional_derivative(report):
    reps = {eps: directional_derivative_test(np.array([0.5]), reference_problem(eps)) for eps in SWEEP}
    ratio = reps[0.1].ratio
    slope = loglog_slope(SWEEP, [abs(reps[e].measured) for e in SWEEP])
    ok = 0.75 <= ratio <= 1.25 and abs(slope - 1.0) <= 0.15
    assert report(8, ok, f"ratio at eps=0.1 {ratio:.4f}; log-log slope {slope:.4f}")


def test_c09_gradient_floor(report):
    _, s0 = localized(0.1)
    table = gradient_floor_experiment(SWEEP, lambda e: localized(e)[0], s0, EnsembleSpec(seed=0))
    e, a = table.column("a")
    _, b = table.column("b")
    slope_a = loglog_slope(e, a)
    spread_b = float(b.max() / b.min())
    ok = abs(slope_a - 1.0) <= 0.2 and spread_b <= 2.0
    msg = (
        f"regime a slope {slope_a:.3f} (mins {np.round(a, 4).tolist()}); "
        f"regime b max/min {spread_b:.2f} (mins {np.round(b, 4).tolist()})"
    )
    assert report(9, ok, msg)


def test_c10_degree(report):
    problem, s0 = localized(0.1)
    rep = loop_degree(problem, s0, n=256)
    ok = abs(rep.degree) == 1 and rep.max_jump <= np.pi / 2
    assert report(10, ok, f"degree {rep.degree} with 256 samples, max angle step {rep.max_jump:.3f}")


def test_c11_concentration(report):
    dist = [solved(eps).dist_V for eps in SWEEP]
    gamma = solved(0.05).gamma
    # differences below the round-off floor are ties, not decreases
    floor = 1e-12
    decreasing = all(b < a - floor for a, b in zip(dist, dist[1:]))
    ok = decreasing and dist[-1] <= 0.5 and abs(gamma - E_V0) <= 0.1
    assert report(11, ok, f"dist {['%.2e' % d for d in dist]} (strictly decreasing beyond 1e-12: {decreasing}); |Gamma - E| = {abs(gamma - E_V0):.4f}")


def test_c12_minmax_level(report):
    levels = [path_level(*localized(eps)) for eps in SWEEP]
    gap = [abs(lv.c - E_V0) for lv in levels]
    steps_ok = all(b <= a + 1e-2 for a, b in zip(gap, gap[1:]))
    margins = [lv.margin for lv in levels]
    ok = steps_ok and min(margins) > 0
    assert report(12, ok, f"c_eps {[round(lv.c, 4) for lv in levels]}; boundary margins {[round(m, 3) for m in margins]}")


def test_c13_flow_contract(report):
    traces = [solved(eps).trace for eps in SWEEP]
    problem, s0 = localized(0.1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for c in (0.0, 0.5, -1.0):
            traces.append(descend(member_field(s0.members[1], problem, [c / problem.eps], 0.9), problem, StopRule(tol=1e-8), s0=s0))
    mono = all(t.monotone() for t in traces)
    drift = all(t.drift_ok() for t in traces)
    assert report(13, mono and drift, f"{len(traces)} traces: monotone {mono}, drift bounded {drift}")


def test_c14_determinism(report, tmp_path):
    cfg = str(REFERENCE_CONFIG)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["limit", "--config", cfg, "--out", str(a), "--seed", "42"]) == 0
    shutil.copytree(a / "limit", b / "limit")
    for out in (a, b):
        assert main(["sweep", "--config", cfg, "--out", str(out), "--seed", "42"]) == 0
    files = sorted(p.relative_to(a / "sweep") for p in (a / "sweep").rglob("*") if p.is_file() and p.name != "manifest.json")
    same = all((a / "sweep" / f).read_bytes() == (b / "sweep" / f).read_bytes() for f in files)
    assert report(14, same and len(files) > 0, f"{len(files)} data files byte-identical: {same}")
