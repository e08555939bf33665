import numpy as np
import pytest

from nlspeak.domain import DomainError, make_grid
from nlspeak.limit import (
    build_S0,
    dilation_path,
    energy_curve,
    ground_state,
    load_S0,
    save_S0,
)
from nlspeak.functionals import pohozaev_P

from conftest import reference_problem


def test_ground_state_m1():
    g = ground_state(1.0, reference_problem())
    assert g.amplitude == pytest.approx(np.sqrt(2), rel=1e-6)
    assert g.level == pytest.approx(4 / 3, rel=1e-5)
    assert g.mass == pytest.approx(4.0, rel=1e-5)


def test_ground_state_m2():
    assert ground_state(2.0, reference_problem()).level == pytest.approx(3.77124, abs=1e-4)


def test_profile_matches_sech():
    g = ground_state(1.5, reference_problem())
    r = np.linspace(0, 12, 121)
    exact = np.sqrt(3.0) / np.cosh(np.sqrt(1.5) * r)
    assert np.allclose(g(r), exact, rtol=1e-5, atol=1e-10)


def test_pohozaev_residual_small():
    for m in (1.3, 1.65, 2.0):
        assert ground_state(m, reference_problem()).pohozaev_relative <= 1e-3


def test_decay_rate():
    for m in (1.0, 2.0):
        g = ground_state(m, reference_problem())
        assert -1.05 * np.sqrt(m) <= g.decay_rate <= -0.95 * np.sqrt(m)


def test_ground_state_range_checked():
    with pytest.raises(DomainError):
        ground_state(2.5, reference_problem())
    with pytest.raises(DomainError):
        ground_state(0.0, reference_problem())


def test_f3_checked():
    with pytest.raises(DomainError, match="superlinearity"):
        ground_state(2.0, reference_problem(t0=1.0))


def test_energy_curve_examples():
    curve = energy_curve([1.0, 1.5, 2.0], reference_problem())
    assert [round(E, 4) for _, E in curve] == [1.3333, 2.4495, 3.7712]
    assert len(energy_curve([1.2], reference_problem())) == 1


def test_energy_curve_rejects_unsorted():
    with pytest.raises(ValueError, match="strictly increasing"):
        energy_curve([1.5, 1.0], reference_problem())


def test_dilation_path_identity_and_zero():
    p = reference_problem(eps=0.2)
    g = ground_state(2.0, p)
    assert np.allclose(dilation_path(g, 0.0, 1.0, p.grid), g.field(p.grid))
    assert not dilation_path(g, 0.3, 0.0, p.grid).any()


def test_dilation_sign_structure_1d():
    grid = make_grid(1, 40.0, 1601)
    p = reference_problem().with_grid(grid)
    g = ground_state(1.0, p)
    vals = [pohozaev_P(dilation_path(g, t, 1.0, grid), 1.0, p) for t in (-0.2, 0.0, 0.2)]
    assert vals[0] < 0 and abs(vals[1]) < 1e-3 and vals[2] > 0


def test_build_S0_constants():
    s0 = build_S0(reference_problem())
    assert [round(g.m, 6) for g in s0] == [1.3, 1.65, 2.0]
    assert s0.rho0 == pytest.approx(min(s0.rho1, s0.rho2) / 32)
    assert s0.R0 > 0 and s0.rho1 > 0
    assert s0.top.m == 2.0


def test_build_S0_rejects_large_delta0():
    with pytest.raises(DomainError, match="delta0"):
        build_S0(reference_problem(delta0=0.9))


def test_build_S0_singleton():
    assert len(build_S0(reference_problem(delta0=1e-14))) == 1


def test_S0_roundtrip(tmp_path):
    p = reference_problem(eps=0.2)
    s0 = build_S0(p)
    files = save_S0(s0, p, tmp_path / "S0")
    assert all(f.exists() for f in files)
    back = load_S0(p, tmp_path / "S0")
    assert back.R0 == s0.R0 and [g.m for g in back] == [g.m for g in s0]


def test_load_S0_missing(tmp_path):
    with pytest.raises(FileNotFoundError, match="limit"):
        load_S0(reference_problem(), tmp_path)
