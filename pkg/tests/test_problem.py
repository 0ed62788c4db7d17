import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relaxeq import (
    AssumptionFailure,
    DomainError,
    build_problem,
    check_assumptions,
    eval_coefficients,
    horizon_for_tail,
    make_d0,
    make_r1,
    make_sigma_zero,
    make_zero,
    register_problem,
    tail_mass,
)
from relaxeq.problem import _tail_integral


def test_r1_coefficients_at_origin():
    b, s, r, d = eval_coefficients(make_r1(), 0.0, [0.0], [0.5])
    assert b.tolist() == [0.5]
    assert s.tolist() == [[1.0]]
    assert r == 1.25
    assert d == 1.0


def test_r1_reward_at_pi():
    _, _, r, _ = eval_coefficients(make_r1(), 1.0, [math.pi], [0.0])
    assert r == pytest.approx(-0.25, abs=1e-15)


@pytest.mark.parametrize("t,x,a", [(0.0, -1.0, 0.0), (2.5, 0.3, 0.7), (10.0, 1.0, 1.0)])
def test_d0_coefficients(t, x, a):
    b, _, r, d = eval_coefficients(make_d0(), t, [x], [a])
    assert b.tolist() == [0.0]
    assert r == pytest.approx((1 + t) ** -2, rel=1e-15)
    assert d == pytest.approx(math.exp(-t), rel=1e-15)


def test_out_of_domain_names_coordinate():
    spec = make_r1()
    with pytest.raises(DomainError, match=r"x\[0\]"):
        eval_coefficients(spec, 0.0, [4.0], [0.5])
    with pytest.raises(DomainError, match=r"a\[0\]"):
        eval_coefficients(spec, 0.0, [0.0], [1.5])
    with pytest.raises(DomainError, match="negative"):
        eval_coefficients(spec, -1.0, [0.0], [0.5])


def test_eval_coefficients_is_pure():
    spec = make_r1()
    first = eval_coefficients(spec, 0.3, [0.2], [0.4])
    second = eval_coefficients(spec, 0.3, [0.2], [0.4])
    for u, v in zip(first, second):
        assert np.array_equal(u, v)


def test_d0_assumption_report():
    rep = check_assumptions(make_d0())
    assert rep.eta == 1.0
    assert rep.theta == 0.0
    assert rep.K1_reward == pytest.approx(1.0, abs=1e-9)
    # K1 also carries the integral of sup|r_t| = int 2 (1+t)^-3 dt = 1
    assert rep.K1 == pytest.approx(2.0, abs=1e-9)
    assert rep.ok and rep.cone_ok


def test_r1_theta_is_one():
    rep = check_assumptions(make_r1())
    assert rep.theta == pytest.approx(1.0, abs=1e-12)
    assert rep.theta_drift == pytest.approx(1.0, abs=1e-12)
    assert rep.theta_reward <= 1.0
    assert rep.ok


def test_degenerate_diffusion_fails_ellipticity():
    rep = check_assumptions(make_sigma_zero())
    assert rep.eta == 0.0
    assert not rep.ok
    assert any("ellipticity" in n for n in rep.notes)


def test_report_constants_finite_and_json_ready():
    d = check_assumptions(make_r1()).to_dict()
    for k in ("K0", "K1", "K2", "K3", "K4", "K5", "eta", "theta"):
        assert math.isfinite(d[k]) and d[k] >= 0


def test_sample_budget_precondition():
    with pytest.raises(ValueError):
        check_assumptions(make_d0(), sample_budget=50)


def test_tail_mass_examples():
    assert tail_mass(make_d0(), 1.0) == pytest.approx(0.5 + math.exp(-1), abs=1e-9)
    assert tail_mass(make_zero(), 3.0) == 0.0
    assert tail_mass(make_r1(), 9.0) == pytest.approx(0.125 + math.exp(-9), abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 500), st.floats(0, 500))
def test_tail_mass_nonincreasing(t1, t2):
    lo, hi = sorted((t1, t2))
    spec = make_d0()
    assert tail_mass(spec, lo) >= tail_mass(spec, hi) - 1e-12


def test_horizon_for_tail_meets_budget():
    spec = make_r1()
    T = horizon_for_tail(spec, 1e-4)
    assert tail_mass(spec, T) <= 1e-4 * (1 + 1e-5)
    assert tail_mass(spec, 0.99 * T) > 1e-4


def test_divergent_tail_is_reported():
    with pytest.raises(AssumptionFailure):
        _tail_integral(lambda t: 1.0 / (1.0 + t), 0.0)


def test_catalog_and_registration():
    assert build_problem("R1").name == make_r1().name
    with pytest.raises(KeyError):
        build_problem("nope")
    register_problem("r1_copy_for_tests", make_r1)
    with pytest.raises(ValueError):
        register_problem("r1_copy_for_tests", make_r1)
