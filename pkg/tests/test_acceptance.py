"""Acceptance criteria 1-12. Each test carries its criterion number; the terminal
summary prints one PASS/FAIL line per criterion."""

import math

import numpy as np
import pytest

from relaxeq import (
    ActionGrid,
    AnnealSchedule,
    Candidate,
    DeviationSpec,
    McConfig,
    PolicyField,
    anneal,
    build_problem,
    default_library,
    ehjb_residual_limit,
    entropy_growth_probe,
    evaluate_policy_mc_batch,
    evaluate_policy_pde,
    exponent_matrix,
    gibbs_density,
    gibbs_from_exponent,
    hard_max_value,
    make_d0,
    make_grid,
    softmax_value,
    solve_regularized_equilibrium,
    spike_perturb_value,
    tail_mass,
    verify_equilibrium,
)
from relaxeq.cli import main

from conftest import LAMBDAS

UNIT = ActionGrid.build(0.0, 1.0)


def linear_spec():
    """Exponent g(x, p = 1, a) = a."""
    return build_problem("trig", drift_gain=1.0, reward_cos=0.0, reward_quad=0.0)


# 1 -------------------------------------------------------------------------


@pytest.mark.criterion(1)
def test_gibbs_normalization_and_shift_invariance(r1):
    rng = np.random.default_rng(2024)
    n = 1000
    x = rng.uniform(r1.x_low[0], r1.x_high[0], size=(n, 1))
    p = rng.uniform(-10.0, 10.0, size=(n, 1))
    lam = 10.0 ** rng.uniform(-3.0, 0.0, size=n)
    # |c| <= 1: the shifted input g + c is itself rounded to ulp(c), which lam = 1e-3 amplifies
    shift = rng.uniform(-1.0, 1.0, size=n)
    g = exponent_matrix(r1, x, p, UNIT)
    worst_mass = worst_shift = 0.0
    for i in range(n):
        d = gibbs_from_exponent(g[i], UNIT.weights, lam[i], UNIT.measure)
        d_shift = gibbs_from_exponent(g[i] + shift[i], UNIT.weights, lam[i], UNIT.measure)
        worst_mass = max(worst_mass, abs(d @ UNIT.weights - 1.0))
        worst_shift = max(worst_shift, np.max(np.abs((d - d_shift) * UNIT.weights)))
    assert worst_mass <= 1e-10
    assert worst_shift <= 1e-12


# 2 -------------------------------------------------------------------------


@pytest.mark.criterion(2)
@pytest.mark.parametrize("lam", [1.0, 0.5, 0.1])
def test_closed_form_gibbs(lam):
    a = UNIT.nodes[:, 0]
    exact = np.exp(a / lam) / (lam * (math.exp(1.0 / lam) - 1.0))
    dens = gibbs_density(linear_spec(), UNIT, [0.0], [1.0], lam)
    assert np.max(np.abs(dens - exact)) <= 1e-8


# 3 -------------------------------------------------------------------------


@pytest.mark.criterion(3)
def test_softmax_to_hard_max(r1):
    rng = np.random.default_rng(7)
    for _ in range(20):
        x, p = rng.uniform(-math.pi, math.pi), rng.uniform(-3.0, 3.0)
        hard, _ = hard_max_value(r1, UNIT, [x], [p])
        gaps = [abs(softmax_value(r1, UNIT, [x], [p], 2.0 ** -k) - hard) for k in range(8)]
        for a, b in zip(gaps, gaps[1:]):
            assert a / b >= 1.5, (x, p, gaps)


@pytest.mark.criterion(3)
def test_softmax_linear_closed_form():
    value = softmax_value(linear_spec(), UNIT, [0.0], [1.0], 0.5)
    assert value == pytest.approx(0.5 * math.log(0.5 * (math.e ** 2 - 1)), abs=1e-8)


# 4 -------------------------------------------------------------------------


@pytest.mark.criterion(4)
def test_entropy_sublinear_growth(r1):
    fit = entropy_growth_probe(r1, UNIT, 0.1, np.logspace(0.0, 4.0, 17))
    assert fit.residual <= 0.5


# 5 -------------------------------------------------------------------------


@pytest.mark.criterion(5)
def test_policy_evaluation_oracle():
    spec = make_d0()
    grid = make_grid(spec, n_x=201, dt0=0.01, tail_eps=1e-4)
    assert grid.dx[0] <= 0.01 + 1e-15
    assert tail_mass(spec, grid.horizon) <= 1e-4
    u = evaluate_policy_pde(spec, grid, PolicyField.uniform(grid, ActionGrid.for_problem(spec)))
    exact = 1.0 / (1.0 + grid.t_nodes)
    assert np.max(np.abs(u.flat() - exact[:, None])) <= 1e-3


# 6 -------------------------------------------------------------------------


def random_policy(spec, grid, seed, lam=0.5):
    rng = np.random.default_rng(seed)
    A = ActionGrid.for_problem(spec)
    coef = rng.normal(size=3)
    x = grid.points[:, :1]
    g = (coef[0] * np.sin(x + coef[1]) + coef[2]) * A.nodes[None, :, 0] - A.nodes[None, :, 0] ** 2
    return PolicyField.from_exponent(grid, A, g, lam)


@pytest.mark.criterion(6)
@pytest.mark.parametrize("seed", [1, 2, 3])
def test_pde_mc_cross_validation(r1, r1_grid, seed):
    pi = random_policy(r1, r1_grid, seed)
    lam = 0.5
    u = evaluate_policy_pde(r1, r1_grid, pi, lam)
    nodes = [r1_grid.nearest_node(x) for x in (-2.0, -1.0, 0.0, 1.0, 2.0)]
    pts = r1_grid.points[nodes]
    est, se, _ = evaluate_policy_mc_batch(r1, pi, lam, 0.0, pts, McConfig(n_paths=20000, rng_seed=seed))
    pde = u.values[0].reshape(-1)[nodes]
    assert np.all(np.abs(pde - est) <= 3 * se + 5e-3), (pde, est, se)


# 7 -------------------------------------------------------------------------


@pytest.mark.criterion(7)
@pytest.mark.parametrize("lam", LAMBDAS)
def test_fixed_point_convergence_and_order(r1, r1_grid, r1_fixed_points, lam):
    mid = r1_fixed_points[lam]
    assert mid.converged and mid.iterations <= 200 and mid.residual_history[-1] <= 1e-6
    coarse_grid = make_grid(r1, n_x=101, dt0=0.02)
    assert coarse_grid.refined().n_x == r1_grid.n_x
    coarse = solve_regularized_equilibrium(r1, coarse_grid, lam)
    fine = solve_regularized_equilibrium(r1, r1_grid.refined(), lam)
    for res in (coarse, fine):
        assert res.converged and res.iterations <= 200
    for a, b in ((coarse, mid), (mid, fine)):
        assert a.eehjb_residual_t0 / b.eehjb_residual_t0 >= 1.8
        assert a.eehjb_residual_field / b.eehjb_residual_field >= 1.8


# 8 -------------------------------------------------------------------------


@pytest.mark.criterion(8)
def test_decay_estimate_shape(r1, r1_grid, r1_fixed_points):
    psi = np.array([tail_mass(r1, t) for t in r1_grid.t_nodes])
    psi /= psi[0]
    bounds = []
    for lam in LAMBDAS:
        v = r1_fixed_points[lam].value.flat()
        ratio = np.max(np.abs(v), axis=1) / psi
        assert np.all(np.isfinite(ratio))
        bounds.append(float(np.max(ratio)))
    # one constant per temperature; it must not grow as lam shrinks
    assert all(b <= a for a, b in zip(bounds, bounds[1:])), dict(zip(LAMBDAS, bounds))


# 9 -------------------------------------------------------------------------


@pytest.mark.criterion(9)
def test_annealing_cauchy_differences(r1_trace_k5):
    assert r1_trace_k5.lambdas == [2.0 ** -k for k in range(6)]
    d = r1_trace_k5.cauchy_diffs
    assert all(b < a for a, b in zip(d, d[1:])), d


@pytest.mark.criterion(9)
def test_annealing_weak_differences(r1_trace_k5):
    bad = {k: d for k, d in r1_trace_k5.weak_test_diffs.items() if any(b > a for a, b in zip(d, d[1:]))}
    assert not bad, bad


@pytest.mark.criterion(9)
def test_annealing_concentration(r1_trace_k5):
    c = r1_trace_k5.concentration
    assert all(b >= a for a, b in zip(c, c[1:])), c
    assert c[-1] >= 0.99, c


# 10 ------------------------------------------------------------------------


@pytest.mark.criterion(10)
def test_strong_residual_of_annealed_limit(r1, r1_grid, r1_trace, scheme_constant):
    lam = r1_trace.lambdas[-1]
    budget = lam * abs(math.log(lam)) + scheme_constant * (r1_grid.dt0 + r1_grid.dx[0] ** 2)
    res_t0, res_field = ehjb_residual_limit(r1, r1_grid, r1_trace)
    assert res_t0 <= budget, (res_t0, budget)
    assert res_field <= budget, (res_field, budget)


@pytest.mark.criterion(10)
def test_strong_residual_d0_limit():
    spec = make_d0()
    grid = make_grid(spec, n_x=201, dt0=0.01)
    trace = anneal(spec, grid, AnnealSchedule((1.0, 0.5, 0.25)))
    res_t0, _ = ehjb_residual_limit(spec, grid, trace)
    assert res_t0 <= 2e-3


# 11 ------------------------------------------------------------------------


@pytest.mark.criterion(11)
def test_annealed_candidate_verifies(r1, r1_grid, r1_candidate):
    lib = default_library(r1)
    assert len(lib) == 7
    rep = verify_equilibrium(r1, r1_grid, r1_candidate, lib, (-2.0, -1.0, 0.0, 1.0, 2.0), tol=1e-2)
    assert rep.verdict, rep.worst


@pytest.mark.criterion(11)
def test_uniform_straw_man_detected(r1, r1_grid):
    cand = Candidate.from_policy(r1, r1_grid, PolicyField.uniform(r1_grid, ActionGrid.for_problem(r1)))
    rep = verify_equilibrium(r1, r1_grid, cand, tol=1e-2)
    assert not rep.verdict
    assert np.max(rep.limsup_estimate["greedy"]) >= 0.05


@pytest.mark.criterion(11)
def test_spike_at_zero_is_bitwise(r1, r1_grid, r1_candidate):
    value = r1_candidate.value
    for x in (-2.0, 0.0, 2.0):
        out = spike_perturb_value(r1, r1_grid, value, DeviationSpec("greedy"), 0.0, 0.0, x)
        assert out == value.values[0].reshape(-1)[r1_grid.nearest_node(x)]


# 12 ------------------------------------------------------------------------


@pytest.mark.criterion(12)
def test_anneal_reruns_bitwise(tmp_path):
    cfg = tmp_path / "anneal.ini"
    cfg.write_text('[problem]\nname = "R1"\n[grid]\nn_x = 101\ndt0 = 0.02\n'
                   "[schedule]\nk_first = 0\nk_last = 5\n[run]\nseed = 5\n")
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["anneal", "--config", str(cfg), "--out", str(out)]) == 0

    def numeric(d):
        return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*"))
                if p.is_file() and p.name not in ("metadata.json", "config.ini")}

    a, b = (numeric(d) for d in outs)
    assert len(a) > 10 and a == b
    strip = [[ln for ln in (d / "config.ini").read_text().splitlines() if not ln.startswith("output_dir")]
             for d in outs]
    assert strip[0] == strip[1]
