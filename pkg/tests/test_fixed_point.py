import csv

import numpy as np
import pytest

from relaxeq import (
    ActionGrid,
    EquilibriumResult,
    FixedPointConfig,
    FixedPointError,
    PdeSolveConfig,
    PolicyField,
    ValueField,
    apply_phi,
    c01_norm,
    eehjb_residual,
    evaluate_policy_pde,
    exponent_matrix,
    gibbs_density,
    gibbs_policy_from_value,
    make_d0,
    make_grid,
    make_zero,
    softmax_from_exponent,
    softmax_value,
    solve_regularized_equilibrium,
    write_history_csv,
)

from conftest import LAMBDAS


def zero_field(grid):
    return ValueField(grid, np.zeros((len(grid.t_nodes),) + grid.shape))


@pytest.fixture(scope="module")
def d0_setup():
    spec = make_d0()
    return spec, make_grid(spec, n_x=41, dt0=0.02, horizon=50.0)


def test_apply_phi_gradient_independent_on_d0(d0_setup, rng):
    spec, grid = d0_setup
    w1 = zero_field(grid)
    w2 = ValueField(grid, rng.normal(size=w1.values.shape))
    v1, pi1 = apply_phi(spec, grid, w1, 0.7)
    v2, pi2 = apply_phi(spec, grid, w2, 0.7)
    assert np.array_equal(v1.values, v2.values)
    assert np.array_equal(pi1.densities, pi2.densities)


def test_apply_phi_composition_identity(r1, r1_grid):
    actions = ActionGrid.for_problem(r1)
    v, pi = apply_phi(r1, r1_grid, zero_field(r1_grid), 0.5)
    dens = np.stack([gibbs_density(r1, actions, x, np.zeros(1), 0.5) for x in r1_grid.points])
    np.testing.assert_allclose(pi.densities, dens, rtol=0, atol=1e-12)
    direct = evaluate_policy_pde(r1, r1_grid, PolicyField(r1_grid, actions, dens, lam=0.5), 0.5)
    np.testing.assert_allclose(v.values, direct.values, rtol=0, atol=1e-12)


def test_apply_phi_rejects_nonpositive_lambda(r1, r1_grid):
    with pytest.raises(ValueError):
        apply_phi(r1, r1_grid, zero_field(r1_grid), 0.0)


@pytest.mark.parametrize("lam", LAMBDAS)
def test_fixed_point_is_a_fixed_point(r1, r1_grid, r1_fixed_points, lam):
    res = r1_fixed_points[lam]
    assert res.converged and res.iterations <= 200
    assert res.residual_history[-1] <= 1e-6
    image, _ = apply_phi(r1, r1_grid, res.value, lam)
    assert np.max(np.abs(image.values - res.value.values)) <= 1e-6


@pytest.mark.parametrize("lam", LAMBDAS)
def test_history_nonincreasing_after_burn_in(r1_fixed_points, lam):
    h = np.asarray(r1_fixed_points[lam].residual_history)
    burn = min(10, len(h) - 1)
    assert np.all(np.diff(h[burn:]) <= 0)


@pytest.mark.parametrize("lam", LAMBDAS)
def test_policy_self_consistency(r1, r1_fixed_points, lam):
    res = r1_fixed_points[lam]
    again = gibbs_policy_from_value(r1, res.value, res.actions, lam)
    assert np.max(np.abs(again.densities - res.policy.densities)) <= 1e-12


@pytest.mark.parametrize("lam", LAMBDAS)
def test_t0_equation_consistency(r1, r1_fixed_points, lam):
    res = r1_fixed_points[lam]
    A = res.actions
    g = exponent_matrix(r1, res.value.grid.points, res.value.grad0(), A)
    achieved = res.policy.average(g) + lam * res.policy.entropy()
    assert np.max(np.abs(achieved - softmax_from_exponent(g, A.weights, lam))) <= 1e-8


def test_c01_norm_not_growing_as_lambda_shrinks(r1_fixed_points):
    norms = [c01_norm(r1_fixed_points[lam].value) for lam in LAMBDAS]
    assert np.all(np.isfinite(norms))
    assert all(b <= a for a, b in zip(norms, norms[1:])), norms


def test_d0_converges_in_two_iterations(d0_setup):
    spec, grid = d0_setup
    for lam in (1.0, 0.3):
        res = solve_regularized_equilibrium(spec, grid, lam)
        assert res.converged and res.iterations <= 2


def test_weighted_global_norm_choice(d0_setup):
    spec, grid = d0_setup
    res = solve_regularized_equilibrium(spec, grid, 1.0, FixedPointConfig(norm_choice="weighted_global"))
    assert res.converged and res.iterations <= 2


def test_warm_start_beats_cold_start(r1, r1_grid, r1_fixed_points):
    cold = r1_fixed_points[0.25]
    warm = solve_regularized_equilibrium(r1, r1_grid, 0.25, w0=r1_fixed_points[0.5].value)
    assert warm.converged
    assert warm.iterations < cold.iterations


def test_unconverged_run_returns_best_iterate(r1, r1_grid):
    res = solve_regularized_equilibrium(r1, r1_grid, 0.5, FixedPointConfig(max_iters=2))
    assert not res.converged
    assert res.iterations == 2 and len(res.residual_history) == 2
    assert res.info["best_iteration"] == int(np.argmin(res.residual_history)) + 1


def test_pde_failure_carries_iteration_index(r1, r1_grid):
    with pytest.raises(FixedPointError) as err:
        solve_regularized_equilibrium(r1, r1_grid, 0.5, pde_cfg=PdeSolveConfig(linear_tol=1e-30))
    assert err.value.iteration == 1


def _result(value, policy, lam):
    return EquilibriumResult(value, policy, lam, 0, [], np.nan, np.nan, False)


def test_residuals_vanish_on_zero_problem():
    spec = make_zero()
    grid = make_grid(spec, n_x=21, dt0=0.1, horizon=5.0)
    pi = PolicyField.uniform(grid, ActionGrid.for_problem(spec))
    assert eehjb_residual(spec, grid, _result(zero_field(grid), pi, 0.5)) == (0.0, 0.0)


def test_residual_of_zero_field_on_r1_is_softmax(r1, r1_grid):
    A = ActionGrid.for_problem(r1)
    lam = 0.5
    pi = PolicyField.uniform(r1_grid, A)
    res_t0, _ = eehjb_residual(r1, r1_grid, _result(zero_field(r1_grid), pi, lam))
    interior = r1_grid.interior_mask().reshape(-1)
    expected = max(abs(softmax_value(r1, A, x, np.zeros(1), lam)) for x in r1_grid.points[interior])
    assert res_t0 == pytest.approx(expected, rel=1e-12)
    assert res_t0 > 0.5


@pytest.mark.parametrize("lam", [0.5])
def test_residual_order_under_grid_halving(r1, lam):
    grid = make_grid(r1, n_x=101, dt0=0.02)
    coarse = solve_regularized_equilibrium(r1, grid, lam)
    fine = solve_regularized_equilibrium(r1, grid.refined(), lam)
    assert coarse.eehjb_residual_t0 / fine.eehjb_residual_t0 >= 1.8
    assert coarse.eehjb_residual_field / fine.eehjb_residual_field >= 1.8


def test_history_csv(tmp_path, r1_fixed_points):
    res = r1_fixed_points[1.0]
    path = tmp_path / "history.csv"
    write_history_csv(path, res)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["iter", "norm", "res_t0", "res_field"]
    assert len(rows) == res.iterations + 1
    assert float(rows[-1][1]) == res.residual_history[-1]


def test_config_validation():
    for bad in (dict(damping=0.0), dict(damping=1.5), dict(max_iters=0), dict(tol=0.0), dict(norm_choice="l2")):
        with pytest.raises(ValueError):
            FixedPointConfig(**bad)
