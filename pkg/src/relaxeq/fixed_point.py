"""Damped Picard iteration of Phi_lam(w) = V^{Gamma_lam(D_x w(0, .))} and EEHJB residuals.

Phi depends on w only through p = D_x w(0, .), which is linear in w, so damping
the iterate w is the same as damping p. The loop therefore tracks the damped
gradient p_k and the undamped images v_{k+1} = Phi(p_k); convergence is
measured between successive images, which are genuine policy values.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .evaluation import PdeSolveConfig, evaluate_policy_pde, pde_residual, policy_coefficients
from .gibbs import ActionGrid, PolicyField, exponent_matrix, softmax_from_exponent
from .grid import Grid, ValueField, spatial_derivatives
from .norms import NormConfig, weighted_global_norm
from .problem import ProblemSpec

__all__ = [
    "EquilibriumResult",
    "FixedPointConfig",
    "FixedPointError",
    "apply_phi",
    "eehjb_residual",
    "gibbs_policy_from_value",
    "residual_report",
    "solve_regularized_equilibrium",
    "t0_residual",
    "write_history_csv",
]

NORMS = ("sup", "weighted_global")


class FixedPointError(RuntimeError):
    """A PDE solve failed inside the iteration."""

    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


@dataclass(frozen=True)
class FixedPointConfig:
    damping: float = 0.5
    max_iters: int = 200
    tol: float = 1e-6
    norm_choice: str = "sup"
    norm_cfg: NormConfig = NormConfig(N_max=5, max_pairs=100_000)

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.norm_choice not in NORMS:
            raise ValueError(f"norm_choice must be one of {NORMS}")


@dataclass(eq=False)
class EquilibriumResult:
    value: ValueField
    policy: PolicyField
    lam: float
    iterations: int
    residual_history: list[float]
    eehjb_residual_t0: float
    eehjb_residual_field: float
    converged: bool
    res_t0_history: list[float] = field(default_factory=list)
    res_field_history: list[float] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def actions(self) -> ActionGrid:
        return self.policy.actions

    def summary(self) -> dict:
        return dict(lam=self.lam, iterations=self.iterations, converged=self.converged,
                    final_norm=self.residual_history[-1] if self.residual_history else None,
                    eehjb_residual_t0=self.eehjb_residual_t0, eehjb_residual_field=self.eehjb_residual_field,
                    **{k: v for k, v in self.info.items() if isinstance(v, (int, float, str, bool))})


def gibbs_policy_from_value(spec: ProblemSpec, w: ValueField, actions: ActionGrid, lam: float) -> PolicyField:
    """Gamma_lam(x, D_x w(0, x), .) on every space node; lam = 0 gives argmax atoms."""
    grid = w.grid
    g = exponent_matrix(spec, grid.points, w.grad0(), actions)
    return PolicyField.from_exponent(grid, actions, g, lam)


def apply_phi(spec: ProblemSpec, grid: Grid, w: ValueField, lam: float,
              pde_cfg: PdeSolveConfig = PdeSolveConfig(), actions: ActionGrid | None = None):
    """(V^pi, pi) with pi = Gamma_lam(D_x w(0, .))."""
    if not lam > 0:
        raise ValueError("apply_phi needs lam > 0")
    actions = actions or ActionGrid.for_problem(spec)
    pi = gibbs_policy_from_value(spec, w, actions, lam)
    return evaluate_policy_pde(spec, grid, pi, lam, pde_cfg), pi


def _phi_from_grad(spec, grid, p, lam, pde_cfg, actions):
    g = exponent_matrix(spec, grid.points, p, actions)
    pi = PolicyField.from_exponent(grid, actions, g, lam)
    return evaluate_policy_pde(spec, grid, pi, lam, pde_cfg), pi


def _distance(a: ValueField, b: ValueField, cfg: FixedPointConfig) -> float:
    if cfg.norm_choice == "sup":
        return float(np.max(np.abs(a.values - b.values)))
    return weighted_global_norm(a - b, cfg.norm_cfg)


def t0_residual(spec: ProblemSpec, value: ValueField, actions: ActionGrid, lam: float) -> np.ndarray:
    """u_t(0) + 1/2 tr(a D^2 u(0)) + soft max (hard max when lam = 0), on all space nodes."""
    v = value.with_derivatives()
    grid = v.grid
    n = grid.n_x
    sig = np.asarray(spec.diffusion(grid.points), float).reshape(n, grid.dim, -1)
    cov = sig @ np.swapaxes(sig, -1, -2)
    hess = v.hess[0].reshape(n, grid.dim, grid.dim)
    g = exponent_matrix(spec, grid.points, v.grad0(), actions)
    top = softmax_from_exponent(g, actions.weights, lam, actions.measure) if lam > 0 else np.max(g, axis=1)
    return v.dt[0].reshape(n) + 0.5 * np.einsum("iab,iab->i", hess, cov) + top


def residual_report(spec: ProblemSpec, value: ValueField, policy: PolicyField, lam: float) -> dict:
    """Sup and 99th percentile of the t = 0 and field residuals over interior nodes."""
    grid = value.grid
    interior = grid.interior_mask().reshape(-1)
    r0 = np.abs(t0_residual(spec, value, policy.actions, lam))[interior]
    field_, _ = pde_residual(spec, grid, value, policy, lam)
    rf = np.abs(field_[~np.isnan(field_)])
    return dict(res_t0=float(np.max(r0)), res_field=float(np.max(rf)),
                res_t0_p99=float(np.percentile(r0, 99)), res_field_p99=float(np.percentile(rf, 99)))


def eehjb_residual(spec: ProblemSpec, grid: Grid, result: EquilibriumResult) -> tuple[float, float]:
    rep = residual_report(spec, result.value, result.policy, result.lam)
    return rep["res_t0"], rep["res_field"]


def solve_regularized_equilibrium(spec: ProblemSpec, grid: Grid, lam: float,
                                  fp_cfg: FixedPointConfig = FixedPointConfig(),
                                  pde_cfg: PdeSolveConfig = PdeSolveConfig(),
                                  w0: ValueField | None = None,
                                  actions: ActionGrid | None = None) -> EquilibriumResult:
    if not lam > 0:
        raise ValueError("solve_regularized_equilibrium needs lam > 0")
    actions = actions or ActionGrid.for_problem(spec)
    if w0 is None:
        w0 = ValueField(grid, np.zeros((len(grid.t_nodes),) + grid.shape))
    elif w0.values.shape != (len(grid.t_nodes),) + grid.shape:
        raise ValueError("w0 does not live on the grid")
    p = w0.grad0()
    v_prev = w0
    history: list[float] = []
    res0_hist: list[float] = []
    resf_hist: list[float] = []
    best = None
    converged = False
    k = 0
    for k in range(1, fp_cfg.max_iters + 1):
        try:
            v, _ = _phi_from_grad(spec, grid, p, lam, pde_cfg, actions)
        except Exception as exc:  # carry the iteration index
            raise FixedPointError(k, exc) from exc
        diff = _distance(v, v_prev, fp_cfg)
        history.append(diff)
        pi_v = gibbs_policy_from_value(spec, v, actions, lam)
        rep = residual_report(spec, v, pi_v, lam)
        res0_hist.append(rep["res_t0"])
        resf_hist.append(rep["res_field"])
        if best is None or diff <= best[0]:
            best = (diff, v, pi_v, rep, k)
        if diff <= fp_cfg.tol:
            converged = True
            break
        p = (1 - fp_cfg.damping) * p + fp_cfg.damping * v.grad0()
        v_prev = v
    if converged:
        value, policy, rep = v, pi_v, rep
    else:
        _, value, policy, rep, k_best = best
    info = dict(damping=fp_cfg.damping, tol=fp_cfg.tol, norm=fp_cfg.norm_choice,
                res_t0_p99=rep["res_t0_p99"], res_field_p99=rep["res_field_p99"],
                best_iteration=k if converged else k_best)
    return EquilibriumResult(value, policy, lam, k, history, rep["res_t0"], rep["res_field"], converged,
                             res0_hist, resf_hist, info)


def write_history_csv(path, result: EquilibriumResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "norm", "res_t0", "res_field"])
        for i, (nrm, r0, rf) in enumerate(zip(result.residual_history, result.res_t0_history,
                                              result.res_field_history), start=1):
            w.writerow([i, repr(float(nrm)), repr(float(r0)), repr(float(rf))])
