"""Vanishing-temperature annealing of regularized equilibria.

Each stage solves the fixed point at lam_k warm-started from the previous
stage's value. The trace keeps sup-norm Cauchy differences between stage values,
weak-convergence integrals of a fixed test family, and the concentration of the
stage policies near the hard argmax.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .evaluation import PdeSolveConfig, pde_residual
from .fixed_point import (EquilibriumResult, FixedPointConfig, solve_regularized_equilibrium,
                          t0_residual, write_history_csv)
from .gibbs import ActionGrid, PolicyField, exponent_matrix, write_policy_binary
from .grid import Grid, ValueField, write_field_binary, write_field_csv
from .problem import ProblemSpec

__all__ = [
    "AnnealSchedule",
    "AnnealStateError",
    "AnnealTrace",
    "TestFunction",
    "anneal",
    "concentration_profile",
    "default_test_family",
    "ehjb_residual_limit",
    "export_trace",
    "weak_convergence_probe",
    "TEST_FAMILY_VERSION",
]

TEST_FAMILY_VERSION = "weak-v1"
ATOMIC_MASS = 0.999
CONCENTRATION_RADIUS = 0.05  # fraction of diam U


class AnnealStateError(RuntimeError):
    """The trace has no limit fields (stop rule not met or run truncated)."""


@dataclass(frozen=True)
class AnnealSchedule:
    lambdas: tuple[float, ...]
    stop_rule: float = 0.05

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lambdas)
        object.__setattr__(self, "lambdas", lam)
        if not lam:
            raise ValueError("schedule must be nonempty")
        if any(v <= 0 for v in lam):
            raise ValueError("temperatures must be positive")
        if any(b >= a for a, b in zip(lam, lam[1:])):
            raise ValueError("temperatures must be strictly decreasing")
        if not self.stop_rule > 0:
            raise ValueError("stop_rule must be positive")

    @classmethod
    def geometric(cls, k_first: int = 0, k_last: int = 7, stop_rule: float = 0.05) -> "AnnealSchedule":
        return cls(tuple(2.0 ** -k for k in range(k_first, k_last + 1)), stop_rule)


@dataclass(frozen=True)
class TestFunction:
    """phi(x, a) = weight(x, a) * box(x); ``box`` is None for the whole domain."""

    __test__ = False  # not a pytest class despite the name

    name: str
    weight: Callable  # (points (n, d), actions (J, l)) -> (n, J)
    box: tuple[tuple[float, float], ...] | None = None


def _sub_boxes(spec: ProblemSpec, parts: int = 4):
    if spec.dim == 1:
        edges = np.linspace(spec.x_low[0], spec.x_high[0], parts + 1)
        return [((float(a), float(b)),) for a, b in zip(edges[:-1], edges[1:])]
    ex = np.linspace(spec.x_low[0], spec.x_high[0], 3)
    ey = np.linspace(spec.x_low[1], spec.x_high[1], 3)
    return [((float(ex[i]), float(ex[i + 1])), (float(ey[j]), float(ey[j + 1]))) for i in range(2) for j in range(2)]


def default_test_family(spec: ProblemSpec) -> list[TestFunction]:
    """Versioned family: drift and reward weights on sub-boxes, plus smooth bumps in (x, a)."""
    fam = []
    for k, box in enumerate(_sub_boxes(spec)):
        for i in range(spec.dim):
            fam.append(TestFunction(f"drift{i + 1}_box{k}",
                                    lambda x, a, i=i: spec.drift(x[:, None, :], a[None, :, :])[..., i], box))
        fam.append(TestFunction(f"reward0_box{k}", lambda x, a: spec.reward(0.0, x[:, None, :], a[None, :, :]), box))
    lo = np.asarray(spec.action_low)
    hi = np.asarray(spec.action_high)
    centre = 0.5 * (np.asarray(spec.x_low) + np.asarray(spec.x_high))
    width = 0.25 * (np.asarray(spec.x_high) - np.asarray(spec.x_low))
    for m in (1, 2):
        def bump(x, a, m=m):
            sx = np.exp(-0.5 * np.sum(((x - centre) / width) ** 2, axis=-1))
            sa = np.prod(np.cos(m * math.pi * (a - lo) / (hi - lo)), axis=-1)
            return sx[:, None] * sa[None, :]

        fam.append(TestFunction(f"bump_cos{m}", bump))
    return fam


def _hat_weights(axis: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Exact integrals over [lo, hi] of the piecewise-linear hat functions on ``axis``."""
    w = np.zeros(len(axis))
    lo = max(lo, axis[0])
    hi = min(hi, axis[-1])
    if hi <= lo:
        return w
    for c in range(len(axis) - 1):
        a, b = axis[c], axis[c + 1]
        s, e = max(a, lo), min(b, hi)
        if e <= s:
            continue
        h = b - a
        # hat_c falls from 1 at a to 0 at b; hat_{c+1} rises
        w[c] += ((b - s) ** 2 - (b - e) ** 2) / (2 * h)
        w[c + 1] += ((e - a) ** 2 - (s - a) ** 2) / (2 * h)
    return w


def _x_weights(grid: Grid, box) -> np.ndarray:
    if box is None:
        box = [(ax[0], ax[-1]) for ax in grid.axes]
    w = np.ones(1)
    for ax, (lo, hi) in zip(grid.axes, box):
        w = np.multiply.outer(w, _hat_weights(ax, lo, hi)).ravel()
    return w


def _policy_integral(policy: PolicyField, phi: TestFunction) -> float:
    grid = policy.grid
    vals = np.asarray(phi.weight(grid.points, policy.actions.nodes), float)
    per_x = np.sum(vals * policy.masses, axis=1)
    return float(per_x @ _x_weights(grid, phi.box))


def concentration_profile(spec: ProblemSpec, value: ValueField, policy: PolicyField) -> np.ndarray:
    """Per-node policy mass within 0.05 diam(U) of the hard argmax of the t = 0 exponent."""
    actions = policy.actions
    g = exponent_matrix(spec, value.grid.points, value.grad0(), actions)
    top = np.max(g, axis=1, keepdims=True)
    ties = g >= top - 1e-12 * np.maximum(1.0, np.abs(top))
    radius = CONCENTRATION_RADIUS * actions.diameter
    # distance from every action node to every other node, reused across space nodes
    dist = np.linalg.norm(actions.nodes[:, None, :] - actions.nodes[None, :, :], axis=-1)
    near = (ties.astype(float) @ (dist <= radius + 1e-12)) > 0
    return np.sum(policy.masses * near, axis=1)


@dataclass(eq=False)
class AnnealTrace:
    stages: list[EquilibriumResult]
    lambdas: list[float]
    cauchy_diffs: list[float]
    weak_integrals: dict[str, list[float]]
    weak_test_diffs: dict[str, list[float]]
    concentration: list[float]
    limit_value: ValueField | None = None
    limit_policy: PolicyField | None = None
    ehjb_residuals: tuple[float, float] | None = None
    truncated: bool = False
    stop_met: bool = False
    inserted: list[float] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return dict(
            lambdas=self.lambdas,
            iterations=[s.iterations for s in self.stages],
            converged=[s.converged for s in self.stages],
            eehjb_residual_t0=[s.eehjb_residual_t0 for s in self.stages],
            eehjb_residual_field=[s.eehjb_residual_field for s in self.stages],
            cauchy_diffs=self.cauchy_diffs,
            weak_test_diffs=self.weak_test_diffs,
            concentration=self.concentration,
            truncated=self.truncated,
            stop_met=self.stop_met,
            inserted=self.inserted,
            limit_atomic=None if self.limit_policy is None else self.limit_policy.atomic,
            ehjb_residuals=None if self.ehjb_residuals is None else list(self.ehjb_residuals),
            test_family=TEST_FAMILY_VERSION,
            **self.info,
        )


def weak_convergence_probe(trace: AnnealTrace, test_functions: list[TestFunction]):
    """Integrals of phi against each stage policy and their successive differences."""
    integrals = {phi.name: [_policy_integral(s.policy, phi) for s in trace.stages] for phi in test_functions}
    diffs = {k: [abs(b - a) for a, b in zip(v, v[1:])] for k, v in integrals.items()}
    return integrals, diffs


def ehjb_residual_limit(spec: ProblemSpec, grid: Grid, trace: AnnealTrace, percentile: bool = False):
    """Residuals of the unregularized system at the limit pair: hard max at t = 0, lam = 0 evaluation."""
    if trace.limit_value is None or trace.limit_policy is None:
        raise AnnealStateError("trace has no limit fields")
    value, policy = trace.limit_value, trace.limit_policy
    interior = grid.interior_mask().reshape(-1)
    r0 = np.abs(t0_residual(spec, value, policy.actions, 0.0))[interior]
    res, _ = pde_residual(spec, grid, value, policy, 0.0)
    rf = np.abs(res[~np.isnan(res)])
    if percentile:
        return dict(res_t0=float(r0.max()), res_field=float(rf.max()),
                    res_t0_p99=float(np.percentile(r0, 99)), res_field_p99=float(np.percentile(rf, 99)))
    return float(r0.max()), float(rf.max())


def anneal(spec: ProblemSpec, grid: Grid, schedule: AnnealSchedule,
           fp_cfg: FixedPointConfig = FixedPointConfig(), pde_cfg: PdeSolveConfig = PdeSolveConfig(),
           actions: ActionGrid | None = None, test_functions: list[TestFunction] | None = None) -> AnnealTrace:
    actions = actions or ActionGrid.for_problem(spec)
    tests = test_functions if test_functions is not None else default_test_family(spec)
    stages: list[EquilibriumResult] = []
    lams: list[float] = []
    inserted: list[float] = []
    truncated = False
    queue = list(schedule.lambdas)
    w = None
    while queue:
        lam = queue.pop(0)
        res = solve_regularized_equilibrium(spec, grid, lam, fp_cfg, pde_cfg, w0=w, actions=actions)
        if res.converged:
            stages.append(res)
            lams.append(lam)
            w = res.value
            continue
        if not inserted and lams:
            mid = math.sqrt(lams[-1] * lam)
            inserted.append(mid)
            queue = [mid, lam] + queue
            continue
        stages.append(res)
        lams.append(lam)
        truncated = True
        break

    cauchy = [float(np.max(np.abs(b.value.values - a.value.values))) for a, b in zip(stages, stages[1:])]
    trace = AnnealTrace(stages, lams, cauchy, {}, {}, [], truncated=truncated, inserted=inserted)
    trace.weak_integrals, trace.weak_test_diffs = weak_convergence_probe(trace, tests)
    trace.concentration = [float(np.mean(concentration_profile(spec, s.value, s.policy))) for s in stages]
    trace.stop_met = (not truncated) and bool(cauchy) and cauchy[-1] <= schedule.stop_rule
    if trace.stop_met:
        last = stages[-1]
        trace.limit_value = last.value
        conc = concentration_profile(spec, last.value, last.policy)
        if np.all(conc > ATOMIC_MASS):
            g = exponent_matrix(spec, grid.points, last.value.grad0(), actions)
            trace.limit_policy = PolicyField.argmax_atoms(grid, actions, g)
        else:
            trace.limit_policy = last.policy
        trace.ehjb_residuals = ehjb_residual_limit(spec, grid, trace)
        trace.info.update({f"limit_{k}": v for k, v in ehjb_residual_limit(spec, grid, trace, True).items()})
    return trace


def export_trace(trace: AnnealTrace, directory, csv_fields: bool = True) -> Path:
    """One value/policy pair per stage plus summary.json and a Cauchy/weak-diff table."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for k, stage in enumerate(trace.stages):
        sd = out / f"stage_{k:02d}"
        sd.mkdir(exist_ok=True)
        write_field_binary(sd / "value.bin", stage.value)
        write_policy_binary(sd / "policy.bin", stage.policy)
        write_history_csv(sd / "history.csv", stage)
        if csv_fields:
            write_field_csv(sd / "value_t0.csv", stage.value, time_indices=[0])
    if trace.limit_value is not None:
        write_field_binary(out / "limit_value.bin", trace.limit_value)
        write_policy_binary(out / "limit_policy.bin", trace.limit_policy)
    with open(out / "summary.json", "w") as fh:
        json.dump(trace.summary(), fh, indent=2, sort_keys=True)
    with open(out / "diffs.csv", "w") as fh:
        names = sorted(trace.weak_test_diffs)
        fh.write(",".join(["step", "lam_from", "lam_to", "cauchy"] + names) + "\n")
        for i, c in enumerate(trace.cauchy_diffs):
            row = [str(i), repr(trace.lambdas[i]), repr(trace.lambdas[i + 1]), repr(c)]
            row += [repr(trace.weak_test_diffs[n][i]) for n in names]
            fh.write(",".join(row) + "\n")
    return out

