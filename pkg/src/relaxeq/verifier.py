"""Spike-perturbation test of the equilibrium condition.

A deviation plays a fixed feedback relaxed control on [0, eps) and then
reverts to the candidate policy, so its value at the start point is

    J'(x) = E[ int_0^eps (r^dev(s, X_s) + lam delta(s) H(dev(X_s))) ds + V*(eps, X_eps) ]

with X driven by the deviation's drift. The candidate is an equilibrium when
limsup_{eps -> 0} (J'(x) - V*(0, x)) / eps <= 0 for every deviation and x.
Only a finite library is tested, so a pass is evidence and not a proof.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .annealing import AnnealTrace
from .evaluation import McConfig, PdeSolveConfig, _fold, evaluate_policy_pde, policy_coefficients
from .fixed_point import EquilibriumResult
from .gibbs import ActionGrid, PolicyField, exponent_matrix
from .grid import Grid, ValueField, interp_slice
from .problem import ProblemSpec

__all__ = [
    "Candidate",
    "DEFAULT_EPSILONS",
    "DEFAULT_X_POINTS",
    "DeviationSpec",
    "GapReport",
    "default_library",
    "equilibrium_gap",
    "snap_epsilons",
    "spike_perturb_value",
    "verify_equilibrium",
    "write_gap_report",
]

DEVIATION_KINDS = ("atom", "uniform", "greedy", "custom")
DEFAULT_EPSILONS = (0.4, 0.2, 0.1, 0.05, 0.025)
DEFAULT_X_POINTS = (-2.0, -1.0, 0.0, 1.0, 2.0)
REPORT_NOTE = ("Only the listed deviations and start points were tested; "
               "a pass is evidence of the equilibrium property, not a proof of it.")


@dataclass(frozen=True, eq=False)
class DeviationSpec:
    """A deviation control: a constant atom, the uniform density, greedy-from-value or a custom density.

    ``payload`` is the action for an atom, a PolicyField or an (n_x, J) density
    array for ``custom``, and unused otherwise.
    """

    kind: str
    payload: object = None
    name: str | None = None

    def __post_init__(self):
        if self.kind not in DEVIATION_KINDS:
            raise ValueError(f"deviation kind must be one of {DEVIATION_KINDS}")
        if self.kind == "atom" and self.payload is None:
            raise ValueError("an atom deviation needs an action")
        if self.kind == "custom" and self.payload is None:
            raise ValueError("a custom deviation needs a density")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind == "atom":
            a = np.atleast_1d(np.asarray(self.payload, float))
            return "atom(" + ",".join(f"{v:g}" for v in a) + ")"
        return self.kind

    def policy(self, spec: ProblemSpec, value: ValueField, actions: ActionGrid) -> PolicyField:
        """The deviation as a feedback policy on the value's spatial grid."""
        grid = value.grid
        if self.kind == "atom":
            a = np.atleast_1d(np.asarray(self.payload, float))
            lo, hi = np.asarray(spec.action_low, float), np.asarray(spec.action_high, float)
            if a.shape != lo.shape or np.any(a < lo - 1e-12) or np.any(a > hi + 1e-12):
                raise ValueError(f"atom {a} is not in the action set")
            return PolicyField.dirac(grid, actions, a)
        if self.kind == "uniform":
            return PolicyField.uniform(grid, actions)
        if self.kind == "greedy":
            g = exponent_matrix(spec, grid.points, value.grad0(), actions)
            return PolicyField.argmax_atoms(grid, actions, g)
        if isinstance(self.payload, PolicyField):
            if self.payload.grid.shape != grid.shape or self.payload.actions.J != actions.J:
                raise ValueError("custom deviation does not live on the candidate's grids")
            return self.payload
        return PolicyField(grid, actions, np.asarray(self.payload, float), info={"kind": "custom"})


@dataclass(eq=False)
class Candidate:
    """A policy with its value field at temperature ``lam``."""

    value: ValueField
    policy: PolicyField
    lam: float = 0.0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.value.grid.shape != self.policy.grid.shape:
            raise ValueError("value and policy live on different grids")

    @property
    def actions(self) -> ActionGrid:
        return self.policy.actions

    @classmethod
    def from_policy(cls, spec: ProblemSpec, grid: Grid, policy: PolicyField, lam: float = 0.0,
                    pde_cfg: PdeSolveConfig = PdeSolveConfig()) -> "Candidate":
        value = evaluate_policy_pde(spec, grid, policy, lam, pde_cfg)
        return cls(value, policy, lam, {"source": policy.info.get("kind", "policy")})

    @classmethod
    def from_result(cls, spec: ProblemSpec, grid: Grid, result: EquilibriumResult, lam: float | None = None,
                    pde_cfg: PdeSolveConfig = PdeSolveConfig()) -> "Candidate":
        """The fixed point's own value when ``lam`` is its temperature, otherwise its policy re-evaluated."""
        if lam is None or lam == result.lam:
            return cls(result.value, result.policy, result.lam, {"source": "result"})
        out = cls.from_policy(spec, grid, result.policy, lam, pde_cfg)
        out.info["source"] = "result"
        return out

    @classmethod
    def from_trace(cls, spec: ProblemSpec, grid: Grid, trace: AnnealTrace, lam: float = 0.0,
                   pde_cfg: PdeSolveConfig = PdeSolveConfig()) -> "Candidate":
        """The annealed limit policy (last stage if no limit was formed), evaluated at ``lam``."""
        policy = trace.limit_policy if trace.limit_policy is not None else trace.stages[-1].policy
        out = cls.from_policy(spec, grid, policy, lam, pde_cfg)
        out.info.update(source="trace", lam_final=trace.lambdas[-1], atomic=policy.atomic)
        return out


@dataclass(eq=False)
class GapReport:
    epsilons: np.ndarray  # snapped, strictly decreasing
    x_points: np.ndarray  # (n_points, d), on grid nodes
    gaps: dict[str, np.ndarray]  # deviation label -> (n_points, n_eps)
    limsup_estimate: dict[str, np.ndarray]  # deviation label -> (n_points,)
    tol: float
    verdict: bool
    worst: tuple[str, list[float], float]
    lam: float
    engine: str
    note: str = REPORT_NOTE
    info: dict = field(default_factory=dict)

    def summary(self) -> dict:
        name, x, val = self.worst
        return dict(note=self.note, verdict="pass" if self.verdict else "fail", tol=self.tol, lam=self.lam,
                    engine=self.engine, epsilons=[float(e) for e in self.epsilons],
                    x_points=self.x_points.tolist(), worst_deviation=name, worst_x=x, worst_limsup=val,
                    limsup_estimate={k: v.tolist() for k, v in self.limsup_estimate.items()},
                    **{k: v for k, v in self.info.items() if isinstance(v, (int, float, str, bool))})


def default_library(spec: ProblemSpec, n_atoms: int = 5) -> list[DeviationSpec]:
    """Constant atoms spread evenly over the action box (its diagonal when d_a > 1), uniform and greedy."""
    lo, hi = np.asarray(spec.action_low, float), np.asarray(spec.action_high, float)
    atoms = [DeviationSpec("atom", lo + s * (hi - lo)) for s in np.linspace(0.0, 1.0, n_atoms)]
    return atoms + [DeviationSpec("uniform"), DeviationSpec("greedy")]


def snap_epsilons(grid: Grid, epsilons) -> np.ndarray:
    """Nearest time nodes to each eps, floored at the second node (2 dt0); duplicates dropped."""
    t = grid.t_nodes
    out = []
    for e in epsilons:
        if e < 0:
            raise ValueError("eps must be nonnegative")
        k = max(grid.time_index(e), 2)
        if not out or t[k] < out[-1]:
            out.append(float(t[k]))
    eps = np.array(out)
    if len(eps) < 2 or np.any(np.diff(eps) >= 0):
        raise ValueError("the eps grid must snap to at least two strictly decreasing time nodes")
    return eps


def _window_grid(grid: Grid, k: int) -> Grid:
    return Grid(grid.t_nodes[: k + 1], grid.axes, grid.boundary, dict(grid.info))


def _spike_pde(spec, value, dev_policy, lam, k, pde_cfg):
    """J' on every space node for the window [0, t_k]."""
    grid = value.grid
    sub = _window_grid(grid, k)
    pol = PolicyField(sub, dev_policy.actions, dev_policy.densities, dev_policy.atomic, dev_policy.lam,
                      dev_policy.info)
    cfg = PdeSolveConfig(pde_cfg.theta_scheme, pde_cfg.linear_tol, None, 0.0, pde_cfg.upwind)
    short = evaluate_policy_pde(spec, sub, pol, lam, cfg, terminal=value.values[k])
    return short.values[0].reshape(-1)


def _spike_mc(spec, value, dev_policy, lam, k, points, mc_cfg):
    """Euler-Maruyama estimate of J' at each point for the window [0, t_k]; returns (est, se)."""
    grid = value.grid
    eps = float(grid.t_nodes[k])
    coef = policy_coefficients(spec, dev_policy)
    steps = max(1, int(math.ceil(eps / mc_cfg.dt_sim - 1e-9)))
    s = np.linspace(0.0, eps, steps + 1)
    delta = np.asarray(spec.discount(s), float)
    ent = lam * coef.entropy if lam > 0 else None
    lo, hi = np.asarray(spec.x_low, float), np.asarray(spec.x_high, float)
    X0 = np.atleast_2d(points)
    P = len(X0)
    terminal = value.values[k].reshape(-1)

    def integrand(j, X):
        val = interp_slice(coef.reward_at(s[j]), grid, X)
        if ent is not None:
            val = val + delta[j] * interp_slice(ent, grid, X)
        return val

    def run_block(seed_seq, m):
        rng = np.random.default_rng(seed_seq)
        X = np.repeat(X0, m, axis=0)
        n = len(X)
        acc = np.zeros(n)
        f_prev = integrand(0, X)
        for j in range(steps):
            h = s[j + 1] - s[j]
            b = np.stack([interp_slice(coef.drift[:, i], grid, X) for i in range(spec.dim)], axis=-1)
            sig = np.asarray(spec.diffusion(X), float).reshape(n, spec.dim, -1)
            dW = rng.standard_normal((n, sig.shape[-1])) * math.sqrt(h)
            X = X + b * h + np.einsum("mij,mj->mi", sig, dW)
            if mc_cfg.exit_handling == "reflect":
                X, _ = _fold(X, lo, hi)
            else:
                X = np.clip(X, lo, hi)
            f_next = integrand(j + 1, X)
            acc += 0.5 * h * (f_prev + f_next)
            f_prev = f_next
        acc += interp_slice(terminal, grid, X)
        return acc.reshape(P, m)

    n_blocks = -(-mc_cfg.n_paths // mc_cfg.block_size)
    sizes = [min(mc_cfg.block_size, mc_cfg.n_paths - i * mc_cfg.block_size) for i in range(n_blocks)]
    seeds = np.random.SeedSequence(mc_cfg.rng_seed).spawn(n_blocks)
    if mc_cfg.workers > 1:
        with ThreadPoolExecutor(mc_cfg.workers) as pool:
            blocks = list(pool.map(run_block, seeds, sizes))
    else:
        blocks = [run_block(sq, m) for sq, m in zip(seeds, sizes)]
    samples = np.concatenate(blocks, axis=1)
    return samples.mean(axis=1), samples.std(axis=1, ddof=1) / math.sqrt(samples.shape[1])


def _check_deviation(dev_policy: PolicyField, lam: float) -> None:
    if lam > 0 and dev_policy.atomic:
        raise ValueError("atomic deviations have no entropy; they can only be tested at lam = 0")


def spike_perturb_value(spec: ProblemSpec, grid: Grid, pi_star_value: ValueField, deviation: DeviationSpec,
                        lam: float, eps: float, x, engine: str = "pde", actions: ActionGrid | None = None,
                        pde_cfg: PdeSolveConfig = PdeSolveConfig(), mc_cfg: McConfig = McConfig(),
                        return_se: bool = False):
    """Value at (0, x) of playing ``deviation`` on [0, eps) and the candidate afterwards.

    ``eps`` snaps to the nearest time node (at least the second one) and ``x``
    to the nearest space node. eps = 0 returns the candidate's own value.
    """
    if engine not in ("pde", "mc"):
        raise ValueError("engine must be 'pde' or 'mc'")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if pi_star_value.grid.shape != grid.shape:
        raise ValueError("the candidate value does not live on the grid")
    actions = actions or ActionGrid.for_problem(spec)
    node = grid.nearest_node(x)
    if eps == 0:
        out = float(pi_star_value.values[0].reshape(-1)[node])
        return (out, 0.0) if return_se else out
    dev = deviation.policy(spec, pi_star_value, actions)
    _check_deviation(dev, lam)
    k = max(grid.time_index(eps), 2)
    if engine == "pde":
        out = float(_spike_pde(spec, pi_star_value, dev, lam, k, pde_cfg)[node])
        return (out, 0.0) if return_se else out
    est, se = _spike_mc(spec, pi_star_value, dev, lam, k, grid.points[node][None], mc_cfg)
    return (float(est[0]), float(se[0])) if return_se else float(est[0])


def _limsup(eps: np.ndarray, g: np.ndarray) -> np.ndarray:
    """max of the two smallest-eps gaps and their linear extrapolation to eps = 0."""
    g1, g2 = g[..., -2], g[..., -1]
    e1, e2 = eps[-2], eps[-1]
    extrap = g2 + (g2 - g1) * e2 / (e1 - e2)
    return np.maximum(np.maximum(g1, g2), extrap)


def _gap_matrix(spec, candidate, deviation, eps, nodes, engine, pde_cfg, mc_cfg):
    value = candidate.value
    grid = value.grid
    dev = deviation.policy(spec, value, candidate.actions)
    _check_deviation(dev, candidate.lam)
    base = value.values[0].reshape(-1)[nodes]
    out = np.empty((len(nodes), len(eps)))
    for i, e in enumerate(eps):
        k = grid.time_index(e)
        if engine == "pde":
            spiked = _spike_pde(spec, value, dev, candidate.lam, k, pde_cfg)[nodes]
        else:
            spiked, _ = _spike_mc(spec, value, dev, candidate.lam, k, grid.points[nodes], mc_cfg)
        out[:, i] = (spiked - base) / grid.t_nodes[k]
    return out


def equilibrium_gap(spec: ProblemSpec, grid: Grid, candidate, deviation: DeviationSpec, x,
                    eps_grid=DEFAULT_EPSILONS, engine: str = "pde",
                    pde_cfg: PdeSolveConfig = PdeSolveConfig(), mc_cfg: McConfig = McConfig()):
    """Gap quotients (J' - J) / eps over the snapped eps grid at one or more start points.

    ``candidate`` is a Candidate or an EquilibriumResult. Returns
    (epsilons, gaps, limsup_estimate); gaps has shape (n_points, n_eps) when
    several points are given and (n_eps,) for a single point.
    """
    if isinstance(candidate, EquilibriumResult):
        candidate = Candidate.from_result(spec, grid, candidate)
    eps = snap_epsilons(grid, eps_grid)
    pts = np.asarray(x, float)
    single = pts.ndim == 0 or (pts.ndim == 1 and spec.dim > 1 and pts.shape[0] == spec.dim)
    pts = np.atleast_2d(pts.reshape(-1, spec.dim))
    nodes = np.array([grid.nearest_node(p) for p in pts])
    gaps = _gap_matrix(spec, candidate, deviation, eps, nodes, engine, pde_cfg, mc_cfg)
    lim = _limsup(eps, gaps)
    if single:
        return eps, gaps[0], float(lim[0])
    return eps, gaps, lim


def verify_equilibrium(spec: ProblemSpec, grid: Grid, candidate: Candidate,
                       deviation_library: list[DeviationSpec] | None = None, x_points=DEFAULT_X_POINTS,
                       tol: float = 1e-2, eps_grid=DEFAULT_EPSILONS, engine: str = "pde",
                       pde_cfg: PdeSolveConfig = PdeSolveConfig(), mc_cfg: McConfig = McConfig(),
                       workers: int = 1) -> GapReport:
    """Gap curves for every (deviation, start point); pass iff every limsup estimate is <= tol."""
    library = deviation_library if deviation_library is not None else default_library(spec)
    labels = [d.label for d in library]
    if len(set(labels)) != len(labels):
        raise ValueError("deviation labels must be unique")
    eps = snap_epsilons(grid, eps_grid)
    pts = np.atleast_2d(np.asarray(x_points, float).reshape(-1, spec.dim))
    nodes = np.array([grid.nearest_node(p) for p in pts])
    snapped = grid.points[nodes]

    def one(dev):
        return _gap_matrix(spec, candidate, dev, eps, nodes, engine, pde_cfg, mc_cfg)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            mats = list(pool.map(one, library))
    else:
        mats = [one(d) for d in library]
    gaps = dict(zip(labels, mats))
    lims = {k: _limsup(eps, g) for k, g in gaps.items()}
    worst_name = max(labels, key=lambda k: float(np.max(lims[k])))
    i = int(np.argmax(lims[worst_name]))
    worst = (worst_name, snapped[i].tolist(), float(lims[worst_name][i]))
    verdict = all(float(np.max(v)) <= tol for v in lims.values())
    info = dict(candidate_lam=candidate.lam, n_deviations=len(library), n_points=len(pts))
    info.update({f"candidate_{k}": v for k, v in candidate.info.items() if isinstance(v, (int, float, str, bool))})
    return GapReport(eps, snapped, gaps, lims, tol, verdict, worst, candidate.lam, engine, info=info)


def write_gap_report(report: GapReport, directory) -> Path:
    """gaps.csv (deviation, x, eps, gap) and report.json with the verdict."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    d = report.x_points.shape[1]
    xcols = ["x"] if d == 1 else [f"x{i + 1}" for i in range(d)]
    with open(out / "gaps.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        fh.write(f"# {report.note}\n")
        w.writerow(["deviation"] + xcols + ["eps", "gap"])
        for name, g in report.gaps.items():
            for i, x in enumerate(report.x_points):
                for j, e in enumerate(report.epsilons):
                    w.writerow([name] + [repr(float(v)) for v in x] + [repr(float(e)), repr(float(g[i, j]))])
    with open(out / "report.json", "w") as fh:
        json.dump(report.summary(), fh, indent=2, sort_keys=True)
    return out
