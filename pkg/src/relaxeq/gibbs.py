"""Gibbs-form policies, Shannon entropy and the soft/hard max values at t = 0.

The exponent is g(x, p, a) = b(x, a) . p + r(0, x, a). For temperature lam > 0
the Gibbs density is exp(g / lam) normalised under the action quadrature and the
soft max is lam * log of the same normaliser. All exponentials are taken after
subtracting the maximum over the action nodes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .grid import Grid, _read_blob, _write_blob
from .problem import ProblemSpec

__all__ = [
    "ActionGrid",
    "GrowthFit",
    "PolicyField",
    "concentration_mass",
    "entropy",
    "entropy_growth_probe",
    "exponent",
    "exponent_matrix",
    "gibbs_density",
    "gibbs_from_exponent",
    "gibbs_interval_mass",
    "hard_max_value",
    "read_policy_binary",
    "softmax_from_exponent",
    "softmax_value",
    "write_policy_binary",
    "write_policy_csv",
]

ARGMAX_TOL = 1e-12
RULES = ("lobatto", "trapezoid")


def _lobatto_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Lobatto nodes and weights on [-1, 1] (n >= 3, endpoints included)."""
    inner = special.roots_jacobi(n - 2, 1.0, 1.0)[0]
    x = np.concatenate([[-1.0], np.sort(inner), [1.0]])
    w = 2.0 / (n * (n - 1) * special.eval_legendre(n - 1, x) ** 2)
    return x, w


def _trapezoid_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.linspace(-1.0, 1.0, n)
    w = np.full(n, 2.0 / (n - 1))
    w[[0, -1]] *= 0.5
    return x, w


@dataclass(frozen=True, eq=False)
class ActionGrid:
    """Tensor quadrature on the action box; nodes (J, l), positive weights summing to Leb(U)."""

    nodes: np.ndarray
    weights: np.ndarray
    low: tuple[float, ...]
    high: tuple[float, ...]
    n_per_axis: int
    rule: str = "lobatto"

    @classmethod
    def build(cls, low, high, n: int = 101, rule: str = "lobatto") -> "ActionGrid":
        low = tuple(float(v) for v in np.atleast_1d(low))
        high = tuple(float(v) for v in np.atleast_1d(high))
        if n < 3:
            raise ValueError("need at least 3 action nodes per axis")
        if rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}")
        ref = _lobatto_1d(n) if rule == "lobatto" else _trapezoid_1d(n)
        axes, wts = [], []
        for lo, hi in zip(low, high):
            axes.append(lo + (ref[0] + 1.0) * (hi - lo) / 2)
            wts.append(ref[1] * (hi - lo) / 2)
        # snap the reference midpoint and endpoints exactly
        for ax, lo, hi in zip(axes, low, high):
            ax[0], ax[-1] = lo, hi
            if n % 2:
                ax[n // 2] = 0.5 * (lo + hi)
        mesh = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=-1)
        weights = np.ones(1)
        for w in wts:
            weights = np.multiply.outer(weights, w).ravel()
        return cls(nodes, weights, low, high, n, rule)

    @classmethod
    def for_problem(cls, spec: ProblemSpec, n: int = 101, rule: str = "lobatto") -> "ActionGrid":
        return cls.build(spec.action_low, spec.action_high, n, rule)

    @property
    def J(self) -> int:
        return len(self.weights)

    @property
    def action_dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def measure(self) -> float:
        return float(np.prod(np.subtract(self.high, self.low)))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.subtract(self.high, self.low)))

    def refined(self) -> "ActionGrid":
        return ActionGrid.build(self.low, self.high, 2 * self.n_per_axis - 1, self.rule)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Quadrature over the last axis."""
        return np.asarray(values) @ self.weights

    def to_dict(self) -> dict:
        return dict(low=list(self.low), high=list(self.high), n=self.n_per_axis, rule=self.rule)


@dataclass(frozen=True, eq=False)
class PolicyField:
    """Feedback relaxed control: densities[i, j] = pi(x_i, a_j) w.r.t. the action quadrature.

    Atomic policies (the lam -> 0 limit objects) store point masses m_j as
    densities m_j / w_j, so every quadrature average is computed the same way.
    """

    grid: Grid
    actions: ActionGrid
    densities: np.ndarray
    atomic: bool = False
    lam: float | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.densities.shape != (self.grid.n_x, self.actions.J):
            raise ValueError(f"densities must have shape {(self.grid.n_x, self.actions.J)}")
        if not np.all(np.isfinite(self.densities)) or np.any(self.densities < 0):
            raise ValueError("densities must be finite and nonnegative")
        mass = self.densities @ self.actions.weights
        if np.max(np.abs(mass - 1.0)) > 1e-10:
            raise ValueError(f"densities not normalised (max error {np.max(np.abs(mass - 1.0)):.2e})")

    @classmethod
    def uniform(cls, grid: Grid, actions: ActionGrid) -> "PolicyField":
        return cls(grid, actions, np.full((grid.n_x, actions.J), 1.0 / actions.measure), info={"kind": "uniform"})

    @classmethod
    def from_exponent(cls, grid: Grid, actions: ActionGrid, g: np.ndarray, lam: float) -> "PolicyField":
        if lam > 0:
            return cls(grid, actions, gibbs_from_exponent(g, actions.weights, lam, actions.measure), lam=lam)
        if lam == 0:
            return cls.argmax_atoms(grid, actions, g)
        raise ValueError("lam must be nonnegative")

    @classmethod
    def argmax_atoms(cls, grid: Grid, actions: ActionGrid, g: np.ndarray) -> "PolicyField":
        """Equal point masses on the argmax set of each row of g."""
        top = np.max(g, axis=1, keepdims=True)
        ties = g >= top - ARGMAX_TOL * np.maximum(1.0, np.abs(top))
        mass = ties / ties.sum(axis=1, keepdims=True)
        return cls(grid, actions, mass / actions.weights, atomic=True, lam=0.0, info={"kind": "greedy"})

    @classmethod
    def dirac(cls, grid: Grid, actions: ActionGrid, action) -> "PolicyField":
        """Constant policy: all mass on the action node closest to ``action``."""
        a = np.atleast_1d(np.asarray(action, float))
        j = int(np.argmin(np.linalg.norm(actions.nodes - a, axis=1)))
        dens = np.zeros((grid.n_x, actions.J))
        dens[:, j] = 1.0 / actions.weights[j]
        return cls(grid, actions, dens, atomic=True, lam=0.0,
                   info={"kind": "atom", "action": actions.nodes[j].tolist()})

    @property
    def masses(self) -> np.ndarray:
        return self.densities * self.actions.weights

    def average(self, values: np.ndarray) -> np.ndarray:
        """sum_j w_j pi(x_i, a_j) values[..., i, j] over the action axis."""
        return np.einsum("...ij,ij->...i", values, self.masses)

    def entropy(self) -> np.ndarray:
        """Shannon entropy per space node (zero for atomic policies)."""
        if self.atomic:
            return np.zeros(self.grid.n_x)
        return entropy(self.densities, self.actions)

    def sample(self, rng: np.random.Generator, node: np.ndarray) -> np.ndarray:
        """Draw one action per entry of ``node`` (flat space indices) by inverse CDF on the grid."""
        cdf = np.cumsum(self.masses[node], axis=1)
        u = rng.random(len(node)) * cdf[:, -1]
        j = np.minimum((cdf < u[:, None]).sum(axis=1), self.actions.J - 1)
        return self.actions.nodes[j]


# ---------------------------------------------------------------------------
# exponent and Gibbs operators


def exponent(spec: ProblemSpec, x, p, a, t: float = 0.0):
    """b(x, a) . p + r(t, x, a), broadcasting over leading axes."""
    x = np.asarray(x, float)
    p = np.asarray(p, float)
    a = np.asarray(a, float)
    if x.ndim == 0:
        x = x[None]
    if p.ndim == 0:
        p = p[None]
    if a.ndim == 0:
        a = a[None]
    drift = spec.drift(x, a)
    return np.sum(drift * p, axis=-1) + spec.reward(t, x, a)


def exponent_matrix(spec: ProblemSpec, points: np.ndarray, grads: np.ndarray, actions: ActionGrid,
                    t: float = 0.0) -> np.ndarray:
    """Exponent on every (space node, action node) pair: shape (n_x, J)."""
    x = points[:, None, :]
    a = actions.nodes[None, :, :]
    drift = spec.drift(x, a)
    return np.einsum("ijd,id->ij", drift, grads) + spec.reward(t, x, a)


def _check_lam(lam: float) -> None:
    if not lam > 0:
        raise ValueError(f"temperature must be positive, got {lam}; use hard_max_value for lam = 0")


def gibbs_from_exponent(g: np.ndarray, weights: np.ndarray, lam: float, measure: float | None = None) -> np.ndarray:
    """Gibbs density of exponent rows g (..., J); rows with a constant exponent get 1 / measure exactly."""
    _check_lam(lam)
    top = np.max(g, axis=-1, keepdims=True)
    e = np.exp((g - top) / lam)
    dens = e / (e @ weights)[..., None]
    if measure is not None:
        flat = np.all(g == top, axis=-1)
        dens[flat] = 1.0 / measure
    return dens


def softmax_from_exponent(g: np.ndarray, weights: np.ndarray, lam: float, measure: float | None = None) -> np.ndarray:
    """lam * log of the weighted sum of exp(g / lam); constant rows give max + lam * log(measure) exactly."""
    _check_lam(lam)
    m = np.max(g, axis=-1)
    out = m + lam * np.log(np.exp((g - m[..., None]) / lam) @ weights)
    if measure is not None:
        flat = np.all(g == m[..., None], axis=-1)
        out = np.where(flat, m + lam * math.log(measure), out)
    return out


def gibbs_density(spec: ProblemSpec, actions: ActionGrid, x, p, lam: float) -> np.ndarray:
    g = exponent(spec, np.asarray(x, float)[None], np.asarray(p, float)[None], actions.nodes)
    return gibbs_from_exponent(g, actions.weights, lam, actions.measure)


def softmax_value(spec: ProblemSpec, actions: ActionGrid, x, p, lam: float) -> float:
    g = exponent(spec, np.asarray(x, float)[None], np.asarray(p, float)[None], actions.nodes)
    return float(softmax_from_exponent(g, actions.weights, lam, actions.measure))


def hard_max_value(spec: ProblemSpec, actions: ActionGrid, x, p) -> tuple[float, np.ndarray]:
    g = exponent(spec, np.asarray(x, float)[None], np.asarray(p, float)[None], actions.nodes)
    top = float(np.max(g))
    return top, actions.nodes[g >= top - ARGMAX_TOL]


def entropy(density: np.ndarray, actions: ActionGrid) -> np.ndarray | float:
    """-sum_j w_j pi_j ln pi_j with 0 ln 0 = 0; works row-wise on 2-D input."""
    density = np.asarray(density, float)
    mass = density @ actions.weights
    if np.any(density < 0) or np.max(np.abs(mass - 1.0)) > 1e-6:
        raise ValueError("entropy needs a nonnegative density normalised under the action quadrature")
    safe = np.where(density > 0, density, 1.0)
    h = -(density * np.log(safe)) @ actions.weights
    return float(h) if np.ndim(h) == 0 else h


def gibbs_interval_mass(g_fn, actions: ActionGrid, lam: float, low, high) -> float:
    """Gibbs mass of the sub-box [low, high] of U.

    ``g_fn`` maps action nodes (J, l) to exponent values (J,). The sub-box gets
    its own quadrature of the same rule and size, so the result is an integral
    rather than a sum over the coarse nodes that happen to fall inside.
    """
    _check_lam(lam)
    sub = ActionGrid.build(low, high, actions.n_per_axis, actions.rule)
    g_full = np.asarray(g_fn(actions.nodes), float)
    g_sub = np.asarray(g_fn(sub.nodes), float)
    m = max(np.max(g_full), np.max(g_sub))
    z_full = np.exp((g_full - m) / lam) @ actions.weights
    z_sub = np.exp((g_sub - m) / lam) @ sub.weights
    return float(z_sub / z_full)


def concentration_mass(density: np.ndarray, actions: ActionGrid, argmax_set: np.ndarray,
                       radius: float) -> float:
    """Quadrature mass of the density within ``radius`` of the argmax set."""
    argmax_set = np.atleast_2d(argmax_set)
    dist = np.min(np.linalg.norm(actions.nodes[:, None, :] - argmax_set[None, :, :], axis=-1), axis=1)
    return float(np.sum((actions.weights * density)[dist <= radius + 1e-12]))


@dataclass
class GrowthFit:
    c1: float
    c2: float
    residual: float
    magnitudes: list[float]
    entropies: list[float]

    def to_dict(self) -> dict:
        return dict(c1=self.c1, c2=self.c2, residual=self.residual,
                    magnitudes=self.magnitudes, entropies=self.entropies)


def entropy_growth_probe(spec: ProblemSpec, actions: ActionGrid, lam: float, p_magnitudes,
                         n_directions: int = 8, n_points: int = 9, seed: int = 0,
                         refine_tol: float = 1e-6, max_nodes: int = 6401) -> GrowthFit:
    """Fit max |H(Gamma_lam(x, p, .))| over sampled (x, direction) against c1 + c2 ln(1 + |p|).

    At large |p| the Gibbs law narrows to width ~ lam / |p|, below the spacing of
    a fixed action grid, so each entropy is recomputed on refined grids until it
    changes by less than ``refine_tol`` (relative) or the grid reaches ``max_nodes``
    per axis.
    """
    if not 0 < lam <= 1:
        raise ValueError("lam must lie in (0, 1]")
    mags = np.asarray(p_magnitudes, float)
    if np.any(mags < 0):
        raise ValueError("magnitudes must be nonnegative")
    rng = np.random.default_rng(seed)
    d = spec.dim
    xs = np.asarray(spec.x_low) + (np.asarray(spec.x_high) - np.asarray(spec.x_low)) * rng.random((n_points, d))
    dirs = rng.normal(size=(n_directions, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
    X = np.repeat(xs, len(dirs), axis=0)
    D = np.tile(dirs, (n_points, 1))
    def max_abs_entropy(m, A):
        g = exponent_matrix(spec, X, m * D, A)
        return float(np.max(np.abs(entropy(gibbs_from_exponent(g, A.weights, lam, A.measure), A))))

    H = []
    for m in mags:
        A = actions
        h = max_abs_entropy(m, A)
        while A.n_per_axis < max_nodes:
            A = A.refined()
            h_prev, h = h, max_abs_entropy(m, A)
            if abs(h - h_prev) <= refine_tol * max(1.0, abs(h)):
                break
        H.append(h)
    H = np.array(H)
    A = np.stack([np.ones_like(mags), np.log1p(mags)], axis=1)
    coef, *_ = np.linalg.lstsq(A, H, rcond=None)
    resid = float(np.max(np.abs(A @ coef - H))) if len(H) else math.nan
    return GrowthFit(float(coef[0]), float(coef[1]), resid, mags.tolist(), H.tolist())


# ---------------------------------------------------------------------------
# serialization


def write_policy_binary(path, policy: PolicyField) -> None:
    g = policy.grid
    header = dict(kind="policy", shape=list(g.shape) + [policy.actions.J], axes=[a.tolist() for a in g.axes],
                  dx=list(g.dx), boundary=g.boundary, action_nodes=policy.actions.nodes.tolist(),
                  action_weights=policy.actions.weights.tolist(), actions=policy.actions.to_dict(),
                  atomic=policy.atomic, lam=policy.lam)
    _write_blob(Path(path), header, policy.densities)


def read_policy_binary(path, grid: Grid | None = None) -> PolicyField:
    header, data = _read_blob(Path(path))
    if header.get("kind") != "policy":
        raise ValueError(f"{path} does not hold a policy field")
    a = header["actions"]
    actions = ActionGrid.build(a["low"], a["high"], a["n"], a["rule"])
    if grid is None:
        axes = tuple(np.array(v) for v in header["axes"])
        grid = Grid(np.array([0.0, 0.5, 1.0]), axes, header["boundary"])
    elif tuple(grid.shape) != tuple(header["shape"][:-1]):
        raise ValueError("policy file does not match the supplied grid")
    return PolicyField(grid, actions, data.reshape(grid.n_x, actions.J), header["atomic"], header["lam"])


def write_policy_csv(path, policy: PolicyField) -> None:
    g = policy.grid
    pts = g.points
    nodes = policy.actions.nodes
    names = [f"x{i + 1}" for i in range(g.dim)] + [f"a{i + 1}" for i in range(nodes.shape[1])] + ["density"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for i in range(g.n_x):
            for j in range(policy.actions.J):
                w.writerow([repr(float(v)) for v in pts[i]] + [repr(float(v)) for v in nodes[j]]
                           + [repr(float(policy.densities[i, j]))])
