"""Value of a fixed feedback policy: backward PDE solve and Feynman-Kac Monte Carlo.

The PDE is

    u_t + 1/2 tr(sigma sigma^T D^2 u) + b^pi . D u + r^pi(t, x) + lam delta(t) H(pi(x)) = 0

solved backward from u(T*, .) = terminal_value with a theta-scheme. Spatial
stencils and boundary ghosts are the ones used by ``grid.finite_diff``, so the
residual of a computed solution only carries the time-stepping error.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu

from .gibbs import PolicyField
from .grid import Grid, ValueField, finite_diff, interp_slice
from .problem import ProblemSpec, horizon_for_tail, tail_mass

__all__ = [
    "McConfig",
    "PdeSolveConfig",
    "PolicyCoefficients",
    "SolverError",
    "evaluate_policy_mc",
    "evaluate_policy_mc_batch",
    "evaluate_policy_pde",
    "pde_residual",
    "policy_coefficients",
]


class SolverError(RuntimeError):
    """A linear solve missed its tolerance."""


@dataclass(frozen=True)
class PdeSolveConfig:
    theta_scheme: float = 0.5
    linear_tol: float = 1e-10
    horizon_T: float | None = None  # None: use the grid's last node
    terminal_value: float = 0.0
    upwind: bool = True  # one-sided drift where the cell Peclet number exceeds 1

    def __post_init__(self):
        if not 0.5 <= self.theta_scheme <= 1.0:
            raise ValueError("theta_scheme must lie in [0.5, 1]")
        if not self.linear_tol > 0:
            raise ValueError("linear_tol must be positive")
        if self.horizon_T is not None and not self.horizon_T > 0:
            raise ValueError("horizon_T must be positive")


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 20_000
    dt_sim: float = 0.01
    rng_seed: int = 0
    exit_handling: str = "reflect"
    precision: float = 5e-3  # horizon stops where the remaining tail mass < 0.1 * precision
    grade: float = 1.0  # step growth after t = 1: dt = dt_sim * (1 + s) ** grade / 2 ** grade
    dt_max: float = 2.0
    block_size: int = 5000
    workers: int = 1

    def __post_init__(self):
        if self.n_paths < 100:
            raise ValueError("n_paths must be at least 100")
        if not self.dt_sim > 0:
            raise ValueError("dt_sim must be positive")
        if self.exit_handling not in ("reflect", "clip"):
            raise ValueError("exit_handling must be 'reflect' or 'clip'")
        if self.block_size < 1 or self.workers < 1:
            raise ValueError("block_size and workers must be positive")


@dataclass(frozen=True, eq=False)
class PolicyCoefficients:
    """Action-averaged coefficients of a policy on the spatial nodes."""

    drift: np.ndarray  # (n_x, d)
    cov: np.ndarray  # (n_x, d, d) = sigma sigma^T
    reward_parts: tuple[tuple[object, np.ndarray], ...] | None  # ((tau, rho^pi (n_x,)), ...)
    entropy: np.ndarray  # (n_x,)
    policy: PolicyField
    spec: ProblemSpec

    def reward_at(self, t: float) -> np.ndarray:
        if self.reward_parts is not None:
            return sum(np.asarray(tau(t), float) * rho for tau, rho in self.reward_parts)
        g = self.policy.grid
        x = g.points[:, None, :]
        a = self.policy.actions.nodes[None, :, :]
        return self.policy.average(self.spec.reward(t, x, a))


def policy_coefficients(spec: ProblemSpec, policy: PolicyField) -> PolicyCoefficients:
    g = policy.grid
    x = g.points[:, None, :]
    a = policy.actions.nodes[None, :, :]
    drift = np.einsum("ijd,ij->id", spec.drift(x, a), policy.masses)
    sig = np.asarray(spec.diffusion(g.points), float).reshape(g.n_x, g.dim, -1)
    cov = sig @ np.swapaxes(sig, -1, -2)
    parts = None
    if spec.reward_terms is not None:
        parts = tuple((tau, policy.average(np.broadcast_to(rho(x, a), (g.n_x, policy.actions.J))))
                      for tau, rho in spec.reward_terms)
    return PolicyCoefficients(drift, cov, parts, policy.entropy(), policy, spec)


def _check_policy(spec: ProblemSpec, grid: Grid, policy: PolicyField, lam: float) -> None:
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if policy.grid.shape != grid.shape:
        raise ValueError("policy and grid have different spatial shapes")
    if lam > 0:
        if policy.atomic:
            raise ValueError("atomic policies carry no entropy; evaluate them with lam = 0")
    if policy.actions.action_dim != spec.action_dim:
        raise ValueError("policy action dimension does not match the problem")


# ---------------------------------------------------------------------------
# spatial operator


def _operator(grid: Grid, coef: PolicyCoefficients, upwind: bool) -> sparse.csr_matrix:
    """Sparse matrix of L u = 1/2 tr(a D^2 u) + b . D u with ghost nodes folded in."""
    shape = grid.shape
    n = grid.n_x
    d = grid.dim
    idx = np.arange(n).reshape(shape)
    rows, cols, vals = [], [], []
    neumann = grid.boundary == "neumann"

    def add(r, c, v):
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(np.broadcast_to(v, r.shape).ravel())

    for i in range(d):
        h = grid.dx[i]
        a_ii = coef.cov[:, i, i].reshape(shape)
        b_i = coef.drift[:, i].reshape(shape)
        wm = 0.5 * a_ii / h ** 2
        wp = 0.5 * a_ii / h ** 2
        wc = -a_ii / h ** 2
        if upwind:
            pe = np.abs(b_i) * h / np.maximum(a_ii, 1e-300)
            central = pe <= 1.0
        else:
            central = np.ones(shape, dtype=bool)
        # central drift
        wm = wm - np.where(central, b_i / (2 * h), 0.0)
        wp = wp + np.where(central, b_i / (2 * h), 0.0)
        # upwind drift
        pos = ~central & (b_i > 0)
        neg = ~central & (b_i <= 0)
        wp = wp + np.where(pos, b_i / h, 0.0)
        wc = wc - np.where(pos, b_i / h, 0.0)
        wc = wc + np.where(neg, b_i / h, 0.0)
        wm = wm - np.where(neg, b_i / h, 0.0)
        add(idx, idx, wc)
        pos_i = np.indices(shape)[i]
        lower = pos_i == 0
        upper = pos_i == shape[i] - 1
        stride = int(np.prod(shape[i + 1:], dtype=int))
        # ghost folding: neumann u[-1] = u[1]; extrapolate u[-1] = 2 u[0] - u[1]
        minus = np.where(lower, idx + stride, idx - stride)
        plus = np.where(upper, idx - stride, idx + stride)
        if neumann:
            add(idx, minus, wm)
            add(idx, plus, wp)
        else:
            add(idx, minus, np.where(lower, -wm, wm))
            add(idx, plus, np.where(upper, -wp, wp))
            add(idx, idx, np.where(lower, 2 * wm, 0.0) + np.where(upper, 2 * wp, 0.0))
    # mixed second derivatives, central with folded ghosts
    for i in range(d):
        for j in range(i + 1, d):
            a_ij = coef.cov[:, i, j].reshape(shape)
            if not np.any(a_ij):
                continue
            w = a_ij / (4 * grid.dx[i] * grid.dx[j])  # 1/2 * 2 * a_ij * mixed
            for si, sj, sgn in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
                terms = [(1.0, idx)]
                for ax, s in ((i, si), (j, sj)):
                    new_terms = []
                    stride = int(np.prod(shape[ax + 1:], dtype=int))
                    pos_ax = np.indices(shape)[ax]
                    edge = (pos_ax == 0) if s < 0 else (pos_ax == shape[ax] - 1)
                    for c, base in terms:
                        nb = base + s * stride
                        inward = base - s * stride
                        if neumann:
                            new_terms.append((c, np.where(edge, inward, nb)))
                        else:
                            new_terms.append((c * np.where(edge, -1.0, 1.0), np.where(edge, inward, nb)))
                            new_terms.append((c * np.where(edge, 2.0, 0.0), base))
                    terms = new_terms
                for c, target in terms:
                    add(idx, target, sgn * w * c)
    A = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return A.tocsr()


def _tridiagonal_bands(A: sparse.csr_matrix) -> np.ndarray:
    n = A.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = A.diagonal(1)
    ab[1, :] = A.diagonal(0)
    ab[2, :-1] = A.diagonal(-1)
    return ab


def evaluate_policy_pde(spec: ProblemSpec, grid: Grid, policy: PolicyField, lam: float = 0.0,
                        cfg: PdeSolveConfig = PdeSolveConfig(), terminal: np.ndarray | None = None) -> ValueField:
    """Backward theta-scheme solve on the grid; ``terminal`` (shape grid.shape) overrides cfg.terminal_value."""
    _check_policy(spec, grid, policy, lam)
    if cfg.horizon_T is not None and not math.isclose(cfg.horizon_T, grid.horizon, rel_tol=1e-12):
        raise ValueError("horizon_T must match the grid's last time node")
    coef = policy_coefficients(spec, policy)
    L = _operator(grid, coef, cfg.upwind)
    t = grid.t_nodes
    K = len(t) - 1
    n = grid.n_x
    theta = cfg.theta_scheme
    ent = lam * coef.entropy if lam > 0 else np.zeros(n)
    delta = np.asarray(spec.discount(t), float)

    def source(k):
        return coef.reward_at(t[k]) + delta[k] * ent

    U = np.empty((K + 1, n))
    if terminal is None:
        U[K] = cfg.terminal_value
    else:
        terminal = np.asarray(terminal, float)
        if terminal.shape not in (grid.shape, (n,)):
            raise ValueError("terminal data must live on the spatial grid")
        U[K] = terminal.reshape(n)
    f_next = source(K)
    Lu_next = L @ U[K]
    one_d = grid.dim == 1
    I = sparse.identity(n, format="csr")
    max_res = 0.0
    for k in range(K - 1, -1, -1):
        h = t[k + 1] - t[k]
        f_k = source(k)
        rhs = U[k + 1] + h * ((1 - theta) * (Lu_next + f_next) + theta * f_k)
        M = (I - (theta * h) * L).tocsr()
        if one_d:
            u = solve_banded((1, 1), _tridiagonal_bands(M), rhs, check_finite=False)
        else:
            u = splu(M.tocsc()).solve(rhs)
        res = float(np.max(np.abs(M @ u - rhs))) / max(1.0, float(np.max(np.abs(rhs))))
        max_res = max(max_res, res)
        if res > cfg.linear_tol:
            raise SolverError(f"linear solve residual {res:.3e} exceeds tolerance at t={t[k]:.6g}")
        U[k] = u
        Lu_next = L @ u
        f_next = f_k
    info = dict(theta=theta, steps=K, horizon=grid.horizon, tail_mass=tail_mass(spec, grid.horizon),
                max_linear_residual=max_res, lam=lam)
    field_ = ValueField(grid, U.reshape((K + 1,) + grid.shape), info=info)
    return finite_diff(field_)


def pde_residual(spec: ProblemSpec, grid: Grid, u: ValueField, policy: PolicyField, lam: float = 0.0):
    """Left side of the evaluation PDE on interior spatial nodes and t < T*.

    Returns (residual array shaped like u.values with NaN off the reported
    nodes, sup of |residual|).
    """
    u = u.with_derivatives()
    coef = policy_coefficients(spec, policy)
    K = len(grid.t_nodes) - 1
    n = grid.n_x
    grad = u.grad.reshape(K + 1, n, grid.dim)
    hess = u.hess.reshape(K + 1, n, grid.dim, grid.dim)
    ut = u.dt.reshape(K + 1, n)
    diff = 0.5 * np.einsum("kiab,iab->ki", hess, coef.cov)
    adv = np.einsum("kia,ia->ki", grad, coef.drift)
    delta = np.asarray(spec.discount(grid.t_nodes), float)
    src = np.stack([coef.reward_at(tk) for tk in grid.t_nodes])
    if lam > 0:
        src = src + lam * delta[:, None] * coef.entropy[None, :]
    res = ut + diff + adv + src
    res = res.reshape(u.values.shape)
    mask = np.zeros(u.values.shape, dtype=bool)
    mask[:K] = grid.interior_mask()[None]
    out = np.where(mask, res, np.nan)
    return out, float(np.nanmax(np.abs(out)))


# ---------------------------------------------------------------------------
# Monte Carlo


def _fold(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reflect coordinates into [lo, hi]; returns (folded, any-reflection flags)."""
    width = hi - lo
    y = np.mod(x - lo, 2 * width)
    y = np.where(y > width, 2 * width - y, y)
    out = lo + y
    hit = np.any((x < lo) | (x > hi), axis=-1)
    return out, hit


def _mc_times(cfg: McConfig, horizon: float) -> np.ndarray:
    s = [0.0]
    k = 0
    while s[-1] < horizon:
        if s[-1] < 1.0 - 1e-12:
            k += 1
            nxt = k * cfg.dt_sim
        else:
            nxt = s[-1] + min(cfg.dt_max, cfg.dt_sim * ((1 + s[-1]) / 2.0) ** cfg.grade)
        s.append(min(nxt, horizon))
    return np.array(s)


def evaluate_policy_mc(spec: ProblemSpec, policy: PolicyField, lam: float, t: float, x,
                       cfg: McConfig = McConfig()) -> tuple[float, float, dict]:
    """Feynman-Kac estimate of V(t, x) with its standard error and diagnostics."""
    est, se, diag = evaluate_policy_mc_batch(spec, policy, lam, t, np.atleast_2d(np.asarray(x, float)), cfg)
    return float(est[0]), float(se[0]), diag


def evaluate_policy_mc_batch(spec: ProblemSpec, policy: PolicyField, lam: float, t: float, points,
                             cfg: McConfig = McConfig()) -> tuple[np.ndarray, np.ndarray, dict]:
    """Feynman-Kac estimates at several start points sharing one time grid.

    Paths start at each point at absolute time t and accumulate
    r^pi(t+s, X_s) + lam delta(t+s) H(pi(X_s)) by the trapezoid rule, using the
    policy-averaged coefficients interpolated linearly between space nodes.
    Paths are split into fixed-size blocks with spawned seeds, so the result
    does not depend on ``workers``.
    """
    grid = policy.grid
    _check_policy(spec, grid, policy, lam)
    X0 = np.atleast_2d(np.asarray(points, float))
    if X0.shape[1] != spec.dim:
        raise ValueError("points have the wrong dimension")
    P = X0.shape[0]
    coef = policy_coefficients(spec, policy)
    target = 0.1 * cfg.precision
    S = max(horizon_for_tail(spec, target) - t, cfg.dt_sim) if tail_mass(spec, t) > target else cfg.dt_sim
    s = _mc_times(cfg, S)
    ts = t + s
    delta = np.asarray(spec.discount(ts), float)
    ent = lam * coef.entropy if lam > 0 else None
    taus = None
    if coef.reward_parts is not None:
        taus = [np.asarray(tau(ts), float) for tau, _ in coef.reward_parts]
    lo = np.asarray(spec.x_low, float)
    hi = np.asarray(spec.x_high, float)

    def interp(values, pts):
        return interp_slice(values, grid, pts)

    def integrand(k, X):
        if taus is not None:
            val = sum(tk[k] * interp(rho, X) for tk, (_, rho) in zip(taus, coef.reward_parts))
        else:
            val = interp(coef.reward_at(ts[k]), X)
        if ent is not None:
            val = val + delta[k] * interp(ent, X)
        return val

    def run_block(seed_seq, m):
        rng = np.random.default_rng(seed_seq)
        X = np.repeat(X0, m, axis=0)  # point-major: rows p*m .. (p+1)*m - 1
        n = len(X)
        acc = np.zeros(n)
        reflected = np.zeros(n, dtype=bool)
        f_prev = integrand(0, X)
        for k in range(len(s) - 1):
            h = s[k + 1] - s[k]
            b = np.stack([interp(coef.drift[:, i], X) for i in range(spec.dim)], axis=-1)
            sig = np.asarray(spec.diffusion(X), float).reshape(n, spec.dim, -1)
            dW = rng.standard_normal((n, sig.shape[-1])) * math.sqrt(h)
            X = X + b * h + np.einsum("mij,mj->mi", sig, dW)
            if cfg.exit_handling == "reflect":
                X, hit = _fold(X, lo, hi)
            else:
                hit = np.any((X < lo) | (X > hi), axis=-1)
                X = np.clip(X, lo, hi)
            reflected |= hit
            f_next = integrand(k + 1, X)
            acc += 0.5 * h * (f_prev + f_next)
            f_prev = f_next
        return acc.reshape(P, m), reflected.reshape(P, m).sum(axis=1)

    n_blocks = -(-cfg.n_paths // cfg.block_size)
    sizes = [min(cfg.block_size, cfg.n_paths - i * cfg.block_size) for i in range(n_blocks)]
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(n_blocks)
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(run_block, seeds, sizes))
    else:
        results = [run_block(sq, m) for sq, m in zip(seeds, sizes)]
    samples = np.concatenate([r[0] for r in results], axis=1)
    est = samples.mean(axis=1)
    se = samples.std(axis=1, ddof=1) / math.sqrt(samples.shape[1])
    diag = dict(n_paths=cfg.n_paths, steps=len(s) - 1, horizon=float(t + S), tail_mass=tail_mass(spec, t + S),
                reflected_paths=[int(v) for v in sum(r[1] for r in results)], seed=cfg.rng_seed,
                blocks=n_blocks, block_size=cfg.block_size)
    return est, se, diag
