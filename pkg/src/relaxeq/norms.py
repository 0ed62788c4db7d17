"""Discrete Hölder, weighted-global and uniformly-local Sobolev norms.

Regions are boolean masks over the (t, x) nodes of a grid. The Hölder seminorm
uses raw parabolic distance |t - s| + |x - y|^2 with pairs restricted to
distance <= 1 and no normalisation for grid anisotropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .grid import Grid, ValueField, spatial_derivatives, time_derivative

__all__ = [
    "NormConfig",
    "c01_norm",
    "derivative_stack",
    "holder_seminorm",
    "local_sobolev_norm",
    "parabolic_ball_mask",
    "weighted_global_norm",
]


@dataclass(frozen=True)
class NormConfig:
    alpha: float = 0.5
    p: float | None = None  # defaults to (d + 2) / (1 - alpha)
    N_max: int = 20
    max_pairs: int = 1_000_000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.N_max < 1:
            raise ValueError("N_max must be at least 1")
        if self.p is not None and self.p <= 1:
            raise ValueError("p must exceed 1")

    def power(self, dim: int) -> float:
        p = (dim + 2) / (1 - self.alpha) if self.p is None else self.p
        if p <= dim + 2:
            raise ValueError(f"Sobolev power {p} must exceed d + 2 = {dim + 2}")
        return p


def derivative_stack(field: ValueField, order: tuple[int, int] = (1, 2)) -> list[tuple[str, np.ndarray]]:
    """All d_t^j D_x^a v with j <= order[0] and |a| <= order[1], on the field's grid."""
    grid = field.grid
    d = grid.dim
    l, k = order
    spatial = [("v", field.values)]
    if k >= 1:
        grad, hess = (field.grad, field.hess) if field.has_derivatives else spatial_derivatives(field.values, grid)
        spatial += [(f"v_x{i + 1}", grad[..., i]) for i in range(d)]
        if k >= 2:
            spatial += [(f"v_x{i + 1}x{j + 1}", hess[..., i, j]) for i in range(d) for j in range(i, d)]
    out = list(spatial)
    if l >= 1:
        for name, arr in spatial:
            if name == "v" and field.dt is not None:
                out.append(("v_t", field.dt))
            else:
                out.append((name.replace("v", "v_t", 1), time_derivative(arr, grid.t_nodes)))
    return out


def c01_norm(field: ValueField) -> float:
    """sup |v| + sup |D_x v| over all grid nodes, the Lipschitz-in-space size of a value field."""
    grad = field.grad if field.has_derivatives else spatial_derivatives(field.values, field.grid)[0]
    return float(np.max(np.abs(field.values)) + np.max(np.linalg.norm(grad, axis=-1)))


def parabolic_ball_mask(grid: Grid, N: float, t0: float = 0.0, x0=None) -> np.ndarray:
    """Nodes of D_N(t0, x0) = [t0, t0 + N] x {|x - x0| <= N} on the grid."""
    x0 = np.zeros(grid.dim) if x0 is None else np.atleast_1d(np.asarray(x0, float))
    t_ok = (grid.t_nodes >= t0) & (grid.t_nodes <= t0 + N)
    x_ok = np.linalg.norm(grid.points - x0, axis=1) <= N
    return (t_ok[:, None] & x_ok[None, :]).reshape((len(grid.t_nodes),) + grid.shape)


def _region_mask(grid: Grid, region) -> np.ndarray:
    full = (len(grid.t_nodes),) + grid.shape
    if region is None:
        return np.ones(full, dtype=bool)
    if isinstance(region, np.ndarray):
        if region.shape != full:
            raise ValueError("region mask shape does not match the grid")
        return region.astype(bool)
    # dict form: {"t": (lo, hi), "x": [(lo, hi), ...]}
    t_lo, t_hi = region.get("t", (-math.inf, math.inf))
    mask_t = (grid.t_nodes >= t_lo - 1e-12) & (grid.t_nodes <= t_hi + 1e-12)
    boxes = region.get("x", [(-math.inf, math.inf)] * grid.dim)
    axes_ok = [(ax >= lo - 1e-12) & (ax <= hi + 1e-12) for ax, (lo, hi) in zip(grid.axes, boxes)]
    mask_x = axes_ok[0]
    for ok in axes_ok[1:]:
        mask_x = np.multiply.outer(mask_x, ok)
    return np.multiply.outer(mask_t, mask_x).astype(bool)


def _node_coords(grid: Grid, mask: np.ndarray):
    idx = np.nonzero(mask.reshape(len(grid.t_nodes), -1))
    return idx[0], idx[1]


def _pair_set(grid: Grid, mask: np.ndarray, max_pairs: int, seed: int):
    """Node pairs (flat indices into the masked region) with parabolic distance in (0, 1].

    All pairs when there are at most ``max_pairs`` candidates, otherwise a
    seeded sample of local pairs. Depends only on the grid and mask.
    """
    k_idx, x_idx = _node_coords(grid, mask)
    n = len(k_idx)
    t = grid.t_nodes[k_idx]
    x = grid.points[x_idx]
    if n < 2:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0), {"pairs": 0, "sampled": False, "seed": seed}
    if n * (n - 1) // 2 <= max_pairs:
        i, j = np.triu_indices(n, k=1)
        dist = np.abs(t[i] - t[j]) + np.sum((x[i] - x[j]) ** 2, axis=1)
        keep = (dist <= 1.0) & (dist > 0)
        return i[keep], j[keep], dist[keep], {"pairs": int(keep.sum()), "sampled": False, "seed": seed}

    rng = np.random.default_rng(seed)
    # lookup from (time index, spatial flat index) to position in the masked list
    pos = -np.ones((len(grid.t_nodes), grid.n_x), dtype=np.int64)
    pos[k_idx, x_idx] = np.arange(n)
    t_lo = np.searchsorted(grid.t_nodes, grid.t_nodes - 1.0, side="left")
    t_hi = np.searchsorted(grid.t_nodes, grid.t_nodes + 1.0, side="right") - 1
    radius = [max(1, int(math.floor(1.0 / h))) for h in grid.dx]
    shape = np.array(grid.shape)
    out_i, out_j, out_d = [], [], []
    total = 0
    for _ in range(50):
        m = int(1.5 * (max_pairs - total)) + 16
        i = rng.integers(0, n, m)
        ki = k_idx[i]
        kj = t_lo[ki] + (rng.random(m) * (t_hi[ki] - t_lo[ki] + 1)).astype(np.int64)
        multi = np.array(np.unravel_index(x_idx[i], grid.shape)).T
        off = np.stack([rng.integers(-r, r + 1, m) for r in radius], axis=1)
        mj = multi + off
        inside = np.all((mj >= 0) & (mj < shape), axis=1)
        mj = np.clip(mj, 0, shape - 1)
        xj = np.ravel_multi_index(tuple(mj.T), grid.shape)
        j = pos[kj, xj]
        ok = inside & (j >= 0)
        i, j = i[ok], j[ok]
        dist = np.abs(t[i] - t[j]) + np.sum((x[i] - x[j]) ** 2, axis=1)
        keep = (dist <= 1.0) & (dist > 0)
        i, j, dist = i[keep], j[keep], dist[keep]
        take = min(len(i), max_pairs - total)
        out_i.append(i[:take])
        out_j.append(j[:take])
        out_d.append(dist[:take])
        total += take
        if total >= max_pairs:
            break
    return (np.concatenate(out_i), np.concatenate(out_j), np.concatenate(out_d),
            {"pairs": total, "sampled": True, "seed": seed})


def _seminorm_on_pairs(arr: np.ndarray, mask: np.ndarray, pairs, alpha: float) -> float:
    i, j, dist, _ = pairs
    if len(i) == 0:
        return 0.0
    vals = arr.reshape(mask.shape)[mask] if arr.shape == mask.shape else arr.reshape(-1)[mask.reshape(-1)]
    return float(np.max(np.abs(vals[i] - vals[j]) / dist ** (alpha / 2)))


def holder_seminorm(field, alpha: float, region=None, max_pairs: int = 1_000_000, seed: int = 0,
                    grid: Grid | None = None, return_info: bool = False):
    """Parabolic Hölder seminorm of a field (or of a raw array on ``grid``) over a region.

    ``region`` is None (whole grid), a boolean node mask, or a dict
    {"t": (lo, hi), "x": [(lo, hi), ...]} of closed intervals.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if isinstance(field, ValueField):
        grid, arr = field.grid, field.values
    else:
        if grid is None:
            raise ValueError("a grid is required for raw arrays")
        arr = np.asarray(field, dtype=float)
    mask = _region_mask(grid, region)
    pairs = _pair_set(grid, mask, max_pairs, seed)
    value = _seminorm_on_pairs(arr, mask, pairs, alpha)
    return (value, pairs[3]) if return_info else value


def weighted_global_norm(field: ValueField, cfg: NormConfig = NormConfig(), order=(1, 2),
                         return_info: bool = False):
    """sum_{N=1}^{N_max} 2^-N * (sup + Hölder seminorm of every derivative up to ``order``) on D_N."""
    grid = field.grid
    derivs = derivative_stack(field, order)
    total = 0.0
    cache: dict[bytes, float] = {}
    info = {"seed": cfg.seed, "pairs": {}, "sampled": False}
    for N in range(1, cfg.N_max + 1):
        mask = parabolic_ball_mask(grid, N)
        key = np.packbits(mask).tobytes()
        if key not in cache:
            if not mask.any():
                cache[key] = 0.0
            else:
                pairs = _pair_set(grid, mask, cfg.max_pairs, cfg.seed)
                info["pairs"][N] = pairs[3]["pairs"]
                info["sampled"] |= pairs[3]["sampled"]
                s = 0.0
                for _, arr in derivs:
                    s += float(np.max(np.abs(arr[mask]))) + _seminorm_on_pairs(arr, mask, pairs, cfg.alpha)
                cache[key] = s
        total += cache[key] / 2.0 ** N
    return (total, info) if return_info else total


def _window_integrals(F: np.ndarray, coords: np.ndarray, axis: int, width: float = 1.0) -> np.ndarray:
    """Trapezoid integrals of F over windows [c_k, c_k + width] starting at nodes.

    The cumulative integral is interpolated linearly at the window end, so a
    constant integrand gets exactly ``width`` times its value. Windows that
    would leave the axis are dropped; an axis shorter than ``width`` yields
    the single whole-axis window.
    """
    Q = cumulative_trapezoid(F, coords, axis=axis, initial=0.0)
    Q = np.moveaxis(Q, axis, 0)
    if coords[-1] - coords[0] < width * (1 - 1e-12):
        out = Q[-1:] - Q[:1]
    else:
        starts = np.nonzero(coords + width <= coords[-1] + 1e-12 * max(1.0, abs(coords[-1])))[0]
        ends = np.minimum(coords[starts] + width, coords[-1])
        m = np.clip(np.searchsorted(coords, ends, side="right") - 1, 0, len(coords) - 2)
        frac = (ends - coords[m]) / (coords[m + 1] - coords[m])
        frac = frac.reshape((-1,) + (1,) * (Q.ndim - 1))
        out = Q[m] + frac * (Q[m + 1] - Q[m]) - Q[starts]
    return np.moveaxis(out, 0, axis)


def local_sobolev_norm(field: ValueField, cfg: NormConfig = NormConfig(), order=(1, 2)) -> float:
    """sum over derivatives of sup over node-aligned unit boxes of the trapezoid L^p norm."""
    grid = field.grid
    p = cfg.power(grid.dim)
    total = 0.0
    for _, arr in derivative_stack(field, order):
        scale = float(np.max(np.abs(arr)))
        if scale == 0.0:
            continue
        # normalise before the p-th power to stay in floating-point range
        F = (np.abs(arr) / scale) ** p
        F = _window_integrals(F, grid.t_nodes, 0)
        for i, ax in enumerate(grid.axes):
            F = _window_integrals(F, ax, i + 1)
        total += scale * float(np.max(F)) ** (1.0 / p)
    return total
