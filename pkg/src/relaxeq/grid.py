"""Space-time grids, value fields and finite-difference derivatives.

Time nodes are uniform with step ``dt0`` on [0, t_fine] and then graded,
dt(t) = dt0 * ((1 + t) / (1 + t_fine)) ** grade, up to the truncation horizon.
Halving ``dt0`` halves every step, so grid-halving studies stay nested in spirit.

Spatial boundaries use one ghost node per side:
    neumann      u[-1] = u[1]            (reflecting, zero normal derivative)
    extrapolate  u[-1] = 2 u[0] - u[1]   (linear extrapolation)
"""

from __future__ import annotations

import csv
import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .problem import BOUNDARY_MODES, ProblemSpec, horizon_for_tail, tail_mass

__all__ = [
    "Grid",
    "ValueField",
    "finite_diff",
    "make_grid",
    "time_nodes",
    "time_derivative_weights",
    "interp_slice",
    "write_field_binary",
    "read_field_binary",
    "write_field_csv",
]

MAGIC = b"RXQFLD01"


def time_nodes(dt0: float, horizon: float, t_fine: float = 1.0, grade: float = 1.25) -> np.ndarray:
    if dt0 <= 0 or horizon <= 0:
        raise ValueError("dt0 and horizon must be positive")
    t_fine = min(t_fine, horizon)
    n_fine = max(int(round(t_fine / dt0)), 1)
    nodes = [k * dt0 for k in range(n_fine + 1)]
    t = nodes[-1]
    step = dt0
    while t < horizon - 1e-12:
        step = dt0 * ((1.0 + t) / (1.0 + t_fine)) ** grade
        t = t + step
        nodes.append(t)
    out = np.array(nodes)
    if out[-1] > horizon:
        out[-1] = horizon
        if len(out) > 3 and out[-1] - out[-2] < 0.5 * (out[-2] - out[-3]):
            out = np.delete(out, -2)
    while len(out) < 3:
        out = np.sort(np.append(out, 0.5 * (out[-1] + out[-2])))
    return out


@dataclass(frozen=True, eq=False)
class Grid:
    t_nodes: np.ndarray
    axes: tuple[np.ndarray, ...]
    boundary: str = "neumann"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.t_nodes, dtype=float)
        if t.ndim != 1 or len(t) < 3 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("t_nodes must be increasing, start at 0 and have at least 3 nodes")
        for ax in self.axes:
            ax = np.asarray(ax)
            if ax.ndim != 1 or len(ax) < 3:
                raise ValueError("each spatial axis needs at least 3 nodes")
            steps = np.diff(ax)
            if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
                raise ValueError("spatial axes must be uniform and increasing")
        if self.boundary not in BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {BOUNDARY_MODES}")

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def n_x(self) -> int:
        return int(np.prod(self.shape))

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple(float(a[1] - a[0]) for a in self.axes)

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.t_nodes)

    @property
    def dt0(self) -> float:
        return float(self.t_nodes[1] - self.t_nodes[0])

    @property
    def horizon(self) -> float:
        return float(self.t_nodes[-1])

    @property
    def points(self) -> np.ndarray:
        """Spatial nodes as an (n_x, d) array in row-major order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def interior_mask(self) -> np.ndarray:
        mask = np.ones(self.shape, dtype=bool)
        for ax in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[ax] = 0
            mask[tuple(idx)] = False
            idx[ax] = -1
            mask[tuple(idx)] = False
        return mask

    def nearest_node(self, x) -> int:
        """Flat index of the node closest to x."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = [int(np.argmin(np.abs(ax - v))) for ax, v in zip(self.axes, x)]
        return int(np.ravel_multi_index(idx, self.shape))

    def time_index(self, t: float) -> int:
        return int(np.argmin(np.abs(self.t_nodes - t)))

    def refined(self) -> "Grid":
        """Halve dt0 and every spatial step (nodes nested in space)."""
        axes = tuple(np.linspace(a[0], a[-1], 2 * len(a) - 1) for a in self.axes)
        info = dict(self.info)
        t = time_nodes(self.dt0 / 2, self.horizon, info.get("t_fine", 1.0), info.get("grade", 1.25))
        return Grid(t, axes, self.boundary, info)


def make_grid(spec: ProblemSpec, n_x=201, dt0: float = 0.01, horizon: float | None = None,
              tail_eps: float = 1e-4, t_fine: float = 1.0, grade: float = 1.25) -> Grid:
    """Grid over the problem's box; the horizon defaults to tail_mass(T*) <= tail_eps."""
    n = (n_x,) * spec.dim if np.isscalar(n_x) else tuple(n_x)
    axes = tuple(np.linspace(lo, hi, k) for lo, hi, k in zip(spec.x_low, spec.x_high, n))
    T = horizon if horizon is not None else horizon_for_tail(spec, tail_eps)
    info = dict(t_fine=t_fine, grade=grade, tail_eps=tail_eps if horizon is None else None)
    info["tail_budget"] = tail_mass(spec, T)
    return Grid(time_nodes(dt0, T, t_fine, grade), axes, spec.boundary, info)


def time_derivative_weights(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Three-point weights for du/dt at every node.

    Returns (offsets, weights): node k uses indices k + offsets[k, :] with
    weights[k, :]. Second-order one-sided forward at t_0 (right derivative),
    nonuniform central in the interior, one-sided backward at the last node.
    """
    K = len(t) - 1
    offs = np.zeros((K + 1, 3), dtype=int)
    w = np.zeros((K + 1, 3))
    h1, h2 = t[1] - t[0], t[2] - t[1]
    offs[0] = (0, 1, 2)
    w[0] = (-(2 * h1 + h2) / (h1 * (h1 + h2)), (h1 + h2) / (h1 * h2), -h1 / (h2 * (h1 + h2)))
    hm = t[1:K] - t[0:K - 1]
    hp = t[2:K + 1] - t[1:K]
    offs[1:K] = (-1, 0, 1)
    w[1:K, 0] = -hp / (hm * (hm + hp))
    w[1:K, 1] = (hp - hm) / (hm * hp)
    w[1:K, 2] = hm / (hp * (hm + hp))
    h1, h2 = t[K] - t[K - 1], t[K - 1] - t[K - 2]
    offs[K] = (0, -1, -2)
    w[K] = ((2 * h1 + h2) / (h1 * (h1 + h2)), -(h1 + h2) / (h1 * h2), h1 / (h2 * (h1 + h2)))
    return offs, w


def _pad_axis(u: np.ndarray, axis: int, mode: str) -> np.ndarray:
    pad = [(0, 0)] * u.ndim
    pad[axis] = (1, 1)
    if mode == "neumann":
        return np.pad(u, pad, mode="reflect")
    return np.pad(u, pad, mode="reflect", reflect_type="odd")


def _shift(up: np.ndarray, axis: int, k: int) -> np.ndarray:
    n = up.shape[axis] - 2
    idx = [slice(None)] * up.ndim
    idx[axis] = slice(1 + k, 1 + k + n)
    return up[tuple(idx)]


def spatial_derivatives(u: np.ndarray, grid: Grid, lead: int = 1):
    """Central first and second differences over the trailing spatial axes.

    ``lead`` is the number of leading non-spatial axes of u.
    """
    d = grid.dim
    grad = np.empty(u.shape + (d,))
    hess = np.empty(u.shape + (d, d))
    for i in range(d):
        ax = lead + i
        h = grid.dx[i]
        up = _pad_axis(u, ax, grid.boundary)
        plus, minus = _shift(up, ax, 1), _shift(up, ax, -1)
        grad[..., i] = (plus - minus) / (2 * h)
        hess[..., i, i] = (plus - 2 * u + minus) / h ** 2
    for i in range(d):
        for j in range(i + 1, d):
            ai, aj = lead + i, lead + j
            up = _pad_axis(_pad_axis(u, ai, grid.boundary), aj, grid.boundary)
            pp = _shift(_shift(up, ai, 1), aj, 1)
            pm = _shift(_shift(up, ai, 1), aj, -1)
            mp = _shift(_shift(up, ai, -1), aj, 1)
            mm = _shift(_shift(up, ai, -1), aj, -1)
            mixed = (pp - pm - mp + mm) / (4 * grid.dx[i] * grid.dx[j])
            hess[..., i, j] = mixed
            hess[..., j, i] = mixed
    return grad, hess


def time_derivative(u: np.ndarray, t: np.ndarray) -> np.ndarray:
    offs, w = time_derivative_weights(t)
    K = len(t) - 1
    idx = np.arange(K + 1)[:, None] + offs
    expand = (slice(None),) + (None,) * (u.ndim - 1)
    return sum(w[:, j][expand] * u[idx[:, j]] for j in range(3))


@dataclass(frozen=True, eq=False)
class ValueField:
    """Scalar field on (t_nodes x spatial nodes); values has shape (K+1, *grid.shape)."""

    grid: Grid
    values: np.ndarray
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None
    dt: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = (len(self.grid.t_nodes),) + self.grid.shape
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} does not match grid {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("value field contains non-finite entries")

    @property
    def has_derivatives(self) -> bool:
        return self.grad is not None

    def with_derivatives(self) -> "ValueField":
        return self if self.has_derivatives else finite_diff(self)

    def slice0(self) -> np.ndarray:
        return self.values[0]

    def grad0(self) -> np.ndarray:
        """D_x u(0, .) as an (n_x, d) array."""
        if self.grad is not None:
            g = self.grad[0]
        else:
            g, _ = spatial_derivatives(self.values[:1], self.grid)
            g = g[0]
        return g.reshape(self.grid.n_x, self.grid.dim)

    def flat(self) -> np.ndarray:
        return self.values.reshape(len(self.grid.t_nodes), self.grid.n_x)

    def scaled(self, s: float) -> "ValueField":
        return ValueField(self.grid, s * self.values)

    def __sub__(self, other: "ValueField") -> "ValueField":
        return ValueField(self.grid, self.values - other.values)

    def __add__(self, other: "ValueField") -> "ValueField":
        return ValueField(self.grid, self.values + other.values)


def finite_diff(field: ValueField, grid: Grid | None = None) -> ValueField:
    """Return a copy of ``field`` with grad_x, hess_x and dt populated."""
    grid = grid or field.grid
    if field.values.shape[1:] != grid.shape:
        raise ValueError("field shape does not match grid")
    grad, hess = spatial_derivatives(field.values, grid)
    dt = time_derivative(field.values, grid.t_nodes)
    return dataclasses.replace(field, grid=grid, grad=grad, hess=hess, dt=dt)


def interp_slice(values: np.ndarray, grid: Grid, x: np.ndarray) -> np.ndarray:
    """(Multi)linear interpolation of one time slice at points x of shape (n, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    vals = np.asarray(values).reshape(grid.shape)
    if grid.dim == 1:
        return np.interp(x[:, 0], grid.axes[0], vals)
    from scipy.interpolate import RegularGridInterpolator

    return RegularGridInterpolator(grid.axes, vals, bounds_error=False, fill_value=None)(x)


# ---------------------------------------------------------------------------
# serialization


def _write_blob(path: Path, header: dict, array: np.ndarray) -> None:
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(np.ascontiguousarray(array, dtype="<f8").tobytes(order="C"))


def _read_blob(path: Path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"{path} is not a field file")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n))
        data = np.frombuffer(fh.read(), dtype="<f8")
    return header, data.reshape(header["shape"]).copy()


def write_field_binary(path, field: ValueField) -> None:
    """Row-major float64 payload behind a JSON header with shape, nodes and spacings."""
    g = field.grid
    header = dict(kind="value", shape=list(field.values.shape), t_nodes=g.t_nodes.tolist(),
                  axes=[a.tolist() for a in g.axes], dx=list(g.dx), boundary=g.boundary)
    _write_blob(Path(path), header, field.values)


def read_field_binary(path) -> ValueField:
    header, data = _read_blob(Path(path))
    if header.get("kind") != "value":
        raise ValueError(f"{path} holds a {header.get('kind')} field, not a value field")
    grid = Grid(np.array(header["t_nodes"]), tuple(np.array(a) for a in header["axes"]), header["boundary"])
    return ValueField(grid, data)


def write_field_csv(path, field: ValueField, time_stride: int = 1, time_indices=None) -> None:
    g = field.grid
    pts = g.points
    names = ["t"] + [f"x{i + 1}" for i in range(g.dim)] + ["value"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        flat = field.flat()
        ks = range(0, len(g.t_nodes), time_stride) if time_indices is None else time_indices
        for k in ks:
            for i in range(g.n_x):
                w.writerow([repr(float(g.t_nodes[k]))] + [repr(float(v)) for v in pts[i]] + [repr(float(flat[k, i]))])
