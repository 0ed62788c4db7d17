"""Control problem instances and empirical checks of the standing assumptions.

A problem is the tuple (b, sigma, r, delta, U, d) on a truncated spatial box.
Coefficient callables are vectorised with the conventions

    drift(x, a)        x: (..., d), a: (..., l)  ->  (..., d)
    diffusion(x)       x: (..., d)               ->  (..., d, m)
    reward(t, x, a)    t broadcastable to (...)  ->  (...)
    discount(t)        t: array                  ->  same shape

``reward_terms`` optionally factorises the reward as sum_m tau_m(t) rho_m(x, a);
the solvers use it as a fast path and fall back to ``reward`` otherwise.
"""

from __future__ import annotations

import dataclasses
import functools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

__all__ = [
    "AssumptionFailure",
    "AssumptionReport",
    "DomainError",
    "ProblemSpec",
    "build_problem",
    "check_assumptions",
    "eval_coefficients",
    "horizon_for_tail",
    "register_problem",
    "tail_mass",
    "PROBLEM_CATALOG",
    "make_d0",
    "make_heat_sine",
    "make_r1",
    "make_sigma_zero",
    "make_zero",
]

BOUNDARY_MODES = ("neumann", "extrapolate")


class DomainError(ValueError):
    """A point or action lies outside the problem's domain."""


class AssumptionFailure(RuntimeError):
    """A tail integral that should be finite does not converge."""


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    dim: int
    x_low: tuple[float, ...]
    x_high: tuple[float, ...]
    action_low: tuple[float, ...]
    action_high: tuple[float, ...]
    drift: Callable
    diffusion: Callable
    reward: Callable
    discount: Callable
    discount_dt: Callable
    reward_dt: Callable | None = None
    reward_terms: tuple[tuple[Callable, Callable], ...] | None = None
    boundary: str = "neumann"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if len(self.x_low) != self.dim or len(self.x_high) != self.dim:
            raise ValueError("spatial box must have one interval per dimension")
        if len(self.action_low) not in (1, 2) or len(self.action_low) != len(self.action_high):
            raise ValueError("action set must be a box in R^1 or R^2")
        if any(h <= l for l, h in zip(self.x_low, self.x_high)):
            raise ValueError("spatial box has an empty side")
        if any(h <= l for l, h in zip(self.action_low, self.action_high)):
            raise ValueError("action box has an empty side")
        if self.boundary not in BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {BOUNDARY_MODES}")

    @property
    def action_dim(self) -> int:
        return len(self.action_low)

    @property
    def action_measure(self) -> float:
        return float(np.prod(np.subtract(self.action_high, self.action_low)))

    @property
    def action_diameter(self) -> float:
        return float(np.linalg.norm(np.subtract(self.action_high, self.action_low)))

    def with_box(self, x_low, x_high, boundary: str | None = None) -> "ProblemSpec":
        return dataclasses.replace(
            self,
            x_low=tuple(float(v) for v in np.atleast_1d(x_low)),
            x_high=tuple(float(v) for v in np.atleast_1d(x_high)),
            boundary=boundary or self.boundary,
        )

    def reward_dt_values(self, t, x, a):
        if self.reward_dt is not None:
            return self.reward_dt(t, x, a)
        # one-sided at t = 0 (right derivative)
        h = 1e-5
        t = np.asarray(t, dtype=float)
        lo = np.maximum(t - h, 0.0)
        return (self.reward(t + h, x, a) - self.reward(lo, x, a)) / (t + h - lo)

    def reward_envelope(self, t: float) -> float:
        """sup over the sampling lattice of |r(t, x, a)|."""
        xs, acts = _sup_lattice(self)
        return float(np.max(np.abs(self.reward(t, xs[:, None, :], acts[None, :, :]))))

    def discount_abs(self, t: float) -> float:
        return float(abs(self.discount(np.asarray(t, dtype=float))))


def _lattice_axis(lo: float, hi: float, n: int) -> np.ndarray:
    return np.linspace(lo, hi, n)


@functools.lru_cache(maxsize=64)
def _sup_lattice(spec: ProblemSpec, nx: int = 201, na: int = 41):
    """Odd-sized tensor lattices over the box and action set (midpoints included)."""
    nx_axis = nx if spec.dim == 1 else 41
    axes = [_lattice_axis(l, h, nx_axis) for l, h in zip(spec.x_low, spec.x_high)]
    xs = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    na_axis = na if spec.action_dim == 1 else 21
    a_axes = [_lattice_axis(l, h, na_axis) for l, h in zip(spec.action_low, spec.action_high)]
    acts = np.stack([g.ravel() for g in np.meshgrid(*a_axes, indexing="ij")], axis=-1)
    return xs, acts


def _check_point(spec: ProblemSpec, x, a=None, t=None):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (spec.dim,):
        raise DomainError(f"x must have shape ({spec.dim},), got {x.shape}")
    for i, (v, lo, hi) in enumerate(zip(x, spec.x_low, spec.x_high)):
        if not lo <= v <= hi:
            raise DomainError(f"x[{i}]={v} outside [{lo}, {hi}]")
    if a is not None:
        a = np.atleast_1d(np.asarray(a, dtype=float))
        if a.shape != (spec.action_dim,):
            raise DomainError(f"a must have shape ({spec.action_dim},), got {a.shape}")
        for i, (v, lo, hi) in enumerate(zip(a, spec.action_low, spec.action_high)):
            if not lo <= v <= hi:
                raise DomainError(f"a[{i}]={v} outside [{lo}, {hi}]")
    if t is not None and t < 0:
        raise DomainError(f"t={t} is negative")
    return x, a


def eval_coefficients(spec: ProblemSpec, t: float, x, a):
    """Return (drift, diffusion, reward, discount) at a single (t, x, a)."""
    x, a = _check_point(spec, x, a, t)
    drift = np.asarray(spec.drift(x, a), dtype=float).reshape(spec.dim)
    diff = np.asarray(spec.diffusion(x), dtype=float)
    diff = diff.reshape(spec.dim, -1)
    reward = float(spec.reward(float(t), x, a))
    disc = float(spec.discount(np.asarray(float(t))))
    return drift, diff, reward, disc


# ---------------------------------------------------------------------------
# tail integrals


def _tail_integral(f: Callable[[float], float], start: float, cap: float = 1e6) -> float:
    """Integral of a nonnegative f over [start, inf).

    Raises AssumptionFailure when the doubling-horizon increments stop decaying
    geometrically (power tails t^-1 or slower) or quad does not converge.
    """
    h = max(start, 1.0)
    incs: list[float] = []
    while h < cap:
        incs.append(integrate.quad(f, h, 2 * h, limit=200)[0])
        if incs[-1] < 1e-10:
            break
        h *= 2
    if len(incs) >= 2 and incs[-1] >= 1e-10:
        ratio = incs[-1] / incs[-2] if incs[-2] > 0 else math.inf
        if ratio > 0.9:
            raise AssumptionFailure(
                f"tail increments stall at horizon cap {cap:g} (doubling ratio {ratio:.3f})")
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(f, start, np.inf, limit=400, epsabs=1e-13, epsrel=1e-10)
        except integrate.IntegrationWarning as exc:
            # retry with an explicit split; infinite-range transforms can be fussy
            try:
                a = integrate.quad(f, start, start + 50.0, limit=400, epsabs=1e-13, epsrel=1e-10)[0]
                b = integrate.quad(f, start + 50.0, np.inf, limit=400, epsabs=1e-13, epsrel=1e-10)[0]
                val = a + b
            except integrate.IntegrationWarning:
                raise AssumptionFailure(f"quadrature did not converge: {exc}") from exc
    if not math.isfinite(val):
        raise AssumptionFailure("non-finite tail integral")
    return float(val)


def tail_mass(spec: ProblemSpec, T: float) -> float:
    """Integral over [T, inf) of sup_{x,a} |r(t,x,a)| + |delta(t)|."""
    if T < 0:
        raise ValueError("T must be nonnegative")
    return _tail_integral(lambda t: spec.reward_envelope(t), T) + _tail_integral(spec.discount_abs, T)


def horizon_for_tail(spec: ProblemSpec, eps: float) -> float:
    """Smallest truncation horizon T* (to 1e-6 relative) with tail_mass(T*) <= eps."""
    if tail_mass(spec, 0.0) <= eps:
        return 1.0
    lo, hi = 0.0, 1.0
    while tail_mass(spec, hi) > eps:
        lo, hi = hi, hi * 2
        if hi > 1e9:
            raise AssumptionFailure("tail mass does not fall below the requested budget")
    from scipy.optimize import brentq

    return float(brentq(lambda T: tail_mass(spec, T) - eps, lo, hi, rtol=1e-6))


# ---------------------------------------------------------------------------
# assumption report


@dataclass
class AssumptionReport:
    K0: float
    K1: float
    K2: float
    K3: float
    K4: float
    K5: float
    eta: float
    theta: float
    cone_ok: bool
    cone_witness: tuple[float, float]
    alpha: float
    theta_drift: float = 0.0
    theta_reward: float = 0.0
    K1_reward: float = 0.0  # int sup|r|, the first part of K1
    K1_reward_dt: float = 0.0  # int sup|r_t|
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.notes

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["cone_witness"] = {"zeta": self.cone_witness[0], "gamma": self.cone_witness[1]}
        out["ok"] = self.ok
        return out


def _sample_box(rng, lo, hi, n):
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    return lo + (hi - lo) * rng.random((n, lo.size))


def _parabolic_offsets(rng, n, d):
    # |dt| + |dx|^2 <= 1
    dt = rng.random(n)
    rad = np.sqrt(np.maximum(1.0 - dt, 0.0)) * rng.random(n)
    direction = rng.normal(size=(n, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return dt, direction * rad[:, None]


def _holder_quotient(f0, f1, dist, alpha):
    ok = dist > 1e-12
    if not np.any(ok):
        return 0.0
    return float(np.max(np.abs(f1[ok] - f0[ok]) / dist[ok] ** alpha))


def check_assumptions(spec: ProblemSpec, sample_budget: int = 2000, alpha: float = 0.5,
                      seed: int = 0, t_window: float = 20.0) -> AssumptionReport:
    """Estimate the assumption constants by sampled difference quotients and quadrature.

    Holder seminorms use random pairs with parabolic separation at most 1. Time
    samples are drawn from [0, t_window]. The tail integrals K1, K2, K4, K5 use
    adaptive quadrature over [0, inf); a divergent tail is recorded in ``notes``.
    """
    if sample_budget < 100:
        raise ValueError("sample_budget must be at least 100")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    notes: list[str] = []
    n = sample_budget
    d, l = spec.dim, spec.action_dim

    t0 = rng.random(n) * t_window
    x0 = _sample_box(rng, spec.x_low, spec.x_high, n)
    a0 = _sample_box(rng, spec.action_low, spec.action_high, n)
    dt, dx = _parabolic_offsets(rng, n, d)
    t1 = t0 + dt
    x1 = np.clip(x0 + dx, spec.x_low, spec.x_high)
    pdist = np.abs(t1 - t0) + np.sum((x1 - x0) ** 2, axis=1)

    r0 = spec.reward(t0, x0, a0)
    r1 = spec.reward(t1, x1, a0)
    rt0 = spec.reward_dt_values(t0, x0, a0)
    rt1 = spec.reward_dt_values(t1, x1, a0)
    K0 = (np.max(np.abs(r0)) + np.max(np.abs(rt0))
          + _holder_quotient(r0, r1, pdist, alpha / 2) + _holder_quotient(rt0, rt1, pdist, alpha / 2))

    xs, acts = _sup_lattice(spec)

    def sup_abs_rt(t):
        return float(np.max(np.abs(spec.reward_dt_values(t, xs[:, None, :], acts[None, :, :]))))

    offsets = np.linspace(0.05, 1.0, 20)

    def rt_holder(s):
        vals = spec.reward_dt_values(s, xs[:, None, :], acts[None, :, :])
        best = 0.0
        for h in offsets:
            other = spec.reward_dt_values(s + h, xs[:, None, :], acts[None, :, :])
            best = max(best, float(np.max(np.abs(other - vals))) / h ** (alpha / 2))
        return best

    def d_holder(s):
        v = spec.discount_dt(np.asarray(s, float))
        return max(float(abs(spec.discount_dt(np.asarray(s + h)) - v)) / h ** (alpha / 2) for h in offsets)

    def safe_tail(name, f):
        try:
            return _tail_integral(f, 0.0)
        except AssumptionFailure as exc:
            notes.append(f"{name}: {exc}")
            return math.inf

    K1_r = safe_tail("K1 reward", spec.reward_envelope)
    K1_rt = safe_tail("K1 reward_t", sup_abs_rt)
    K1 = K1_r + K1_rt
    K2 = safe_tail("K2", rt_holder)
    K4 = safe_tail("K4 delta", spec.discount_abs) + safe_tail(
        "K4 delta_t", lambda t: float(abs(spec.discount_dt(np.asarray(t, float)))))
    K5 = safe_tail("K5", d_holder)

    xdist = np.linalg.norm(x1 - x0, axis=1)
    b0 = spec.drift(x0, a0)
    b1 = spec.drift(x1, a0)
    s0 = spec.diffusion(x0)
    s1 = spec.diffusion(x1)
    bq = _holder_quotient(np.zeros(n), np.linalg.norm(b1 - b0, axis=-1), xdist, alpha)
    sq = _holder_quotient(np.zeros(n), np.linalg.norm((s1 - s0).reshape(n, -1), axis=-1), xdist, alpha)
    K3 = float(np.max(np.linalg.norm(b0, axis=-1)) + bq + np.max(np.linalg.norm(s0.reshape(n, -1), axis=-1)) + sq)

    # ellipticity on a lattice that includes the box corners
    sig = spec.diffusion(xs)
    sig = sig.reshape(xs.shape[0], d, -1)
    cov = sig @ np.swapaxes(sig, -1, -2)
    eta = float(np.min(np.linalg.eigvalsh(cov)))
    if not eta > 0:
        notes.append(f"ellipticity: min eigenvalue of sigma sigma^T is {eta:g}")
        eta = max(eta, 0.0)

    # Lipschitz in the action
    a1 = _sample_box(rng, spec.action_low, spec.action_high, n)
    adist = np.linalg.norm(a1 - a0, axis=1)
    ok = adist > 1e-9
    db = np.linalg.norm(spec.drift(x0, a1) - b0, axis=-1)
    dr = np.abs(spec.reward(t0, x0, a1) - r0)
    theta_b = float(np.max(db[ok] / adist[ok])) if np.any(ok) else 0.0
    theta_r = float(np.max(dr[ok] / adist[ok])) if np.any(ok) else 0.0
    theta = max(theta_b, theta_r)

    sides = np.subtract(spec.action_high, spec.action_low)
    zeta = float(np.min(sides) / 2)
    gamma = math.pi / 2 if l == 1 else math.pi / 4
    consts = dict(K0=K0, K1=K1, K2=K2, K3=K3, K4=K4, K5=K5, theta=theta)
    for key, val in consts.items():
        if not math.isfinite(val):
            if not any(note.startswith(key) for note in notes):
                notes.append(f"{key}: non-finite estimate")
    return AssumptionReport(
        K0=float(K0), K1=float(K1), K2=float(K2), K3=float(K3), K4=float(K4), K5=float(K5),
        eta=eta, theta=theta, cone_ok=True, cone_witness=(zeta, gamma), alpha=alpha,
        theta_drift=theta_b, theta_reward=theta_r, K1_reward=float(K1_r), K1_reward_dt=float(K1_rt), notes=notes,
    )


# ---------------------------------------------------------------------------
# catalog


def _x1(x):
    return np.asarray(x, dtype=float)[..., 0]


def _a1(a):
    return np.asarray(a, dtype=float)[..., 0]


def _power_time(power):
    return lambda t: (1.0 + np.asarray(t, dtype=float)) ** (-power)


def _discount(kind: str, rate: float, weight: float = 0.5, rate2: float = 0.1, power: float = 2.0):
    """Return (delta, delta_t) for the supported discount families."""
    if kind == "exponential":
        return (lambda t: np.exp(-rate * np.asarray(t, float)),
                lambda t: -rate * np.exp(-rate * np.asarray(t, float)))
    if kind == "mixture":
        # weighted sum of two exponentials, a standard time-inconsistent discount
        return (lambda t: weight * np.exp(-rate * np.asarray(t, float)) + (1 - weight) * np.exp(-rate2 * np.asarray(t, float)),
                lambda t: -weight * rate * np.exp(-rate * np.asarray(t, float))
                - (1 - weight) * rate2 * np.exp(-rate2 * np.asarray(t, float)))
    if kind == "power":
        # (1 + k t)^(-power) with power > 1 keeps the tail integrable
        return (lambda t: (1 + rate * np.asarray(t, float)) ** (-power),
                lambda t: -power * rate * (1 + rate * np.asarray(t, float)) ** (-power - 1))
    if kind == "zero":
        return (lambda t: np.zeros_like(np.asarray(t, float)), lambda t: np.zeros_like(np.asarray(t, float)))
    raise ValueError(f"unknown discount family {kind!r}")


def _make_trig(name="trig", dim=1, action_dim=1, sigma=1.0, drift_gain=1.0, drift_sin=0.0,
               reward_cos=1.0, reward_quad=1.0, reward_lin=0.0, reward_const=0.0, time_power=2.0,
               discount="exponential", discount_rate=1.0, discount_weight=0.5, discount_rate2=0.1,
               discount_power=2.0, x_low=None, x_high=None, action_low=0.0, action_high=1.0,
               boundary="neumann"):
    """Trigonometric/polynomial family.

    b(x, a)_i = drift_gain * a_(i mod l) + drift_sin * sin(x_i)
    sigma(x) = sigma * I
    r(t, x, a) = (1+t)^(-time_power) * (reward_cos * prod cos(x_i)
                 + sum_k [reward_quad * a_k (1 - a_k) + reward_lin * a_k] + reward_const)
    """
    if x_low is None:
        x_low = [-math.pi] * dim
    if x_high is None:
        x_high = [math.pi] * dim
    x_low = [float(v) for v in np.atleast_1d(x_low)] * (dim if np.size(x_low) == 1 else 1)
    x_high = [float(v) for v in np.atleast_1d(x_high)] * (dim if np.size(x_high) == 1 else 1)
    a_low = [float(v) for v in np.atleast_1d(action_low)] * (action_dim if np.size(action_low) == 1 else 1)
    a_high = [float(v) for v in np.atleast_1d(action_high)] * (action_dim if np.size(action_high) == 1 else 1)
    tau = _power_time(time_power)

    def tau_dt(t):
        return -time_power * (1.0 + np.asarray(t, dtype=float)) ** (-time_power - 1)

    def drift(x, a):
        x = np.asarray(x, float)
        a = np.asarray(a, float)
        shape = np.broadcast_shapes(x.shape[:-1], a.shape[:-1])
        out = np.empty(shape + (dim,))
        for i in range(dim):
            out[..., i] = drift_gain * a[..., i % action_dim] + drift_sin * np.sin(x[..., i])
        return out

    def diffusion(x):
        x = np.asarray(x, float)
        return np.broadcast_to(sigma * np.eye(dim), x.shape[:-1] + (dim, dim)).copy()

    def space_part(x, a):
        x = np.asarray(x, float)
        a = np.asarray(a, float)
        val = reward_cos * np.prod(np.cos(x), axis=-1)
        act = reward_quad * a * (1 - a) + reward_lin * a
        return val + np.sum(act, axis=-1) + reward_const

    def reward(t, x, a):
        return tau(t) * space_part(x, a)

    def reward_dt(t, x, a):
        return tau_dt(t) * space_part(x, a)

    delta, delta_t = _discount(discount, discount_rate, discount_weight, discount_rate2, discount_power)
    params = dict(dim=dim, action_dim=action_dim, sigma=sigma, drift_gain=drift_gain, drift_sin=drift_sin,
                  reward_cos=reward_cos, reward_quad=reward_quad, reward_lin=reward_lin,
                  reward_const=reward_const, time_power=time_power, discount=discount,
                  discount_rate=discount_rate, x_low=x_low, x_high=x_high, action_low=a_low,
                  action_high=a_high, boundary=boundary)
    return ProblemSpec(
        name=name, dim=dim, x_low=tuple(x_low), x_high=tuple(x_high),
        action_low=tuple(a_low), action_high=tuple(a_high),
        drift=drift, diffusion=diffusion, reward=reward, discount=delta, discount_dt=delta_t,
        reward_dt=reward_dt, reward_terms=((tau, space_part),), boundary=boundary, params=params,
    )


def make_r1(**overrides) -> ProblemSpec:
    """Reference problem: b = a, sigma = 1, r = (1+t)^-2 (cos x + a(1-a)), delta = e^-t, U = [0,1]."""
    kw = dict(name="R1", sigma=1.0, drift_gain=1.0, reward_cos=1.0, reward_quad=1.0)
    kw.update(overrides)
    return _make_trig(**kw)


def make_d0(**overrides) -> ProblemSpec:
    """Degenerate problem: b = 0, sigma = 1, r = (1+t)^-2, delta = e^-t, U = [0,1]."""
    kw = dict(name="D0", drift_gain=0.0, reward_cos=0.0, reward_quad=0.0, reward_const=1.0)
    kw.setdefault("x_low", -1.0)
    kw.setdefault("x_high", 1.0)
    kw.update(overrides)
    return _make_trig(**kw)


def make_zero(**overrides) -> ProblemSpec:
    """r = 0 and delta = 0; every value field is identically zero."""
    kw = dict(name="zero", drift_gain=1.0, reward_cos=0.0, reward_quad=0.0, discount="zero")
    kw.update(overrides)
    return _make_trig(**kw)


def make_sigma_zero(**overrides) -> ProblemSpec:
    """R1 with sigma = 0; fails the ellipticity check."""
    kw = dict(name="sigma_zero", sigma=0.0)
    kw.update(overrides)
    return make_r1(**kw)


def make_heat_sine(**overrides) -> ProblemSpec:
    """b = 0, sigma = sqrt(2), r = (1+t)^-2 sin x on [-pi/2, pi/2].

    sin x has zero slope at +-pi/2, so it is a Neumann eigenfunction of the
    generator u_xx with eigenvalue -1 and u(0, x) = sin x int e^-s (1+s)^-2 ds.
    """
    kw = dict(name="heat_sine", sigma=math.sqrt(2.0), drift_gain=0.0, reward_cos=0.0, reward_quad=0.0,
              x_low=-math.pi / 2, x_high=math.pi / 2)
    kw.update(overrides)
    spec = _make_trig(**kw)
    tau = _power_time(2.0)

    def space_part(x, a):
        x = np.asarray(x, float)
        a = np.asarray(a, float)
        return np.sin(x[..., 0]) + 0.0 * a[..., 0]

    return dataclasses.replace(
        spec,
        reward=lambda t, x, a: tau(t) * space_part(x, a),
        reward_dt=lambda t, x, a: -2.0 * (1.0 + np.asarray(t, float)) ** -3 * space_part(x, a),
        reward_terms=((tau, space_part),),
    )


PROBLEM_CATALOG: dict[str, Callable[..., ProblemSpec]] = {
    "R1": make_r1,
    "D0": make_d0,
    "zero": make_zero,
    "sigma_zero": make_sigma_zero,
    "heat_sine": make_heat_sine,
    "trig": _make_trig,
}


def register_problem(name: str, builder: Callable[..., ProblemSpec]) -> None:
    if name in PROBLEM_CATALOG:
        raise ValueError(f"problem {name!r} already registered")
    PROBLEM_CATALOG[name] = builder


def build_problem(name: str, **params) -> ProblemSpec:
    try:
        builder = PROBLEM_CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; known: {sorted(PROBLEM_CATALOG)}") from None
    return builder(**params)
