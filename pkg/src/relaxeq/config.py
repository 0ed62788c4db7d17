"""Run configuration: an INI file whose values are JSON literals.

Sections mirror the modules they configure; " #" starts a comment. Every key has a default, so an
empty file is a valid D0 run; unknown sections or keys are errors.

    [problem]   name, params
    [grid]      n_x, dt0, horizon, tail_eps, t_fine, grade
    [solver]    theta_scheme, linear_tol, upwind, damping, max_iters, tol, norm_choice, n_actions, action_rule
    [schedule]  lambdas, k_first, k_last, stop_rule
    [verify]    lam, tol, eps_grid, x_points, n_atoms, engine, n_paths, dt_sim
    [run]       output_dir, seed, lambda, workers
"""

from __future__ import annotations

import configparser
import copy
import json
from dataclasses import dataclass
from pathlib import Path

from .annealing import AnnealSchedule
from .evaluation import McConfig, PdeSolveConfig
from .fixed_point import FixedPointConfig
from .gibbs import ActionGrid
from .grid import Grid, make_grid
from .norms import NormConfig
from .problem import PROBLEM_CATALOG, ProblemSpec, build_problem
from .verifier import DEFAULT_EPSILONS, DEFAULT_X_POINTS, default_library

__all__ = ["ConfigError", "DEFAULTS", "RunConfig", "load_config", "parse_config"]

DEFAULTS: dict[str, dict] = {
    "problem": {"name": "D0", "params": {}},
    "grid": {"n_x": 201, "dt0": 0.01, "horizon": None, "tail_eps": 1e-4, "t_fine": 1.0, "grade": 1.25},
    "solver": {"theta_scheme": 0.5, "linear_tol": 1e-10, "upwind": True, "damping": 0.5, "max_iters": 200,
               "tol": 1e-6, "norm_choice": "sup", "n_actions": 101, "action_rule": "lobatto"},
    "schedule": {"lambdas": None, "k_first": 0, "k_last": 7, "stop_rule": 0.05},
    "verify": {"lam": 0.0, "tol": 1e-2, "eps_grid": list(DEFAULT_EPSILONS), "x_points": list(DEFAULT_X_POINTS),
               "n_atoms": 5, "engine": "pde", "n_paths": 20000, "dt_sim": 0.01},
    "run": {"output_dir": "runs", "seed": 0, "lambda": None, "workers": 1},
}


class ConfigError(ValueError):
    """The configuration cannot be parsed or does not resolve."""


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def section(self, name: str) -> dict:
        return self.values[name]

    @property
    def seed(self) -> int:
        return int(self.values["run"]["seed"])

    @property
    def workers(self) -> int:
        return int(self.values["run"]["workers"])

    @property
    def output_dir(self) -> Path:
        return Path(self.values["run"]["output_dir"])

    def updated(self, section: str, **kv) -> "RunConfig":
        vals = copy.deepcopy(self.values)
        for k, v in kv.items():
            if k not in vals[section]:
                raise ConfigError(f"unknown key {section}.{k}")
            vals[section][k] = v
        return _validated(vals)

    def problem(self) -> ProblemSpec:
        p = self.values["problem"]
        return build_problem(p["name"], **p["params"])

    def grid(self, spec: ProblemSpec) -> Grid:
        g = self.values["grid"]
        return make_grid(spec, n_x=g["n_x"], dt0=g["dt0"], horizon=g["horizon"], tail_eps=g["tail_eps"],
                         t_fine=g["t_fine"], grade=g["grade"])

    def actions(self, spec: ProblemSpec) -> ActionGrid:
        s = self.values["solver"]
        return ActionGrid.for_problem(spec, n=s["n_actions"], rule=s["action_rule"])

    def pde_config(self) -> PdeSolveConfig:
        s = self.values["solver"]
        return PdeSolveConfig(theta_scheme=s["theta_scheme"], linear_tol=s["linear_tol"], upwind=s["upwind"])

    def fixed_point_config(self) -> FixedPointConfig:
        s = self.values["solver"]
        return FixedPointConfig(damping=s["damping"], max_iters=s["max_iters"], tol=s["tol"],
                                norm_choice=s["norm_choice"],
                                norm_cfg=NormConfig(N_max=5, max_pairs=100_000, seed=self.seed))

    def schedule(self) -> AnnealSchedule:
        s = self.values["schedule"]
        if s["lambdas"] is not None:
            return AnnealSchedule(tuple(float(v) for v in s["lambdas"]), s["stop_rule"])
        return AnnealSchedule.geometric(s["k_first"], s["k_last"], s["stop_rule"])

    def mc_config(self) -> McConfig:
        v = self.values["verify"]
        return McConfig(n_paths=v["n_paths"], dt_sim=v["dt_sim"], rng_seed=self.seed, workers=self.workers)

    def library(self, spec: ProblemSpec):
        return default_library(spec, self.values["verify"]["n_atoms"])

    def snapshot(self) -> str:
        """Resolved configuration in the same INI format; parsing it gives an equal RunConfig."""
        lines = []
        for sec, kv in self.values.items():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {json.dumps(v, sort_keys=True)}" for k, v in kv.items()]
            lines.append("")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.values)


def _decode(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw  # bare strings such as names and paths


def _validated(vals: dict) -> RunConfig:
    if vals["problem"]["name"] not in PROBLEM_CATALOG:
        raise ConfigError(f"unknown problem {vals['problem']['name']!r}; known: {sorted(PROBLEM_CATALOG)}")
    if not isinstance(vals["problem"]["params"], dict):
        raise ConfigError("problem.params must be a JSON object")
    cfg = RunConfig(vals)
    try:
        spec = cfg.problem()
        cfg.pde_config()
        cfg.fixed_point_config()
        cfg.schedule()
        cfg.mc_config()
        cfg.actions(spec)
        if vals["verify"]["engine"] not in ("pde", "mc"):
            raise ValueError("verify.engine must be 'pde' or 'mc'")
        if vals["run"]["lambda"] is not None and not float(vals["run"]["lambda"]) > 0:
            raise ValueError("run.lambda must be positive")
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    vals = copy.deepcopy(DEFAULTS)
    for sec in parser.sections():
        if sec not in vals:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in parser[sec].items():
            if key not in vals[sec]:
                raise ConfigError(f"unknown key {sec}.{key}")
            vals[sec][key] = _decode(raw)
    return _validated(vals)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    return parse_config(p.read_text())
