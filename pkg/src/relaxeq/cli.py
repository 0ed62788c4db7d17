"""Command-line front end: check, solve, anneal, verify and convergence.

Exit codes: 0 success, 1 numerical failure or failed verdict, 2 usage error.
Every output directory gets the resolved config (config.ini) and a
metadata.json holding the only wall-clock data; all other files depend only
on the config and seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from .annealing import anneal, export_trace
from .config import ConfigError, RunConfig, load_config
from .fixed_point import FixedPointError, solve_regularized_equilibrium, write_history_csv
from .gibbs import PolicyField, read_policy_binary, write_policy_binary, write_policy_csv
from .grid import write_field_binary, write_field_csv
from .problem import check_assumptions
from .verifier import Candidate, verify_equilibrium, write_gap_report

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
MIN_ORDER_RATIO = 1.8


class UsageError(Exception):
    pass


def _dump(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)


def _lambda(args, cfg: RunConfig) -> float:
    lam = args.lam if args.lam is not None else cfg.section("run")["lambda"]
    if lam is None:
        raise UsageError("this command needs --lambda (or run.lambda in the config)")
    if not float(lam) > 0:
        raise UsageError("--lambda must be positive")
    return float(lam)


def cmd_check(cfg: RunConfig, out: Path, args) -> int:
    spec = cfg.problem()
    report = check_assumptions(spec, seed=cfg.seed)
    _dump(out / "assumptions.json", dict(report.to_dict(), problem=spec.name, seed=cfg.seed))
    return EXIT_OK if report.ok else EXIT_FAIL


def _write_result(out: Path, result, cfg: RunConfig) -> None:
    write_field_binary(out / "value.bin", result.value)
    write_policy_binary(out / "policy.bin", result.policy)
    write_field_csv(out / "value_t0.csv", result.value, time_indices=[0])
    write_policy_csv(out / "policy.csv", result.policy)
    write_history_csv(out / "history.csv", result)
    _dump(out / "summary.json", dict(result.summary(), seed=cfg.seed))


def cmd_solve(cfg: RunConfig, out: Path, args) -> int:
    lam = _lambda(args, cfg)
    spec = cfg.problem()
    grid = cfg.grid(spec)
    try:
        result = solve_regularized_equilibrium(spec, grid, lam, cfg.fixed_point_config(), cfg.pde_config(),
                                               actions=cfg.actions(spec))
    except FixedPointError as exc:
        _dump(out / "error.json", dict(error=str(exc), iteration=exc.iteration, lam=lam, seed=cfg.seed))
        return EXIT_FAIL
    _write_result(out, result, cfg)
    return EXIT_OK if result.converged else EXIT_FAIL


def cmd_anneal(cfg: RunConfig, out: Path, args) -> int:
    spec = cfg.problem()
    grid = cfg.grid(spec)
    try:
        trace = anneal(spec, grid, cfg.schedule(), cfg.fixed_point_config(), cfg.pde_config(),
                       actions=cfg.actions(spec))
    except FixedPointError as exc:
        _dump(out / "error.json", dict(error=str(exc), iteration=exc.iteration, seed=cfg.seed))
        return EXIT_FAIL
    export_trace(trace, out)
    summary = json.loads((out / "summary.json").read_text())
    _dump(out / "summary.json", dict(summary, seed=cfg.seed))
    return EXIT_OK if trace.stop_met and not trace.truncated else EXIT_FAIL


def _load_candidate(cfg: RunConfig, spec, grid, source: str | None) -> Candidate:
    lam = float(cfg.section("verify")["lam"])
    actions = cfg.actions(spec)
    if source is None:
        raise UsageError("verify needs --candidate (a solve/anneal output, a policy .bin file, or 'uniform')")
    if source == "uniform":
        policy = PolicyField.uniform(grid, actions)
    else:
        path = Path(source)
        if path.is_dir():
            for name in ("limit_policy.bin", "policy.bin"):
                if (path / name).is_file():
                    path = path / name
                    break
            else:
                raise UsageError(f"no policy file in {source}")
        if not path.is_file():
            raise UsageError(f"candidate {source} not found")
        policy = read_policy_binary(path, grid)
        if policy.actions.J != actions.J:
            raise UsageError("candidate action grid does not match the config")
    try:
        return Candidate.from_policy(spec, grid, policy, lam, cfg.pde_config())
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_verify(cfg: RunConfig, out: Path, args) -> int:
    spec = cfg.problem()
    grid = cfg.grid(spec)
    cand = _load_candidate(cfg, spec, grid, args.candidate)
    v = cfg.section("verify")
    report = verify_equilibrium(spec, grid, cand, cfg.library(spec), v["x_points"], v["tol"], v["eps_grid"],
                                v["engine"], cfg.pde_config(), cfg.mc_config(), workers=cfg.workers)
    report.info["seed"] = cfg.seed
    report.info["candidate"] = str(args.candidate)
    write_gap_report(report, out)
    name, x, val = report.worst
    print(f"verdict: {'pass' if report.verdict else 'fail'}; worst offender {name} at x={x} "
          f"(limsup estimate {val:.4g}, tol {report.tol:g})")
    return EXIT_OK if report.verdict else EXIT_FAIL


def cmd_convergence(cfg: RunConfig, out: Path, args) -> int:
    """Solve on three nested grids (dt0 and dx halved each time) and tabulate residual ratios."""
    lam = _lambda(args, cfg)
    spec = cfg.problem()
    grid = cfg.grid(spec)
    rows = []
    ok = True
    for level in range(3):
        if level:
            grid = grid.refined()
        try:
            res = solve_regularized_equilibrium(spec, grid, lam, cfg.fixed_point_config(), cfg.pde_config(),
                                                actions=cfg.actions(spec))
        except FixedPointError as exc:
            _dump(out / "error.json", dict(error=str(exc), level=level, seed=cfg.seed))
            return EXIT_FAIL
        ok &= res.converged
        row = dict(level=level, n_x=grid.n_x, dt0=grid.dt0, iterations=res.iterations, converged=res.converged,
                   res_t0=res.eehjb_residual_t0, res_field=res.eehjb_residual_field)
        if rows:
            row["ratio_t0"] = rows[-1]["res_t0"] / row["res_t0"]
            row["ratio_field"] = rows[-1]["res_field"] / row["res_field"]
            ok &= row["ratio_t0"] >= MIN_ORDER_RATIO and row["ratio_field"] >= MIN_ORDER_RATIO
        rows.append(row)
    cols = ["level", "n_x", "dt0", "iterations", "converged", "res_t0", "res_field", "ratio_t0", "ratio_field"]
    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r.get(c), float) else r.get(c, "") for c in cols])
    _dump(out / "convergence.json", dict(lam=lam, seed=cfg.seed, rows=rows, min_ratio=MIN_ORDER_RATIO, ok=ok))
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"check": cmd_check, "solve": cmd_solve, "anneal": cmd_anneal, "verify": cmd_verify,
            "convergence": cmd_convergence}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relaxeq", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="INI config file (values are JSON literals)")
    parser.add_argument("--lambda", dest="lam", type=float, help="temperature for solve/convergence")
    parser.add_argument("--workers", type=int, help="worker threads (results do not depend on it)")
    parser.add_argument("--seed", type=int, help="overrides run.seed")
    parser.add_argument("--out", help="output directory (overrides run.output_dir)")
    parser.add_argument("--candidate", help="verify: solve/anneal output dir, policy .bin, or 'uniform'")
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    started = datetime.now(timezone.utc).isoformat()
    try:
        cfg = load_config(args.config)
        overrides = {k: v for k, v in (("seed", args.seed), ("workers", args.workers)) if v is not None}
        if args.out is not None:
            overrides["output_dir"] = args.out
        if overrides:
            cfg = cfg.updated("run", **overrides)
        if cfg.workers < 1:
            raise ConfigError("--workers must be at least 1")
        out = cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(cfg.snapshot())
        code = COMMANDS[args.command](cfg, out, args)
    except (ConfigError, UsageError) as exc:
        print(f"relaxeq: {exc}", file=sys.stderr)
        return EXIT_USAGE
    meta = dict(command=args.command, argv=argv, started=started,
                finished=datetime.now(timezone.utc).isoformat(), exit_code=code, seed=cfg.seed,
                python=platform.python_version(), numpy=np.__version__, scipy=scipy.__version__)
    _dump(out / "metadata.json", meta)
    return code


if __name__ == "__main__":
    sys.exit(main())
