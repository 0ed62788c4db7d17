import json
import re
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from relaxeq import ConfigError, load_config, parse_config, read_field_binary
from relaxeq.cli import main

R1_SMALL = """
[problem]
name = "R1"

[grid]
n_x = 101
dt0 = 0.02
"""


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def numeric_files(directory: Path) -> dict[str, bytes]:
    """Every output except the wall-clock metadata and the config snapshot (which names the directory)."""
    return {str(p.relative_to(directory)): p.read_bytes() for p in sorted(directory.rglob("*"))
            if p.is_file() and p.name not in ("metadata.json", "config.ini")}


def test_check_d0(tmp_path):
    cfg = write(tmp_path, "")
    assert main(["check", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    report = json.loads((tmp_path / "o" / "assumptions.json").read_text())
    assert report["eta"] == 1.0 and report["ok"] and report["seed"] == 0


def test_check_degenerate_diffusion(tmp_path):
    cfg = write(tmp_path, '[problem]\nname = "sigma_zero"\n')
    assert main(["check", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    report = json.loads((tmp_path / "o" / "assumptions.json").read_text())
    assert not report["ok"] and report["eta"] == 0.0


@pytest.mark.parametrize("text", ["[bogus]\nx = 1\n", "[grid]\nnx = 5\n", '[problem]\nname = "R2"\n',
                                  "not an ini file", "[solver]\ndamping = 0\n", '[verify]\nengine = "qmc"\n'])
def test_bad_config_is_usage_error(tmp_path, text, capsys):
    cfg = write(tmp_path, text)
    assert main(["check", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "relaxeq:" in capsys.readouterr().err


def test_usage_errors(tmp_path):
    assert main(["check", "--config", str(tmp_path / "missing.ini")]) == 2
    assert main(["frobnicate", "--config", write(tmp_path, "")]) == 2
    assert main(["check"]) == 2
    cfg = write(tmp_path, "")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 2  # no lambda
    assert main(["solve", "--config", cfg, "--lambda", "-1", "--out", str(tmp_path / "o")]) == 2
    assert main(["check", "--config", cfg, "--workers", "0", "--out", str(tmp_path / "o")]) == 2
    assert main(["verify", "--config", cfg, "--out", str(tmp_path / "o")]) == 2  # no candidate


def test_solve_d0(tmp_path):
    cfg = write(tmp_path, "[grid]\nn_x = 41\nhorizon = 50.0\n")
    out = tmp_path / "o"
    assert main(["solve", "--config", cfg, "--lambda", "1", "--out", str(out)]) == 0
    for name in ("value.bin", "policy.bin", "value_t0.csv", "policy.csv", "history.csv", "summary.json",
                 "config.ini", "metadata.json"):
        assert (out / name).is_file()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] and summary["iterations"] <= 2 and summary["seed"] == 0


def test_solve_r1(tmp_path):
    out = tmp_path / "o"
    assert main(["solve", "--config", write(tmp_path, R1_SMALL), "--lambda", "0.5", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] and summary["final_norm"] <= 1e-6


def test_solve_truncated_still_writes(tmp_path):
    cfg = write(tmp_path, R1_SMALL + "\n[solver]\nmax_iters = 1\n")
    out = tmp_path / "o"
    assert main(["solve", "--config", cfg, "--lambda", "0.5", "--out", str(out)]) == 1
    summary = json.loads((out / "summary.json").read_text())
    assert not summary["converged"]
    assert (out / "value.bin").is_file()
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["exit_code"] == 1


def test_solve_failure_writes_error(tmp_path):
    cfg = write(tmp_path, R1_SMALL + "\n[solver]\nlinear_tol = 1e-30\n")
    out = tmp_path / "o"
    assert main(["solve", "--config", cfg, "--lambda", "0.5", "--out", str(out)]) == 1
    err = json.loads((out / "error.json").read_text())
    assert err["iteration"] == 1


def test_anneal_d0(tmp_path):
    cfg = write(tmp_path, "[grid]\nn_x = 41\nhorizon = 50.0\n[schedule]\nlambdas = [1, 0.5, 0.25]\n")
    out = tmp_path / "o"
    assert main(["anneal", "--config", cfg, "--out", str(out)]) == 0
    stages = [read_field_binary(out / f"stage_{k:02d}" / "value.bin").values for k in range(3)]
    assert all(np.array_equal(stages[0], s) for s in stages[1:])
    assert json.loads((out / "summary.json").read_text())["seed"] == 0


def test_anneal_reruns_are_bitwise_and_snapshot_reproduces(tmp_path):
    cfg = write(tmp_path, "[grid]\nn_x = 41\nhorizon = 50.0\n[schedule]\nlambdas = [1, 0.5, 0.25]\n"
                          "[run]\nseed = 17\n")
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["anneal", "--config", cfg, "--out", str(a)]) == 0
    assert main(["anneal", "--config", cfg, "--out", str(b)]) == 0
    assert main(["anneal", "--config", str(a / "config.ini"), "--out", str(c)]) == 0
    assert numeric_files(a) == numeric_files(b) == numeric_files(c)
    snap_a = load_config(a / "config.ini").updated("run", output_dir="x")
    snap_c = load_config(c / "config.ini").updated("run", output_dir="x")
    assert snap_a.to_dict() == snap_c.to_dict()
    assert snap_a.seed == 17


def test_snapshot_round_trip(tmp_path):
    cfg = parse_config(R1_SMALL + "\n[verify]\nx_points = [0.5]\n[run]\nseed = 3\n")
    again = parse_config(cfg.snapshot())
    assert again.to_dict() == cfg.to_dict()
    with pytest.raises(ConfigError):
        cfg.updated("run", colour="red")


def test_verify_uniform_straw_man(tmp_path, capsys):
    out = tmp_path / "o"
    code = main(["verify", "--config", write(tmp_path, R1_SMALL), "--candidate", "uniform", "--out", str(out)])
    assert code == 1
    assert "worst offender greedy" in capsys.readouterr().out
    report = json.loads((out / "report.json").read_text())
    assert report["verdict"] == "fail" and report["seed"] == 0
    assert (out / "gaps.csv").is_file()


def test_verify_solved_candidate_and_workers(tmp_path):
    cfg = write(tmp_path, "[grid]\nn_x = 41\nhorizon = 50.0\n[verify]\ntol = 0.001\n")
    solved = tmp_path / "solved"
    assert main(["solve", "--config", cfg, "--lambda", "1", "--out", str(solved)]) == 0
    one, two = tmp_path / "v1", tmp_path / "v2"
    assert main(["verify", "--config", cfg, "--candidate", str(solved), "--out", str(one)]) == 0
    assert main(["verify", "--config", cfg, "--candidate", str(solved / "policy.bin"), "--workers", "2",
                 "--out", str(two)]) == 0
    assert (one / "gaps.csv").read_bytes() == (two / "gaps.csv").read_bytes()
    assert main(["verify", "--config", cfg, "--candidate", str(tmp_path / "nowhere"), "--out", str(one)]) == 2


def test_convergence_study(tmp_path):
    out = tmp_path / "o"
    assert main(["convergence", "--config", write(tmp_path, R1_SMALL), "--lambda", "0.5", "--out", str(out)]) == 0
    table = json.loads((out / "convergence.json").read_text())
    assert [r["n_x"] for r in table["rows"]] == [101, 201, 401]
    for row in table["rows"][1:]:
        assert row["ratio_t0"] >= 1.8 and row["ratio_field"] >= 1.8
    assert (out / "convergence.csv").read_text().startswith("level,n_x,dt0")


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, "")
    proc = subprocess.run([sys.executable, "-m", "relaxeq.cli", "check", "--config", cfg, "--out",
                           str(tmp_path / "o")], capture_output=True)
    assert proc.returncode == 0


def test_readme_config_example_parses():
    text = (Path(__file__).resolve().parents[1] / "README.md").read_text()
    block = re.search(r"```ini\n(.*?)```", text, re.S).group(1)
    cfg = parse_config(block)
    assert cfg.section("grid")["tail_eps"] == 1e-4
    assert cfg.problem().name == "R1"
