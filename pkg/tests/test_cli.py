"""CLI tests: exit codes, config validation, trace files, verify wiring."""

import json

import numpy as np
import pytest

import stiefelcd.core as core
from stiefelcd.cli import main, read_trace_csv, write_trace_csv
from stiefelcd.errors import ConfigurationError
from stiefelcd.solvers import IterateTrace


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def minimal_config(tmp_path, **solver_overrides):
    solver = {
        "algorithm": "ncdf_sgd",
        "beta": 1.0,
        "max_iters": 100,
        "seed": 3,
        "schedule": {"kind": "constant", "eta0": 0.005},
    }
    solver.update(solver_overrides)
    cfg = {
        "problem": {"kind": "quadratic_trace", "n": 8, "p": 3, "seed": 0},
        "solver": solver,
        "output": {
            "trace_path": str(tmp_path / "trace.csv"),
            "summary_path": str(tmp_path / "summary.json"),
        },
    }
    return cfg


def test_run_minimal_config_writes_trace_and_summary(tmp_path, capsys):
    cfg = minimal_config(tmp_path)
    assert main(["run", write_config(tmp_path, cfg)]) == 0
    lines = (tmp_path / "trace.csv").read_text().strip().splitlines()
    assert lines[0] == "iter,f,h,feas,stat,seconds"
    assert len(lines) == 101  # header + one row per iteration
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["termination"] == "max_iters"
    assert summary["iterations"] == 100
    assert summary["final_feasibility"] < 1.0
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed == summary


def test_run_trace_roundtrips_doubles(tmp_path):
    cfg = minimal_config(tmp_path, max_iters=20)
    path = write_config(tmp_path, cfg)
    assert main(["run", path]) == 0
    cols = read_trace_csv(tmp_path / "trace.csv")
    # rerun in-process to get the in-memory trace for exact comparison
    from stiefelcd.cli import build_problem, build_solver
    from stiefelcd.solvers import run_subgradient

    problem = build_problem(cfg["problem"])
    solver_cfg, _, _ = build_solver(cfg["solver"], problem)
    result = run_subgradient(problem, solver_cfg)
    assert np.array_equal(cols["f"], np.array(result.trace.f))
    assert np.array_equal(cols["h"], np.array(result.trace.h))
    assert np.array_equal(cols["feas"], np.array(result.trace.feas))
    assert np.array_equal(cols["stat"], np.array(result.trace.stat))
    assert np.array_equal(cols["iter"], np.arange(20.0))


def test_run_deterministic_apart_from_timing(tmp_path):
    cfg = minimal_config(tmp_path, max_iters=40)
    cfg["output"]["trace_path"] = str(tmp_path / "a.csv")
    path_a = write_config(tmp_path, cfg, "a.json")
    cfg["output"]["trace_path"] = str(tmp_path / "b.csv")
    path_b = write_config(tmp_path, cfg, "b.json")
    assert main(["run", path_a]) == 0
    assert main(["run", path_b]) == 0
    a = read_trace_csv(tmp_path / "a.csv")
    b = read_trace_csv(tmp_path / "b.csv")
    for key in ("iter", "f", "h", "feas", "stat"):
        assert np.array_equal(a[key], b[key]), key


def test_run_negative_eta0_names_field(tmp_path, capsys):
    cfg = minimal_config(tmp_path)
    cfg["solver"]["schedule"]["eta0"] = -1
    assert main(["run", write_config(tmp_path, cfg)]) == 3
    assert "eta0" in capsys.readouterr().err


def test_run_malformed_json_reports_location(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"problem": {,}')
    assert main(["run", str(path)]) == 3
    err = capsys.readouterr().err
    assert "line" in err and "column" in err


def test_run_missing_file(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.json")]) == 3
    assert "cannot read" in capsys.readouterr().err


def test_run_unknown_problem_kind(tmp_path, capsys):
    cfg = minimal_config(tmp_path)
    cfg["problem"]["kind"] = "tensor_pca"
    assert main(["run", write_config(tmp_path, cfg)]) == 3
    assert "tensor_pca" in capsys.readouterr().err


def test_run_unknown_solver_key(tmp_path, capsys):
    cfg = minimal_config(tmp_path)
    cfg["solver"]["etaO"] = 0.1
    assert main(["run", write_config(tmp_path, cfg)]) == 3
    assert "etaO" in capsys.readouterr().err


def test_run_missing_problem_section(tmp_path, capsys):
    cfg = minimal_config(tmp_path)
    del cfg["problem"]
    assert main(["run", write_config(tmp_path, cfg)]) == 3
    assert "problem" in capsys.readouterr().err


def test_run_divergence_exits_2_with_partial_trace(tmp_path, capsys):
    cfg = minimal_config(tmp_path, beta=0.1, max_iters=200)
    cfg["solver"]["schedule"] = {"kind": "constant", "eta0": 50.0}
    assert main(["run", write_config(tmp_path, cfg)]) == 2
    captured = capsys.readouterr()
    assert "diverged" in captured.err
    lines = (tmp_path / "trace.csv").read_text().strip().splitlines()
    assert lines[0] == "iter,f,h,feas,stat,seconds"
    assert len(lines) >= 2
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["termination"] == "divergence_guard"


def test_run_safeguard_violation_exits_3(tmp_path, capsys):
    # safeguards reported honestly but beta below the required level
    cfg = minimal_config(tmp_path)
    cfg["solver"]["feas_shell_check"] = True
    cfg["solver"]["safeguards"] = [1.0, 1.0, 1.0]
    cfg["solver"]["beta"] = 1.0  # needs >= 60
    assert main(["run", write_config(tmp_path, cfg)]) == 3
    assert "beta" in capsys.readouterr().err


def test_run_other_problem_kinds(tmp_path):
    for problem in [
        {"kind": "sparse_pca", "n": 20, "p": 2, "gamma": 0.1, "seed": 1},
        {"kind": "l1_pca", "rows": 30, "n": 10, "p": 2, "seed": 1,
         "noise": {"sigma": 0.05, "seed": 2}},
        {"kind": "orthogonal_mlp", "widths": [6, 3, 2], "n_samples": 40, "seed": 1},
    ]:
        cfg = {
            "problem": problem,
            "solver": {
                "algorithm": "ncdf_proxsgd" if problem["kind"] == "sparse_pca" else "rsgd_baseline",
                "beta": 1.0,
                "max_iters": 30,
                "schedule": {"kind": "constant", "eta0": 0.002},
            },
            "output": {"trace_path": str(tmp_path / "t.csv")},
        }
        assert main(["run", write_config(tmp_path, cfg)]) == 0, problem["kind"]


def test_run_quadratic_from_csv(tmp_path):
    mat = np.diag([3.0, 2.0, 1.0])
    data_path = tmp_path / "mat.csv"
    np.savetxt(data_path, mat, delimiter=",")
    cfg = {
        "problem": {"kind": "quadratic_trace", "data_path": str(data_path), "p": 1},
        "solver": {"beta": 1.0, "max_iters": 20,
                   "schedule": {"kind": "constant", "eta0": 0.01}},
        "output": {"trace_path": str(tmp_path / "t.csv")},
    }
    assert main(["run", write_config(tmp_path, cfg)]) == 0


# ---------------------------------------------------------------------------
# verify


def test_verify_exits_zero_and_prints_reports(capsys):
    assert main(["verify", "--samples", "60"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 14  # 12 identity checks + 2 stationarity checks
    for line in out:
        record = json.loads(line)
        assert record["passed"] is True


def test_verify_single_sample_still_passes(capsys):
    assert main(["verify", "--samples", "1"]) == 0


def test_verify_detects_flipped_coefficients(monkeypatch, capsys):
    for flipped in [(-15.0, -10.0, 3.0), (15.0, 10.0, 3.0), (15.0, -10.0, -3.0)]:
        monkeypatch.setattr(core, "_A_COEFFS", flipped)
        assert main(["verify", "--samples", "40"]) == 1
        err = capsys.readouterr().err
        assert "FAILED checks" in err


def test_verify_rejects_bad_samples(capsys):
    assert main(["verify", "--samples", "0"]) == 3


# ---------------------------------------------------------------------------
# grid


def test_grid_prints_table_and_selection(tmp_path, capsys):
    cfg = {
        "problem": {"kind": "quadratic_trace", "n": 6, "p": 2, "seed": 0},
        "solver": {
            "beta": 2.0,
            "schedule": {"kind": "constant"},
            "max_iters": 10,
            "seed": 7,
            "budget_epochs": 150,
        },
    }
    assert main(["grid", write_config(tmp_path, cfg), "--workers", "2"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 11
    table = [line.split() for line in out[:10]]
    etas = [float(a) for a, _ in table]
    values = [float(b) for _, b in table]
    assert etas == [0.01, 0.03, 0.05, 0.07, 0.09, 0.1, 0.3, 0.5, 0.7, 0.9]
    assert out[10].startswith("selected ")
    selected = float(out[10].split()[1])
    finite = [v for v in values if np.isfinite(v)]
    assert finite and values[etas.index(selected)] == min(finite)


def test_grid_requires_budget(tmp_path, capsys):
    cfg = {
        "problem": {"kind": "quadratic_trace", "n": 6, "p": 2},
        "solver": {"max_iters": 10},
    }
    assert main(["grid", write_config(tmp_path, cfg)]) == 3
    assert "budget_epochs" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# argument handling and helpers


def test_no_subcommand_exits_3(capsys):
    assert main([]) == 3


def test_unknown_flag_exits_3(capsys):
    assert main(["verify", "--bogus"]) == 3


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "stiefelcd" in capsys.readouterr().out


def test_trace_csv_write_read_exact(tmp_path):
    trace = IterateTrace()
    rng = np.random.default_rng(0)
    for k in range(7):
        trace.append(k, rng.random(), rng.random() * 1e-7, rng.random() * 1e3,
                     rng.random(), rng.random())
    path = tmp_path / "t.csv"
    write_trace_csv(path, trace)
    cols = read_trace_csv(path)
    assert np.array_equal(cols["f"], np.array(trace.f))
    assert np.array_equal(cols["h"], np.array(trace.h))
    assert np.array_equal(cols["seconds"], np.array(trace.seconds))


def test_read_trace_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("iter,f,h\n0,1,2\n")
    with pytest.raises(ConfigurationError):
        read_trace_csv(path)
