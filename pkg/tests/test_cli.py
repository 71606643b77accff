import json
import os

import pytest

from superbranch import cli


def write_cfg(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_scenarios_list(capsys):
    assert cli.main(["scenarios", "list"]) == 0
    out = capsys.readouterr().out
    assert "dawson_watanabe" in out
    assert "hyperbolic" in out


def test_solve_pass(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {
        "scenario": {"name": "dawson_watanabe"},
        "solver": {"tol": 1e-6},
    })
    out_dir = str(tmp_path / "out")
    rc = cli.main(["--config", cfg, "--out", out_dir, "solve"])
    assert rc == 0
    doc = json.load(open(os.path.join(out_dir, "result.json")))
    assert doc["passed"] is True
    assert "grid_converged: pass" in capsys.readouterr().out


def test_moments_pass(tmp_path):
    cfg = write_cfg(tmp_path, {
        "scenario": {"name": "subcritical"},
        "run": {"reps": 400},
    })
    out_dir = str(tmp_path / "out")
    assert cli.main(["--config", cfg, "--out", out_dir, "moments"]) == 0
    assert os.path.exists(os.path.join(out_dir, "table_moments.csv"))


def test_unknown_section_errors(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"scenario": {"name": "dawson_watanabe"},
                               "galaxy": {}})
    rc = cli.main(["--config", cfg, "solve"])
    assert rc == 1


def test_failed_verdict_exit_code(tmp_path):
    # an absurdly small threshold forces a "violated" clock verdict
    cfg = write_cfg(tmp_path, {
        "scenario": {"name": "hyperbolic",
                     "params": {"beta": 1.0, "sigma": 2.0, "x0": 1.0}},
        "run": {"reps": 200, "threshold": 1e-9,
                "windows": [0.2, 0.1], "x_grid": [0.5, 1.0]},
    })
    out_dir = str(tmp_path / "out")
    rc = cli.main(["--config", cfg, "--out", out_dir, "admissibility"])
    assert rc == 2
    doc = json.load(open(os.path.join(out_dir, "result.json")))
    assert doc["passed"] is False


def test_missing_config_is_error():
    assert cli.main(["solve"]) == 1
