import filecmp
import json
import math
import os

import numpy as np
import pytest

from superbranch import harness as H
from superbranch import scenarios as S


def test_hash_config_stable():
    a = H._hash_config({"b": 1, "a": [1, 2]})
    b = H._hash_config({"a": [1, 2], "b": 1})
    assert a == b
    assert len(a) == 16
    assert a != H._hash_config({"a": [1, 2], "b": 2})


def test_run_replicas_worker_invariance():
    sc = S.dawson_watanabe(beta=0.5)
    one = H.run_replicas(sc, 0.5, seed=17, r=0.0, t_out=[0.25, 0.5],
                         reps=40, workers=1)
    two = H.run_replicas(sc, 0.5, seed=17, r=0.0, t_out=[0.25, 0.5],
                         reps=40, workers=2)
    assert np.array_equal(one, two)


def test_moment_check_subcritical():
    """E<1, beta X_t> = e^{-t} for unit-rate subcritical binary branching."""
    sc = S.subcritical()
    res = H.run_moment_check(sc, reps=2000, seed=5)
    row = res.tables["moments"][0]
    assert row["solver_target"] == pytest.approx(
        sc.mu.total_mass * math.exp(-sc.horizon), abs=1e-4)
    assert abs(row["z"]) <= H.Z_THRESHOLD
    assert res.passed


def test_moment_check_critical_target():
    sc = S.dawson_watanabe()
    res = H.run_moment_check(sc, reps=1500, seed=6, t=0.5)
    row = res.tables["moments"][0]
    assert row["solver_target"] == pytest.approx(sc.mu.total_mass, abs=1e-6)
    assert res.passed


def test_extinction_check_rejects_wrong_scenario():
    with pytest.raises(ValueError):
        H.run_extinction_check(S.dawson_watanabe(), reps=10, seed=0)


def test_tightness_no_branching_control():
    """Without branching and with constant f the process mass is frozen, so
    every squared increment vanishes."""
    sc = S.no_branching()
    res = H.run_tightness_diagnostic(sc, beta_schedule=[1.0], reps=200,
                                     seed=9, lags=(0.2, 0.1), dt=2e-2)
    for row in res.tables["gamma"]:
        assert row["gamma_hat"] == pytest.approx(0.0, abs=1e-12)
    assert res.passed


def test_tightness_lag_validation():
    sc = S.no_branching()
    with pytest.raises(ValueError):
        H.run_tightness_diagnostic(sc, [1.0], reps=10, seed=0,
                                   lags=(0.3, 0.2))


def test_write_result_deterministic(tmp_path):
    sc = S.subcritical()
    res = H.run_moment_check(sc, reps=200, seed=5)
    d1, d2 = tmp_path / "a", tmp_path / "b"
    p1 = H.write_result(res, str(d1), fmt="csv", meta={"wall": 1.23})
    res2 = H.run_moment_check(sc, reps=200, seed=5)
    p2 = H.write_result(res2, str(d2), fmt="csv", meta={"wall": 9.87})
    assert filecmp.cmp(p1, p2, shallow=False)
    assert filecmp.cmp(os.path.join(d1, "table_moments.csv"),
                       os.path.join(d2, "table_moments.csv"), shallow=False)
    doc = json.load(open(p1))
    assert "wall" not in json.dumps(doc)
    meta = json.load(open(os.path.join(d1, "run_meta.json")))
    assert meta["wall"] == 1.23
