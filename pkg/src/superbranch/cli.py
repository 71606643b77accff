"""Command-line interface.

Subcommands run one experiment each against a declarative config file and
write result.json (+ CSV tables) into the output directory.  Exit codes:
0 when every verdict passed, 2 when a statistical check failed, 1 on
execution errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from typing import Dict, Optional

import numpy as np

from . import harness, loglaplace as ll, scenarios

_SECTIONS = {"scenario", "grid", "solver", "run", "weight", "transform"}


def load_config(path: Optional[str]) -> Dict:
    if path is None:
        return {}
    with open(path) as fh:
        text = fh.read()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError:
        try:
            import yaml
            cfg = yaml.safe_load(text)
        except Exception as exc:
            raise scenarios.ConfigError(f"cannot parse config {path}: {exc}")
    if not isinstance(cfg, dict):
        raise scenarios.ConfigError("config must be a mapping of sections")
    unknown = set(cfg) - _SECTIONS
    if unknown:
        raise scenarios.ConfigError(f"unknown config sections {sorted(unknown)}")
    return cfg


def _scenario_from(cfg: Dict) -> scenarios.Scenario:
    sc_cfg = cfg.get("scenario")
    if not sc_cfg:
        raise scenarios.ConfigError("config requires a 'scenario' section")
    return scenarios.from_config(sc_cfg)


def _grid_from(cfg: Dict, scenario: scenarios.Scenario) -> Optional[ll.SpaceTimeGrid]:
    g = dict(cfg.get("grid") or {})
    if not g:
        return None
    known = {"x_min", "x_max", "nx", "nt", "boundary", "homogeneous"}
    unknown = set(g) - known
    if unknown:
        raise scenarios.ConfigError(f"unknown grid keys {sorted(unknown)}")
    if g.get("homogeneous"):
        return ll.homogeneous_grid(scenario.r, scenario.horizon,
                                   int(g.get("nt", 64)))
    return ll.SpaceTimeGrid(scenario.r, scenario.horizon, int(g.get("nt", 128)),
                            x_min=float(g.get("x_min", -10.0)),
                            x_max=float(g.get("x_max", 10.0)),
                            nx=int(g.get("nx", 257)),
                            boundary=g.get("boundary", "free"))


def _run_section(cfg: Dict) -> Dict:
    run = dict(cfg.get("run") or {})
    known = {"reps", "dt", "beta_schedule", "t_grid", "lags", "levels",
             "windows", "x_grid", "threshold", "transformed", "output_times"}
    unknown = set(run) - known
    if unknown:
        raise scenarios.ConfigError(f"unknown run keys {sorted(unknown)}")
    return run


def _solver_section(cfg: Dict) -> Dict:
    sol = dict(cfg.get("solver") or {})
    known = {"tol", "splitting"}
    unknown = set(sol) - known
    if unknown:
        raise scenarios.ConfigError(f"unknown solver keys {sorted(unknown)}")
    return sol


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="superbranch",
        description="simulation and verification toolkit for measure-valued "
                    "branching systems")
    parser.add_argument("--config", help="config file (json or yaml)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="out")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "solve", "convergence", "moments", "extinction",
                 "admissibility", "tightness"):
        sub.add_parser(name)
    sc_parser = sub.add_parser("scenarios")
    sc_parser.add_argument("action", choices=("list",))
    args = parser.parse_args(argv)

    if args.command == "scenarios":
        for name in scenarios.list_scenarios():
            print(name)
        return 0

    try:
        cfg = load_config(args.config)
        scenario = _scenario_from(cfg)
        run = _run_section(cfg)
        solver = _solver_section(cfg)
        grid = _grid_from(cfg, scenario)
        reps = int(run.get("reps", 1000))
        dt = float(run.get("dt", 1e-2))
        t_start = time.time()

        if args.command == "solve":
            result = _cmd_solve(scenario, grid, solver)
        elif args.command == "simulate":
            result = _cmd_simulate(scenario, run, args.seed, args.workers, dt)
        elif args.command == "convergence":
            schedule = run.get("beta_schedule", [1.0, 0.3, 0.1])
            result = harness.run_convergence(
                scenario, schedule, reps, args.seed, workers=args.workers,
                dt=dt, grid=grid, tol=float(solver.get("tol", 1e-6)))
        elif args.command == "moments":
            result = harness.run_moment_check(
                scenario, reps, args.seed, workers=args.workers, dt=dt,
                grid=grid, tol=float(solver.get("tol", 1e-6)))
        elif args.command == "extinction":
            result = harness.run_extinction_check(
                scenario, reps, args.seed, workers=args.workers,
                t_grid=run.get("t_grid"), dt=dt)
        elif args.command == "admissibility":
            result = harness.run_admissibility(
                scenario, reps, args.seed,
                windows=run.get("windows", (0.4, 0.2, 0.1, 0.05)),
                x_grid=run.get("x_grid", (0.25, 0.5, 1.0, 2.0, 4.0)),
                threshold=float(run.get("threshold", 0.5)),
                transformed=bool(run.get("transformed", False)))
        else:  # tightness
            result = harness.run_tightness_diagnostic(
                scenario, run.get("beta_schedule", [1.0, 0.3]), reps,
                args.seed, workers=args.workers,
                lags=run.get("lags", (0.4, 0.2, 0.1, 0.05)),
                levels=run.get("levels", (0.5, 1.0, 2.0, 4.0)), dt=dt)

        meta = {"wall_seconds": time.time() - t_start, "workers": args.workers}
        path = harness.write_result(result, args.out, fmt=args.format, meta=meta)
        for name, ok in sorted(result.verdicts.items()):
            print(f"{name}: {'pass' if ok else 'FAIL'}")
        print(f"wrote {path}")
        return 0 if result.passed else 2
    except (scenarios.ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def _cmd_solve(scenario, grid, solver) -> harness.RunResult:
    from . import loglaplace as L
    g = grid or harness.default_grid(scenario, scenario.r, scenario.horizon)
    tol = float(solver.get("tol", 1e-6))
    splitting = solver.get("splitting", "lie")
    v = L.solve_v(scenario.f, scenario.mech, scenario.K, scenario.motion, g,
                  tol=tol, splitting=splitting)
    rows = []
    if v.grid.homogeneous:
        for j, s in enumerate(v.grid.times):
            rows.append({"r": float(s), "x": "", "v": float(v.values[j])})
    else:
        for i, x in enumerate(v.grid.x):
            rows.append({"r": v.grid.r, "x": float(x),
                         "v": float(v.values[0, i])})
    pairing = v.pair_initial(scenario.mu.positions, scenario.mu.weights)
    cfg = {"kind": "solve", "scenario": scenarios.to_config(scenario),
           "tol": tol, "splitting": splitting}
    return harness.RunResult(
        "solve", cfg["scenario"], 0, harness._hash_config(cfg),
        {"solution": rows},
        {"grid_converged": v.last_change <= tol},
        {"initial_pairing": pairing, "refinements": v.refinements,
         "last_change": v.last_change})


def _cmd_simulate(scenario, run, seed, workers, dt) -> harness.RunResult:
    out_times = run.get("output_times") or [scenario.horizon]
    reps = int(run.get("reps", 1000))
    Z = harness.run_replicas(scenario, scenario.beta, seed, scenario.r,
                             out_times, reps, workers, dt)
    rows = []
    for j, t in enumerate(out_times):
        m, se = harness._mean_se(Z[:, j])
        rows.append({"t": float(t), "mean_pairing": m, "stderr": se})
    cfg = {"kind": "simulate", "scenario": scenarios.to_config(scenario),
           "reps": reps, "output_times": [float(t) for t in out_times],
           "dt": dt}
    return harness.RunResult(
        "simulate", cfg["scenario"], seed, harness._hash_config(cfg),
        {"simulate": rows}, {}, {"reps": reps})


if __name__ == "__main__":
    sys.exit(main())
