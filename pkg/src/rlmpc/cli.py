"""Command-line front end: verify, learn, montecarlo, roa.

A single JSON config describes the system, the cost, and the study
parameters; commands share it and write their outputs under the config's
(or --out's) output directory.  `learn` writes one directory per data
iteration with the safe-set artifact and the closed-loop rollout;
`montecarlo` and `roa` consume those artifacts.

Outputs are deterministic for a fixed (config, seed) pair, except for
wall-clock measurements, which are isolated in timing.json files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import roa as roa_mod
from . import simulation as sim
from .safe_set import SafeSet
from .solver import ConvexProgram
from .system import (StageCost, SystemModel, TerminalPair, cost_from_config,
                     system_from_config, terminal_from_config,
                     verify_terminal_pair)


@dataclass
class Study:
    model: SystemModel
    pair: TerminalPair
    cost: StageCost
    learn: sim.LearningConfig
    montecarlo: dict
    roa: dict
    out: Path
    raw: dict


def load_study(path, seed=None, jobs=None, out=None) -> Study:
    cfg = json.loads(Path(path).read_text())
    model = system_from_config(cfg["system"])
    pair = terminal_from_config(cfg["system"].get("terminal"), model)
    cost = cost_from_config(cfg.get("cost"))
    learn_cfg = cfg.get("learning", {})
    x0 = learn_cfg.get("x0")
    learn = sim.LearningConfig(
        horizon=int(learn_cfg.get("horizon", 3)),
        iterations=int(learn_cfg.get("iterations", 5)),
        schedule=learn_cfg.get("schedule", "fixed-x0"),
        x0=None if x0 is None else np.asarray(x0, dtype=float),
        mode=learn_cfg.get("mode", "certainty-equivalent"),
        t_max=int(learn_cfg.get("t_max", 50)),
        eps_stop=float(learn_cfg.get("eps_stop", 1e-3)),
        bootstrap_horizon=int(learn_cfg.get("bootstrap_horizon", 20)),
        prune=bool(learn_cfg.get("prune", False)),
        seed=int(seed if seed is not None else learn_cfg.get("seed", 0)),
        jobs=int(jobs if jobs is not None else learn_cfg.get("jobs", 1)))
    return Study(model=model, pair=pair, cost=cost, learn=learn,
                 montecarlo=cfg.get("montecarlo", {}),
                 roa=cfg.get("roa", {}),
                 out=Path(out if out is not None else cfg.get("out", "results")),
                 raw=cfg)


def study_fingerprint(study: Study) -> str:
    """Hash of everything a safe-set artifact depends on."""
    desc = {"a": study.model.a.tolist(), "b": study.model.b.tolist(),
            "state": study.model.state_set.vertices.tolist(),
            "input": study.model.input_set.vertices.tolist(),
            "disturbance": study.model.disturbance_set.vertices.tolist(),
            "terminal": study.pair.terminal_set.vertices.tolist(),
            "gain": study.pair.gain.tolist(),
            "cost": [study.cost.state_weight, study.cost.input_weight,
                     study.cost.norm_mode]}
    blob = json.dumps(desc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


# ----------------------------------------------------------------------
# artifacts
# ----------------------------------------------------------------------

def write_safe_set(path: Path, ss: SafeSet, fingerprint: str) -> None:
    data = ss.to_dict()
    data["fingerprint"] = fingerprint
    path.write_text(json.dumps(data) + "\n")

def read_safe_set(path: Path, fingerprint: str | None = None) -> SafeSet:
    data = json.loads(path.read_text())
    if fingerprint is not None and data.get("fingerprint") != fingerprint:
        raise ValueError(
            f"safe-set artifact {path} was built for a different study")
    return SafeSet.from_dict(data)


def write_rollout_csv(path: Path, record: sim.IterationRecord) -> None:
    n = record.states.shape[1]
    d = record.inputs.shape[1]
    header = (["t"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(d)]
              + [f"w{i}" for i in range(n)]
              + ["stage_cost", "planner_value", "terminal_distance"])
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(record.states.shape[0]):
            w = (record.disturbances[t].tolist()
                 if t < record.disturbances.shape[0] else [""] * n)
            writer.writerow([t] + record.states[t].tolist()
                            + record.inputs[t].tolist() + w
                            + [record.stage_costs[t],
                               record.planner_values[t],
                               record.terminal_distances[t]])


def write_q_grid(path: Path, ss: SafeSet, resolution: int) -> None:
    """Q-function samples on a regular grid over the hull bounding box
    (planar sets only); infeasible points are tagged infinite."""
    if ss.states.shape[1] != 2 or resolution <= 0:
        return
    box = ss.hull.bounding_box()
    xs = np.linspace(box[0, 0], box[0, 1], resolution)
    ys = np.linspace(box[1, 0], box[1, 1], resolution)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x0", "x1", "q"])
        for x in xs:
            for y in ys:
                q = ss.q_value(np.array([x, y]))
                writer.writerow([x, y, q.value if q.feasible else "inf"])


def _iteration_dirs(out: Path) -> list[Path]:
    return sorted(out.glob("iter_*"))


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------

def cmd_verify(args) -> int:
    study = load_study(args.config)
    report = verify_terminal_pair(study.model, study.pair)
    print(report)
    print(f"terminal set: {study.pair.terminal_set.num_vertices} vertices; "
          f"gain {study.pair.gain.tolist()}")
    return 0 if report.ok else 1


def _solver_probe() -> bool:
    prog = ConvexProgram("probe")
    v = prog.new_variable("v", 1, nonneg=True)
    prog.add_linear_cost(v, [1.0])
    prog.add_inequality([(v, -np.eye(1))], -1.0)
    return prog.solve().ok and abs(prog.solve().objective - 1.0) < 1e-9


def cmd_learn(args) -> int:
    study = load_study(args.config, seed=args.seed, jobs=args.jobs,
                       out=args.out)
    if args.dry_run:
        print(json.dumps({"config": study.raw,
                          "resolved_seed": study.learn.seed,
                          "out": str(study.out),
                          "solver_ok": _solver_probe()}, indent=2,
                         default=str))
        return 0
    study.out.mkdir(parents=True, exist_ok=True)
    fp = study_fingerprint(study)
    grid_res = int(study.raw.get("q_grid_resolution", 21))
    summary = []

    def on_iteration(j, record, ss):
        it_dir = study.out / f"iter_{j:03d}"
        it_dir.mkdir(exist_ok=True)
        write_safe_set(it_dir / "safe_set.json", ss, fp)
        write_rollout_csv(it_dir / "rollout.csv", record)
        write_q_grid(it_dir / "q_grid.csv", ss, grid_res)
        summary.append({"iteration": j, "duration": record.duration,
                        "cost": record.cost, "columns": ss.num_columns,
                        "start_state": record.states[0].tolist()})
        print(f"iteration {j}: duration {record.duration}, "
              f"cost {record.cost:.4f}, {ss.num_columns} columns")

    sim.run_learning_loop(study.model, study.cost, study.pair, study.learn,
                          on_iteration=on_iteration)
    (study.out / "summary.json").write_text(
        json.dumps({"fingerprint": fp, "iterations": summary}, indent=2) + "\n")
    return 0


def cmd_montecarlo(args) -> int:
    study = load_study(args.config, seed=args.seed, jobs=args.jobs,
                       out=args.out)
    dirs = _iteration_dirs(study.out)
    if not dirs:
        print(f"no learned safe sets under {study.out}; run learn first",
              file=sys.stderr)
        return 2
    ss = read_safe_set(dirs[-1] / "safe_set.json", study_fingerprint(study))
    mc_cfg = study.montecarlo
    runs = int(args.runs if args.runs is not None else mc_cfg.get("runs", 50))
    result = sim.monte_carlo(
        study.model, ss, study.cost, study.pair, args.policy, runs,
        seed=study.learn.seed, horizon=study.learn.horizon,
        t_max=int(mc_cfg.get("t_max", 30)),
        eps_stop=study.learn.eps_stop,
        noise_scale=float(mc_cfg.get("noise_scale", 1.0)),
        jobs=study.learn.jobs)
    mc_dir = study.out / f"mc_{args.policy}"
    mc_dir.mkdir(parents=True, exist_ok=True)
    with (mc_dir / "runs.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "cost", "duration", "state_violations",
                         "input_violations", "exit_events",
                         "infeasible_events", "terminal_distance"])
        for r, st in enumerate(result.runs):
            writer.writerow([r, st.cost, st.duration, st.state_violations,
                             st.input_violations, st.exit_events,
                             st.infeasible_events, st.terminal_distance])
    (mc_dir / "aggregate.json").write_text(json.dumps({
        "policy": args.policy, "runs": runs,
        "mean_cost": result.mean_cost,
        "violations": {k: result.total(k) for k in
                       ("state_violations", "input_violations",
                        "exit_events", "infeasible_events")}},
        indent=2) + "\n")
    (mc_dir / "timing.json").write_text(json.dumps({
        "mean_step_time": result.mean_step_time,
        "per_run": [st.mean_step_time for st in result.runs]}) + "\n")
    print(f"{args.policy}: mean cost {result.mean_cost:.4f}, "
          f"mean step time {result.mean_step_time * 1e3:.2f} ms over "
          f"{runs} runs")
    return 0


def cmd_roa(args) -> int:
    study = load_study(args.config, out=args.out)
    dirs = _iteration_dirs(study.out)
    if not dirs:
        print(f"no learned safe sets under {study.out}; run learn first",
              file=sys.stderr)
        return 2
    directions = int(args.directions if args.directions is not None
                     else study.roa.get("directions", 16))
    roa_dir = study.out / "roa"
    roa_dir.mkdir(parents=True, exist_ok=True)
    fp = study_fingerprint(study)
    for it_dir in dirs:
        ss = read_safe_set(it_dir / "safe_set.json", fp)
        result = roa_mod.approximate_roa(study.model, ss, study.cost,
                                         study.pair, study.learn.horizon,
                                         directions=directions)
        (roa_dir / f"{it_dir.name}.json").write_text(
            json.dumps(result.region.to_dict()) + "\n")
        with (roa_dir / f"{it_dir.name}_queries.csv").open(
                "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["direction", "split", "status", "state",
                             "extent"])
            for q in result.queries:
                writer.writerow([q.direction.tolist(), q.split,
                                 q.status.value,
                                 None if q.state is None else q.state.tolist(),
                                 q.extent])
        print(f"{it_dir.name}: region with "
              f"{result.region.num_vertices} vertices")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rlmpc",
        description="robust learning MPC: verify, learn, evaluate")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="certify the terminal pair")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("learn", help="run the learning loop")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("montecarlo", help="evaluate a policy under noise")
    p.add_argument("--config", required=True)
    p.add_argument("--policy", choices=["lmpc", "safe"], required=True)
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("roa", help="inner-approximate the planner's region "
                                   "of attraction per iteration")
    p.add_argument("--config", required=True)
    p.add_argument("--directions", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_roa)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
