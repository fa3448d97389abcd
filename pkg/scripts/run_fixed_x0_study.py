"""Fixed-start learning study: run the loop and tabulate per-iteration
closed-loop cost, duration, and safe-set size.

With --plot (needs matplotlib) the realized trajectories and the cost
trend are written as PNGs under the study's output directory.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from rlmpc import run_learning_loop
from rlmpc.cli import load_study


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config",
                    default="configs/double_integrator_fixed.json")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--plot", action="store_true")
    args = ap.parse_args(argv)

    study = load_study(args.config, seed=args.seed)
    print(f"learning study from {args.config} "
          f"(schedule {study.learn.schedule}, mode {study.learn.mode}, "
          f"seed {study.learn.seed})")
    print(f"{'iter':>4}  {'duration':>8}  {'cost':>14}  {'columns':>7}")

    def on_iteration(j, rec, ss):
        print(f"{j:>4}  {rec.duration:>8}  {rec.cost:>14.6f}  "
              f"{ss.num_columns:>7}")

    result = run_learning_loop(study.model, study.cost, study.pair,
                               study.learn, on_iteration=on_iteration)
    costs = [r.cost for r in result.records]
    print(f"cost trend: {costs[0]:.4f} -> {costs[-1]:.4f} "
          f"({100.0 * (costs[-1] / costs[0] - 1.0):+.5f}%)")
    if args.plot:
        _plot(result, study.out)
    return 0


def _plot(result, out: Path) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not available; skipping plots", file=sys.stderr)
        return
    out.mkdir(parents=True, exist_ok=True)

    fig, ax = plt.subplots(figsize=(6, 5))
    if result.safe_sets[-1].states.shape[1] == 2:
        hull = result.safe_sets[-1].hull.vertices
        ring = np.vstack([hull, hull[:1]])
        ax.plot(ring[:, 0], ring[:, 1], "k--", lw=0.8, label="safe set hull")
        for j, rec in enumerate(result.records):
            ax.plot(rec.states[:, 0], rec.states[:, 1], marker=".",
                    lw=0.9, label=f"iteration {j}")
        ax.set_xlabel("x0")
        ax.set_ylabel("x1")
    else:
        for j, rec in enumerate(result.records):
            ax.plot(rec.states[:, 0], marker=".", label=f"iteration {j}")
        ax.set_xlabel("t")
        ax.set_ylabel("x")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "trajectories.png", dpi=150)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r.cost for r in result.records], marker="o")
    ax.set_xlabel("iteration")
    ax.set_ylabel("closed-loop cost")
    fig.tight_layout()
    fig.savefig(out / "cost_trend.png", dpi=150)
    print(f"plots written to {out}")


if __name__ == "__main__":
    sys.exit(main())
