"""Domain-enlargement study: every iteration starts from the farthest
state the current safe set can serve (alternating sides), so the safe set
and the planner's reach region grow until the state constraints bind.

Prints the per-iteration growth and, after the run, the reach region's
extent per iteration; --plot draws the nested regions.
"""

import argparse
import sys

import numpy as np

from rlmpc import approximate_roa, run_learning_loop
from rlmpc.cli import load_study


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config",
                    default="configs/double_integrator_enlarge.json")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--directions", type=int)
    ap.add_argument("--plot", action="store_true")
    args = ap.parse_args(argv)

    study = load_study(args.config, seed=args.seed)
    print(f"enlargement study from {args.config} (seed {study.learn.seed})")
    print(f"{'iter':>4}  {'start':>18}  {'duration':>8}  {'columns':>7}")

    starts = []

    def on_iteration(j, rec, ss):
        starts.append(rec.states[0])
        s = np.array2string(rec.states[0], precision=3)
        print(f"{j:>4}  {s:>18}  {rec.duration:>8}  {ss.num_columns:>7}")

    result = run_learning_loop(study.model, study.cost, study.pair,
                               study.learn, on_iteration=on_iteration)

    directions = int(args.directions if args.directions is not None
                     else study.roa.get("directions", 16))
    print(f"\nreach region per iteration ({directions} directions):")
    regions = []
    for j, ss in enumerate(result.safe_sets):
        res = approximate_roa(study.model, ss, study.cost, study.pair,
                              study.learn.horizon, directions=directions)
        regions.append(res.region)
        bb = res.region.bounding_box()
        print(f"  after iteration {j:2d}: x0 in [{bb[0, 0]:+7.3f}, "
              f"{bb[0, 1]:+7.3f}], x1 in [{bb[1, 0]:+6.3f}, {bb[1, 1]:+6.3f}]")
    if args.plot:
        _plot(result, regions, study.out)
    return 0


def _plot(result, regions, out) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not available; skipping plots", file=sys.stderr)
        return
    if result.safe_sets[-1].states.shape[1] != 2:
        return
    out.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 5))
    cmap = plt.get_cmap("viridis")
    for j, region in enumerate(regions):
        ring = np.vstack([region.vertices, region.vertices[:1]])
        ax.plot(ring[:, 0], ring[:, 1], color=cmap(j / max(1, len(regions) - 1)),
                lw=1.0)
    for rec in result.records:
        ax.plot(rec.states[:, 0], rec.states[:, 1], "k.", ms=2, alpha=0.5)
    ax.set_xlabel("x0")
    ax.set_ylabel("x1")
    ax.set_title("reach region growth (light = later iteration)")
    fig.tight_layout()
    fig.savefig(out / "reach_regions.png", dpi=150)
    print(f"plot written to {out}")


if __name__ == "__main__":
    sys.exit(main())
