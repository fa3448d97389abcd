"""Paired comparison of the receding-horizon planner and the stored-column
safe policy on the final learned safe set: every run r uses the same start
state and the same disturbance stream for both policies, so the cost gap
is a paired sample, not two independent studies.
"""

import argparse
import sys

from rlmpc import monte_carlo, run_learning_loop
from rlmpc.cli import load_study


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config",
                    default="configs/double_integrator_fixed.json")
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--noise-scale", type=float, default=1.0)
    args = ap.parse_args(argv)

    study = load_study(args.config)
    print(f"learning from {args.config} ...")
    result = run_learning_loop(study.model, study.cost, study.pair,
                               study.learn)
    ss = result.safe_sets[-1]
    print(f"final safe set: {ss.num_columns} columns "
          f"(iteration {ss.iteration})")

    outcomes = {}
    for kind in ("lmpc", "safe"):
        outcomes[kind] = monte_carlo(
            study.model, ss, study.cost, study.pair, kind, args.runs,
            seed=args.seed, horizon=study.learn.horizon,
            noise_scale=args.noise_scale)

    print(f"\n{args.runs} paired noisy runs (seed {args.seed}, "
          f"noise scale {args.noise_scale}):")
    print(f"{'policy':>6}  {'mean cost':>12}  {'ms/step':>8}  "
          f"{'violations':>10}  {'exits':>5}")
    for kind, mc in outcomes.items():
        viol = (mc.total("state_violations") + mc.total("input_violations")
                + mc.total("infeasible_events"))
        print(f"{kind:>6}  {mc.mean_cost:>12.4f}  "
              f"{mc.mean_step_time * 1e3:>8.2f}  {viol:>10}  "
              f"{mc.total('exit_events'):>5}")
    lmpc, safe = outcomes["lmpc"], outcomes["safe"]
    print(f"\nsafe-policy cost premium: "
          f"{100.0 * (safe.mean_cost / lmpc.mean_cost - 1.0):+.2f}%  |  "
          f"planner per-step time multiple: "
          f"{lmpc.mean_step_time / safe.mean_step_time:.0f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
