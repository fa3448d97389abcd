"""End-to-end acceptance suite on the double-integrator benchmark.

Each test checks one published claim about the learning controller and
records a one-line PASS/FAIL verdict (printed after the run).  The two
study fixtures are deliberately the shipped configurations: a fixed-start
certainty-equivalent study for the cost/Q-function claims and a noisy
domain-enlargement study for the nesting claims.  Expect several minutes
of runtime; every planner step is a sweep of scenario programs.
"""

import time

import numpy as np
import pytest
from scipy.optimize import linprog

from rlmpc import (LearningConfig, SafeSet, StageCost, SystemModel,
                   approximate_roa, box, extend, lmpc_step, monte_carlo,
                   run_iteration, run_learning_loop, synthesize_terminal_pair,
                   verify_terminal_pair)

START = [5.656, 0.0]


@pytest.fixture(scope="module")
def fixed_study(di_model, di_cost, di_pair):
    cfg = LearningConfig(horizon=3, iterations=5, schedule="fixed-x0",
                         x0=START, mode="certainty-equivalent", t_max=50,
                         prune=True, seed=0)
    return run_learning_loop(di_model, di_cost, di_pair, cfg)


@pytest.fixture(scope="module")
def enlarge_study(di_model, di_cost, di_pair):
    cfg = LearningConfig(horizon=3, iterations=12, schedule="enlargement",
                         mode="noisy", t_max=50, prune=True, seed=7)
    return run_learning_loop(di_model, di_cost, di_pair, cfg)


@pytest.fixture(scope="module")
def noisy_plan_mc(di_model, di_cost, di_pair, fixed_study):
    return monte_carlo(di_model, fixed_study.safe_sets[-1], di_cost, di_pair,
                       kind="lmpc", runs=100, seed=2024, horizon=3,
                       t_max=30, x0=START)


def _spread_sample(rng, ss):
    """Random hull point with 3-column support; unlike a full-support
    mixture it also lands near the boundary."""
    cols = rng.choice(ss.num_columns, size=3, replace=False)
    return ss.states[cols].T @ rng.dirichlet(np.ones(3))


def test_terminal_pair_is_robust_invariant(di_model, criterion):
    t0 = time.perf_counter()
    pair = synthesize_terminal_pair(di_model)
    elapsed = time.perf_counter() - t0
    report = verify_terminal_pair(di_model, pair, tol=1e-6)
    ok = report.ok and elapsed < 1.0
    criterion(1, ok, f"{pair.terminal_set.num_vertices}-vertex terminal set "
                     f"synthesized+verified in {elapsed:.2f}s (tol 1e-6)")
    assert ok, report


def test_extension_column_count(di_model, di_cost, di_pair, fixed_study,
                                criterion):
    prev = fixed_study.safe_sets[1]
    rec = run_iteration(di_model, prev, di_cost, di_pair, START, 3,
                        t_max=10, eps_stop=-1.0)
    assert rec.duration == 10 and len(rec.trees) == 11
    grown = extend(prev, rec.trees, di_cost, di_pair, di_model)
    new = grown.num_columns - prev.num_columns
    ok = new == 231  # (T+1) * (1 + 4 + 16) internal nodes
    criterion(2, ok, f"duration-10 iteration added {new} columns "
                     f"(11 trees x 21 internal nodes)")
    assert ok


def test_iteration_cost_bounded_by_q(di_model, di_cost, di_pair, fixed_study,
                                     criterion):
    ss = fixed_study.safe_sets[1]
    rng = np.random.default_rng(3)
    worst = -np.inf
    for _ in range(50):
        x0 = _spread_sample(rng, ss)
        q = ss.q_value(x0)
        assert q.feasible
        rec = run_iteration(di_model, ss, di_cost, di_pair, x0, 3)
        slack = rec.cost - q.value - 1e-4 * (1.0 + q.value)
        worst = max(worst, slack)
    ok = worst <= 0.0
    criterion(3, ok, f"50 rollouts from sampled starts; worst "
                     f"cost-vs-Q margin {worst:+.2e}")
    assert ok


def test_fixed_start_costs_settle(fixed_study, criterion):
    costs = [r.cost for r in fixed_study.records]
    steps = np.diff(costs)
    rel = abs(costs[-1] - costs[-2]) / abs(costs[-2])
    # non-increase up to planner solve noise, well below any real step
    ok = bool(np.all(steps <= 1e-4) and rel <= 1e-3)
    criterion(4, ok, f"costs {np.round(costs, 5).tolist()}, max step "
                     f"{np.max(steps):+.1e}, last-two rel {rel:.1e}")
    assert ok


def test_q_function_never_increases(fixed_study, criterion):
    worst = -np.inf
    checked = 0
    ok = True
    for prev, nxt in zip(fixed_study.safe_sets[:-1], fixed_study.safe_sets[1:]):
        bb = prev.hull.bounding_box()
        for x in np.linspace(bb[0, 0], bb[0, 1], 20):
            for y in np.linspace(bb[1, 0], bb[1, 1], 20):
                qp = prev.q_value(np.array([x, y]))
                if not qp.feasible:
                    continue
                qn = nxt.q_value(np.array([x, y]))
                ok = ok and qn.feasible
                worst = max(worst, qn.value - qp.value)
                checked += 1
    ok = ok and worst <= 1e-6 and checked > 0
    criterion(5, ok, f"{checked} feasible grid points over 5 iteration "
                     f"pairs; max Q increase {worst:+.1e}")
    assert ok


def test_noisy_planner_rollouts_stay_feasible(noisy_plan_mc, criterion):
    infeasible = noisy_plan_mc.total("infeasible_events")
    sx = noisy_plan_mc.total("state_violations")
    su = noisy_plan_mc.total("input_violations")
    ok = infeasible == 0 and sx == 0 and su == 0
    criterion(6, ok, f"100 noisy rollouts: {infeasible} infeasible, "
                     f"{sx} state / {su} input violations")
    assert ok


def test_safe_policy_certificates(di_model, di_cost, di_pair, fixed_study,
                                  criterion):
    ss = fixed_study.safe_sets[-1]
    hull = ss.hull
    rng = np.random.default_rng(7)
    contained = True
    worst_bellman = -np.inf
    for _ in range(200):
        x = _spread_sample(rng, ss)
        q = ss.q_value(x)
        u = ss.inputs.T @ q.weights
        succ = di_model.a @ x + di_model.b @ u
        for w in di_model.disturbance_set.vertices:
            contained = contained and hull.contains(succ + w, tol=1e-6)
        gap = di_cost.value(di_pair, x, u) + ss.q_value(succ).value - q.value
        worst_bellman = max(worst_bellman, gap)
    mc = monte_carlo(di_model, ss, di_cost, di_pair, kind="safe", runs=1000,
                     seed=77, t_max=30)
    exits = mc.total("exit_events")
    ok = contained and worst_bellman <= 1e-6 and exits == 0
    criterion(7, ok, f"200 states: successors contained={contained}, worst "
                     f"Bellman slack {worst_bellman:+.1e}; 1000-run safe "
                     f"policy exits={exits}")
    assert ok


def test_planner_value_decreases_along_rollouts(fixed_study, criterion):
    worst = -np.inf
    for rec in fixed_study.records:
        v, h = rec.planner_values, rec.stage_costs
        for t in range(rec.duration):
            worst = max(worst, v[t + 1] - v[t] + h[t])
    ok = worst <= 1e-5
    criterion(8, ok, f"worst one-step value increase vs stage-cost "
                     f"decrease {worst:+.1e} over 5 rollouts")
    assert ok


def test_safe_sets_and_reach_regions_nest(di_model, di_cost, di_pair,
                                          enlarge_study, criterion):
    sets = enlarge_study.safe_sets
    cols_ok = all(
        all(nxt.hull.contains(s, tol=1e-6) for s in prev.states)
        for prev, nxt in zip(sets[:-1], sets[1:]))
    regions = [approximate_roa(di_model, s, di_cost, di_pair, 3,
                               directions=16).region for s in sets]
    roa_ok = all(
        all(nxt.contains(v, tol=1e-6) for v in prev.vertices)
        for prev, nxt in zip(regions[:-1], regions[1:]))
    first, last = regions[0].bounding_box(), regions[-1].bounding_box()
    ok = cols_ok and roa_ok
    criterion(9, ok, f"12 noisy enlargement iterations: columns nested "
                     f"{cols_ok}, reach regions nested {roa_ok} "
                     f"(x-extent {first[0, 1]:.2f} -> {last[0, 1]:.2f})")
    assert ok


def test_safe_policy_is_faster_but_costlier(di_model, di_cost, di_pair,
                                            fixed_study, noisy_plan_mc,
                                            criterion):
    safe = monte_carlo(di_model, fixed_study.safe_sets[-1], di_cost, di_pair,
                       kind="safe", runs=100, seed=2024, t_max=30, x0=START)
    faster = safe.mean_step_time < noisy_plan_mc.mean_step_time
    costlier = safe.mean_cost >= noisy_plan_mc.mean_cost
    ok = faster and costlier
    criterion(10, ok,
              f"per step {safe.mean_step_time * 1e3:.1f} ms (safe) vs "
              f"{noisy_plan_mc.mean_step_time * 1e3:.0f} ms (planner); mean "
              f"cost {safe.mean_cost:.1f} vs {noisy_plan_mc.mean_cost:.1f}")
    assert ok


def _nominal_mpc_oracle(x0, horizon, col_states, col_costs, q_weight,
                        r_weight, u_max, x_max):
    """Dense-matrix LP for the disturbance-free problem: exact dynamics,
    stage cost q|x| + r|u| via absolute-value epigraphs, terminal cost
    interpolated over the given columns."""
    nx, nu, m = horizon + 1, horizon, len(col_costs)
    # z = [x (nx), u (nu), tx (nu), tu (nu), lam (m)]
    dim = nx + 3 * nu + m
    sl_x = slice(0, nx)
    sl_u = slice(nx, nx + nu)
    sl_tx = slice(nx + nu, nx + 2 * nu)
    sl_tu = slice(nx + 2 * nu, nx + 3 * nu)
    sl_lam = slice(nx + 3 * nu, dim)

    a_eq = np.zeros((horizon + 2, dim))
    b_eq = np.zeros(horizon + 2)
    for k in range(horizon):  # x_{k+1} = x_k + u_k
        a_eq[k, sl_x.start + k] = 1.0
        a_eq[k, sl_x.start + k + 1] = -1.0
        a_eq[k, sl_u.start + k] = 1.0
    a_eq[horizon, sl_lam] = 1.0
    b_eq[horizon] = 1.0
    a_eq[horizon + 1, sl_lam] = col_states
    a_eq[horizon + 1, sl_x.start + horizon] = -1.0

    a_ub = np.zeros((4 * nu, dim))
    for k in range(nu):  # |x_k| <= tx_k, |u_k| <= tu_k
        a_ub[4 * k, sl_x.start + k] = 1.0
        a_ub[4 * k, sl_tx.start + k] = -1.0
        a_ub[4 * k + 1, sl_x.start + k] = -1.0
        a_ub[4 * k + 1, sl_tx.start + k] = -1.0
        a_ub[4 * k + 2, sl_u.start + k] = 1.0
        a_ub[4 * k + 2, sl_tu.start + k] = -1.0
        a_ub[4 * k + 3, sl_u.start + k] = -1.0
        a_ub[4 * k + 3, sl_tu.start + k] = -1.0

    c = np.zeros(dim)
    c[sl_tx] = q_weight
    c[sl_tu] = r_weight
    c[sl_lam] = col_costs
    bounds = ([(x0, x0)] + [(-x_max, x_max)] * horizon
              + [(-u_max, u_max)] * nu + [(0, None)] * (2 * nu)
              + [(0, None)] * m)
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(4 * nu), A_eq=a_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    assert res.status == 0, res.message
    return res.fun


def test_disturbance_free_planner_matches_nominal_mpc(int_cost, criterion):
    model = SystemModel(np.array([[1.0]]), np.array([[1.0]]),
                        state_set=box(4.0, 1), input_set=box(1.0, 1),
                        disturbance_set=box(0.0, 1))
    pair = synthesize_terminal_pair(model)
    assert pair.terminal_set.num_vertices == 1  # no noise: O is the origin
    ladder = SafeSet(
        states=np.array([[-2.0], [-1.0], [0.0], [1.0], [2.0]]),
        inputs=np.array([[1.0], [0.6], [0.0], [-0.6], [-1.0]]),
        costs=np.array([9.0, 3.2, 0.0, 3.2, 9.0]), iteration=1,
        provenance=tuple((0, 0, 0, k) for k in range(5)))
    worst = 0.0
    for x0 in [2.5, -1.7, 0.9, 3.3, -3.0]:
        policy = lmpc_step(model, ladder, int_cost, pair, [x0], 3)
        oracle = _nominal_mpc_oracle(
            x0, 3, ladder.states[:, 0], ladder.costs,
            int_cost.state_weight, int_cost.input_weight, 1.0, 4.0)
        worst = max(worst, abs(policy.objective - oracle))
    ok = worst <= 1e-6
    criterion(11, ok, f"5 start states; max |planner - nominal-MPC oracle| "
                      f"= {worst:.1e}")
    assert ok


def test_terminal_gap_shrinks_with_disturbance_scale(di_model, di_cost,
                                                     di_pair, fixed_study,
                                                     criterion):
    ss = fixed_study.safe_sets[-1]
    scales = [1.0, 0.5, 0.1, 0.0]
    means = []
    for scale in scales:
        gaps = []
        for seed in (11, 12, 13):
            rec = run_iteration(di_model, ss, di_cost, di_pair, START, 3,
                                t_max=50, eps_stop=-1.0, mode="noisy",
                                seed=seed, noise_scale=scale,
                                record_trees=False)
            gaps.append(rec.terminal_distances[-1])
        means.append(float(np.mean(gaps)))
    ok = (all(means[i + 1] <= means[i] for i in range(3))
          and means[-1] <= 1e-3)
    criterion(12, ok, "mean 50-step terminal gap by scale "
                      + " >= ".join(f"{m:.2e}" for m in means))
    assert ok
