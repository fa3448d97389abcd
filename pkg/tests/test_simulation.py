"""Closed-loop rollouts, the learning loop, and Monte-Carlo studies.

The scalar plant from conftest keeps every planner call a small LP, so
these tests exercise the full loop (seeding plan, tree recording, safe-set
extension, paired sampling) in well under a minute.
"""

import numpy as np
import pytest

from rlmpc import (DisturbanceSampler, LearningConfig, Polytope, box,
                   initial_safe_set, monte_carlo, run_iteration,
                   run_learning_loop, seed_iteration)


# ----------------------------------------------------------------------
# disturbance sampling
# ----------------------------------------------------------------------

def test_sampler_is_deterministic_per_seed():
    w = box(0.1, 2)
    a = DisturbanceSampler(w, seed=9)
    b = DisturbanceSampler(w, seed=9)
    draws_a = np.array([a.sample() for _ in range(10)])
    draws_b = np.array([b.sample() for _ in range(10)])
    assert np.array_equal(draws_a, draws_b)
    c = DisturbanceSampler(w, seed=10)
    assert not np.array_equal(draws_a, np.array([c.sample() for _ in range(10)]))


def test_sampler_scale_pairs_draws_exactly():
    w = box(0.1, 2)
    full = DisturbanceSampler(w, seed=5, scale=1.0)
    half = DisturbanceSampler(w, seed=5, scale=0.5)
    for _ in range(5):
        assert np.array_equal(half.sample(), 0.5 * full.sample())


def test_sampler_draws_stay_inside_the_box():
    w = box(0.1, 2)
    s = DisturbanceSampler(w, seed=1)
    for _ in range(50):
        assert np.max(np.abs(s.sample())) <= 0.1
    zero = DisturbanceSampler(w, seed=1, scale=0.0)
    assert np.array_equal(zero.sample(), np.zeros(2))


def test_sampler_singleton_set():
    s = DisturbanceSampler(box(0.0, 2), seed=0)
    assert np.array_equal(s.sample(), np.zeros(2))


def test_sampler_rejects_outside_a_triangle():
    tri = Polytope([[-0.1, -0.1], [0.1, -0.1], [0.0, 0.1]])
    s = DisturbanceSampler(tri, seed=2)
    draws = np.array([s.sample() for _ in range(50)])
    for d in draws:
        assert tri.contains(d, tol=1e-9)
    # corners of the bounding box are cut off, so rejection really ran
    assert not tri.matches(Polytope(
        np.array(np.meshgrid([-0.1, 0.1], [-0.1, 0.1])).reshape(2, -1).T))


# ----------------------------------------------------------------------
# single data iteration
# ----------------------------------------------------------------------

def test_iteration_from_inside_the_terminal_set_stops_at_once(
        di_model, di_cost, di_pair):
    seed_set = initial_safe_set(di_pair)
    rec = run_iteration(di_model, seed_set, di_cost, di_pair, [0.0, 0.0],
                        horizon=2)
    assert rec.duration == 0
    assert rec.states.shape == (1, 2)
    assert len(rec.trees) == 1  # the final step still plans
    assert rec.disturbances.shape == (0, 2)
    assert rec.terminal_distances[0] == 0.0
    assert rec.planner_values[0] <= 1e-5
    assert rec.cost == pytest.approx(float(np.sum(rec.stage_costs)))
    assert rec.iteration == seed_set.iteration == 0
    assert rec.mode == "certainty-equivalent"


def test_negative_eps_stop_runs_to_t_max(int_model, int_cost, int_pair):
    seed_set = initial_safe_set(int_pair)
    rec = run_iteration(int_model, seed_set, int_cost, int_pair, [0.5],
                        horizon=2, t_max=6, eps_stop=-1.0)
    assert rec.duration == 6
    assert rec.states.shape == (7, 1)
    assert len(rec.trees) == 7
    assert rec.disturbances.shape == (6, 1)
    assert np.array_equal(rec.disturbances, np.zeros((6, 1)))  # CE rollout
    assert rec.terminal_distances[-1] < rec.terminal_distances[0]


def test_tree_recording_can_be_switched_off(int_model, int_cost, int_pair):
    seed_set = initial_safe_set(int_pair)
    rec = run_iteration(int_model, seed_set, int_cost, int_pair, [0.3],
                        horizon=2, t_max=2, eps_stop=-1.0, record_trees=False)
    assert rec.trees == []


def test_noisy_iteration_reproducible_by_seed(int_model, int_cost, int_pair):
    seed_set = initial_safe_set(int_pair)
    kw = dict(horizon=2, t_max=4, eps_stop=-1.0, mode="noisy",
              record_trees=False)
    a = run_iteration(int_model, seed_set, int_cost, int_pair, [0.5],
                      seed=42, **kw)
    b = run_iteration(int_model, seed_set, int_cost, int_pair, [0.5],
                      seed=42, **kw)
    c = run_iteration(int_model, seed_set, int_cost, int_pair, [0.5],
                      seed=43, **kw)
    assert np.array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)


# ----------------------------------------------------------------------
# seeding iteration
# ----------------------------------------------------------------------

def test_seeding_records_pruned_layers_with_backward_values(
        int_model, int_cost, int_pair):
    init = initial_safe_set(int_pair)
    seeded, rec = seed_iteration(int_model, init, int_cost, int_pair, [2.0],
                                 boot_horizon=8)
    assert seeded.iteration == 1
    # scalar layers prune to at most two hull points each
    assert init.num_columns < seeded.num_columns <= init.num_columns + 1 + 2 * 7
    assert np.array_equal(seeded.states[:init.num_columns], init.states)
    assert seeded.provenance[init.num_columns] == (0, 0, 0, 0)

    root_col = init.num_columns  # layer 0 is the plan root itself
    assert np.array_equal(seeded.states[root_col], np.array([2.0]))
    q = seeded.q_value([2.0])
    assert q.feasible
    assert q.value <= seeded.costs[root_col] + 1e-9

    # the certainty-equivalent rollout follows the nominal plan, so its
    # realized cost is a prefix of the plan's nominal stage-cost sum
    assert rec.iteration == 0
    assert np.array_equal(rec.states[0], np.array([2.0]))
    assert rec.cost <= rec.planner_values[0] + 1e-6
    assert rec.duration <= 8
    assert rec.trees == []


# ----------------------------------------------------------------------
# learning loop
# ----------------------------------------------------------------------

def test_learning_config_validation():
    with pytest.raises(ValueError, match="schedule"):
        LearningConfig(schedule="random-walk", x0=[0.0])
    with pytest.raises(ValueError, match="start state"):
        LearningConfig(schedule="fixed-x0")
    with pytest.raises(ValueError, match="mode"):
        LearningConfig(x0=[0.0], mode="open-loop")


@pytest.fixture(scope="module")
def int_learned(int_model, int_cost, int_pair):
    cfg = LearningConfig(horizon=2, iterations=2, schedule="fixed-x0",
                         x0=[1.5], t_max=8, bootstrap_horizon=6, seed=3)
    return run_learning_loop(int_model, int_cost, int_pair, cfg)


def test_learning_loop_shapes_and_indexing(int_learned):
    assert [ss.iteration for ss in int_learned.safe_sets] == [0, 1, 2]
    assert len(int_learned.records) == 2
    assert [r.iteration for r in int_learned.records] == [0, 1]
    assert all(np.array_equal(s, [1.5]) for s in int_learned.start_states)
    prev, last = int_learned.safe_sets[1], int_learned.safe_sets[2]
    # unpruned extension keeps every earlier column in place
    assert last.num_columns > prev.num_columns
    assert np.array_equal(last.states[:prev.num_columns], prev.states)


def test_learning_loop_cost_does_not_increase(int_learned):
    costs = [r.cost for r in int_learned.records]
    assert costs[1] <= costs[0] + 1e-4


def test_learning_loop_callback_sees_each_iteration(int_model, int_cost,
                                                    int_pair):
    seen = []
    cfg = LearningConfig(horizon=2, iterations=2, schedule="enlargement",
                         t_max=5, bootstrap_horizon=5, seed=1)
    res = run_learning_loop(int_model, int_cost, int_pair, cfg,
                            on_iteration=lambda j, rec, ss: seen.append(j))
    assert seen == [0, 1]
    # enlargement alternates the side it starts from
    assert res.start_states[0][0] < 0.0 < res.start_states[1][0]


# ----------------------------------------------------------------------
# Monte-Carlo studies
# ----------------------------------------------------------------------

def test_monte_carlo_unknown_kind(int_model, int_cost, int_pair,
                                  int_learned):
    with pytest.raises(ValueError, match="kind"):
        monte_carlo(int_model, int_learned.safe_sets[-1], int_cost, int_pair,
                    kind="oracle", runs=1, seed=0)


def test_monte_carlo_is_deterministic(int_model, int_cost, int_pair,
                                      int_learned):
    ss = int_learned.safe_sets[-1]
    kw = dict(kind="safe", runs=3, seed=11, t_max=15)
    a = monte_carlo(int_model, ss, int_cost, int_pair, **kw)
    b = monte_carlo(int_model, ss, int_cost, int_pair, **kw)
    assert [r.cost for r in a.runs] == [r.cost for r in b.runs]
    assert a.kind == "safe" and len(a.runs) == 3
    assert a.total("exit_events") == 0
    assert a.total("state_violations") == 0
    assert a.mean_cost >= 0.0


def test_monte_carlo_pairs_start_states_across_policies(
        int_model, int_cost, int_pair, int_learned):
    ss = int_learned.safe_sets[-1]
    kw = dict(runs=2, seed=7, t_max=8, horizon=2)
    safe = monte_carlo(int_model, ss, int_cost, int_pair, kind="safe", **kw)
    plan = monte_carlo(int_model, ss, int_cost, int_pair, kind="lmpc", **kw)
    for r in range(2):
        assert np.allclose(safe.states[r][0], plan.states[r][0])
    assert plan.total("infeasible_events") == 0
    assert plan.total("state_violations") == 0
