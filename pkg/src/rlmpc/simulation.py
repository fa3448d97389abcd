"""Closed-loop rollouts, the learning loop and Monte-Carlo studies.

A data iteration rolls the planner along a realized trajectory, recording
one scenario tree per time step; folding those trees into the safe set
closes the learning loop.  Iteration 0 has no usable safe set away from
the terminal set, so it is seeded differently: a single long-horizon
robust feedback plan is solved once, and its forward reachable sets --
layer by layer, pruned to their hull vertices -- are recorded as columns
with a backward value recursion, exactly mirroring the tree construction
but over the pruned layers.

Disturbance sampling is seeded and paired: a run draws from the nominal
disturbance set and multiplies by a scale factor, so runs with the same
seed and different scales see proportional disturbance sequences.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import safe_set as ssm
from .lmpc import (AllInfeasibleError, FeedbackPlan, lmpc_step,
                   solve_long_horizon_feedback)
from .polytope import Polytope
from .roa import select_initial_condition
from .safe_set import SafeSet, ScenarioTree, initial_safe_set
from .system import StageCost, SystemModel, TerminalPair


class DisturbanceSampler:
    """Uniform draws from a polytopic disturbance set, times a scale.

    Boxes are sampled coordinate-wise; a singleton returns its point;
    anything else falls back to rejection from the bounding box.
    """

    def __init__(self, w_set: Polytope, seed, scale: float = 1.0):
        self.w_set = w_set
        self.scale = float(scale)
        self.rng = np.random.default_rng(seed)
        self._bounds = w_set.bounding_box()
        corners = Polytope(np.array(np.meshgrid(
            *[self._bounds[i] for i in range(w_set.dim)],
            indexing="ij")).reshape(w_set.dim, -1).T)
        self._is_box = w_set.num_vertices == 1 or w_set.matches(corners, 1e-12)

    def sample(self) -> np.ndarray:
        if self.w_set.num_vertices == 1:
            return self.scale * self.w_set.vertices[0]
        if self._is_box:
            draw = self.rng.uniform(self._bounds[:, 0], self._bounds[:, 1])
            return self.scale * draw
        for _ in range(10000):
            draw = self.rng.uniform(self._bounds[:, 0], self._bounds[:, 1])
            if self.w_set.contains(draw, tol=1e-9):
                return self.scale * draw
        raise RuntimeError("rejection sampling budget exhausted")


@dataclass
class IterationRecord:
    """Closed-loop record of one data iteration."""

    iteration: int
    mode: str
    states: np.ndarray
    inputs: np.ndarray
    disturbances: np.ndarray
    stage_costs: np.ndarray
    planner_values: np.ndarray
    terminal_distances: np.ndarray
    trees: list[ScenarioTree] = field(repr=False)
    mean_step_time: float = 0.0

    @property
    def duration(self) -> int:
        return self.states.shape[0] - 1

    @property
    def cost(self) -> float:
        return float(np.sum(self.stage_costs))


def run_iteration(model: SystemModel, prev: SafeSet, cost: StageCost,
                  pair: TerminalPair, x0, horizon: int, *, t_max: int = 50,
                  eps_stop: float = 1e-3, mode: str = "certainty-equivalent",
                  seed=0, noise_scale: float = 1.0, jobs: int = 1,
                  record_trees: bool = True) -> IterationRecord:
    """Roll the planner from x0 until the state reaches the eps_stop
    neighborhood of the terminal set (or t_max steps).

    The final step still solves and records a tree, so a run of duration T
    contributes T+1 trees; its last input is computed but never applied.
    A negative eps_stop disables early stopping.
    """
    sampler = DisturbanceSampler(model.disturbance_set, seed, noise_scale)
    x = np.asarray(x0, dtype=float)
    states, inputs, dists = [], [], []
    stage_costs, planner_values, terminal_distances = [], [], []
    trees = []
    step_times = []
    for t in range(t_max + 1):
        gap = pair.terminal_set.distance(x, cost.norm_mode)
        t0 = time.perf_counter()
        policy = lmpc_step(model, prev, cost, pair, x, horizon,
                           root_time=t, jobs=jobs)
        step_times.append(time.perf_counter() - t0)
        u = policy.input_at(0, [])
        if record_trees:
            trees.append(policy.scenario_tree(model))
        states.append(x)
        inputs.append(u)
        stage_costs.append(cost.value(pair, x, u))
        planner_values.append(policy.objective)
        terminal_distances.append(gap)
        if gap <= eps_stop or t == t_max:
            break
        w = (np.zeros(model.n) if mode == "certainty-equivalent"
             else sampler.sample())
        dists.append(w)
        x = model.successor(x, u, w)
    return IterationRecord(
        iteration=prev.iteration, mode=mode,
        states=np.vstack(states), inputs=np.vstack(inputs),
        disturbances=(np.vstack(dists) if dists
                      else np.zeros((0, model.n))),
        stage_costs=np.asarray(stage_costs),
        planner_values=np.asarray(planner_values),
        terminal_distances=np.asarray(terminal_distances),
        trees=trees, mean_step_time=float(np.mean(step_times)))


# ----------------------------------------------------------------------
# seeding iteration
# ----------------------------------------------------------------------

def _plan_layers(model: SystemModel, plan: FeedbackPlan):
    """Forward reachable layers of a feedback plan, pruned to their hull
    vertices, with the plan input at each kept node."""
    w_verts = model.disturbance_set.vertices
    layers = [[(plan.root_state, ())]]
    layer_inputs = []
    for k in range(plan.horizon):
        inputs = {}
        candidates = []
        for state, path in layers[k]:
            u = plan.feedforward[k].copy()
            for s in range(k):
                u += plan.gains[(k, s)] @ w_verts[path[s]]
            inputs[path] = u
            base = model.a @ state + model.b @ u
            candidates.extend((base + w, path + (j,))
                              for j, w in enumerate(w_verts))
        hull = Polytope(np.vstack([c[0] for c in candidates]))
        kept = []
        for v in hull.vertices:
            for state, path in candidates:
                if np.max(np.abs(state - v)) <= 1e-9:
                    kept.append((state, path))
                    break
            else:
                raise RuntimeError("hull vertex lost its generating node")
        layer_inputs.append(inputs)
        layers.append(kept)
    return layers, layer_inputs


def seed_iteration(model: SystemModel, init: SafeSet, cost: StageCost,
                   pair: TerminalPair, x0, boot_horizon: int, *,
                   eps_stop: float = 1e-3, mode: str = "certainty-equivalent",
                   seed=0, noise_scale: float = 1.0
                   ) -> tuple[SafeSet, IterationRecord]:
    """Iteration 0: one long-horizon robust feedback plan seeds the safe
    set with its pruned reachable layers and a backward value recursion;
    the returned record is the plan rolled out closed loop."""
    plan = solve_long_horizon_feedback(model, pair, cost, x0, boot_horizon)
    layers, layer_inputs = _plan_layers(model, plan)

    # backward values over the layers; the terminal layer sits inside the
    # terminal set, so its values come from the initial safe set (zero)
    values = [None] * (boot_horizon + 1)
    values[-1] = []
    for state, _path in layers[-1]:
        q = init.q_value(state)
        if not q.feasible:
            raise ssm.TreeDataError("terminal layer escapes the terminal set")
        values[-1].append(q.value)
    for k in range(boot_horizon - 1, -1, -1):
        pts = np.vstack([s for s, _ in layers[k + 1]])
        vals = np.asarray(values[k + 1])
        values[k] = []
        for state, path in layers[k]:
            u = layer_inputs[k][path]
            stage = cost.value(pair, state, u)
            succ = model.a @ state + model.b @ u
            values[k].append(stage + ssm._interpolation_lp(pts, vals, succ))

    states = [init.states]
    inputs = [init.inputs]
    costs = [init.costs]
    provenance = list(init.provenance)
    for k in range(boot_horizon):
        for idx, (state, path) in enumerate(layers[k]):
            states.append(state.reshape(1, -1))
            inputs.append(layer_inputs[k][path].reshape(1, -1))
            provenance.append((init.iteration, 0, k, idx))
        costs.append(np.asarray(values[k]))
    seeded = SafeSet(states=np.vstack(states), inputs=np.vstack(inputs),
                     costs=np.concatenate(costs),
                     iteration=init.iteration + 1,
                     provenance=tuple(provenance))
    record = _rollout_plan(model, cost, pair, plan, eps_stop=eps_stop,
                           mode=mode, seed=seed, noise_scale=noise_scale)
    return seeded, record


def _rollout_plan(model, cost, pair, plan: FeedbackPlan, *, eps_stop, mode,
                  seed, noise_scale) -> IterationRecord:
    sampler = DisturbanceSampler(model.disturbance_set, seed, noise_scale)
    ce = mode == "certainty-equivalent"
    nominal_tail = np.concatenate([
        np.cumsum([cost.value(pair, s, u) for s, u in
                   zip(plan.nominal_states[::-1][1:],
                       plan.nominal_inputs[::-1])])[::-1], [0.0]])
    x = plan.root_state.copy()
    states, inputs, dists = [], [], []
    stage_costs, planner_values, terminal_distances = [], [], []
    hist = []
    for t in range(plan.horizon + 1):
        gap = pair.terminal_set.distance(x, cost.norm_mode)
        u = (plan.input_at(t, hist) if t < plan.horizon
             else pair.gain @ x)
        states.append(x)
        inputs.append(u)
        stage_costs.append(cost.value(pair, x, u))
        planner_values.append(nominal_tail[t] if ce else
                              (plan.objective if t == 0 else np.nan))
        terminal_distances.append(gap)
        if gap <= eps_stop or t == plan.horizon:
            break
        w = np.zeros(model.n) if ce else sampler.sample()
        hist.append(w)
        dists.append(w)
        x = model.successor(x, u, w)
    return IterationRecord(
        iteration=0, mode=mode, states=np.vstack(states),
        inputs=np.vstack(inputs),
        disturbances=(np.vstack(dists) if dists else np.zeros((0, model.n))),
        stage_costs=np.asarray(stage_costs),
        planner_values=np.asarray(planner_values),
        terminal_distances=np.asarray(terminal_distances), trees=[])


# ----------------------------------------------------------------------
# learning loop
# ----------------------------------------------------------------------

@dataclass
class LearningConfig:
    horizon: int = 3
    iterations: int = 5
    schedule: str = "fixed-x0"  # or "enlargement"
    x0: np.ndarray | None = None
    mode: str = "certainty-equivalent"  # or "noisy"
    t_max: int = 50
    eps_stop: float = 1e-3
    bootstrap_horizon: int = 20
    prune: bool = False
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.schedule not in ("fixed-x0", "enlargement"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "fixed-x0" and self.x0 is None:
            raise ValueError("fixed-x0 schedule needs a start state")
        if self.mode not in ("certainty-equivalent", "noisy"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class LearningResult:
    """Safe sets indexed 0..iterations (0 is the terminal pair alone) and
    one closed-loop record per data iteration."""

    safe_sets: list[SafeSet]
    records: list[IterationRecord]
    start_states: list[np.ndarray]


def run_learning_loop(model: SystemModel, cost: StageCost, pair: TerminalPair,
                      cfg: LearningConfig,
                      on_iteration=None) -> LearningResult:
    """Seed, then iterate: plan, roll out, fold the recorded trees in.

    Iteration 0 always goes through the long-horizon seeding plan; the
    enlargement schedule picks each start state as the extreme reachable
    state along the sign-alternating first coordinate.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.iterations)
    current = initial_safe_set(pair)
    safe_sets = [current]
    records: list[IterationRecord] = []
    start_states: list[np.ndarray] = []
    for j in range(cfg.iterations):
        if cfg.schedule == "fixed-x0":
            x0 = np.asarray(cfg.x0, dtype=float)
        else:
            x0 = select_initial_condition(model, current, cost, pair,
                                          cfg.horizon, iteration=j)
        start_states.append(x0)
        if j == 0:
            nxt, record = seed_iteration(
                model, current, cost, pair, x0, cfg.bootstrap_horizon,
                eps_stop=cfg.eps_stop, mode=cfg.mode, seed=seeds[j])
        else:
            record = run_iteration(
                model, current, cost, pair, x0, cfg.horizon,
                t_max=cfg.t_max, eps_stop=cfg.eps_stop, mode=cfg.mode,
                seed=seeds[j], jobs=cfg.jobs)
            nxt = ssm.extend(current, record.trees, cost, pair, model)
        if cfg.prune:
            nxt = ssm.prune(nxt)
        safe_sets.append(nxt)
        records.append(record)
        current = nxt
        if on_iteration is not None:
            on_iteration(j, record, nxt)
    return LearningResult(safe_sets=safe_sets, records=records,
                          start_states=start_states)


# ----------------------------------------------------------------------
# Monte-Carlo studies
# ----------------------------------------------------------------------

@dataclass
class RunStats:
    cost: float
    duration: int
    mean_step_time: float
    state_violations: int
    input_violations: int
    exit_events: int
    infeasible_events: int
    terminal_distance: float


@dataclass
class MonteCarloResult:
    kind: str
    runs: list[RunStats]
    states: list[np.ndarray] = field(repr=False, default_factory=list)

    @property
    def mean_cost(self) -> float:
        return float(np.mean([r.cost for r in self.runs]))

    @property
    def mean_step_time(self) -> float:
        return float(np.mean([r.mean_step_time for r in self.runs]))

    def total(self, name: str) -> int:
        return int(sum(getattr(r, name) for r in self.runs))


def _check_violations(model, x, u, tol=1e-6):
    sx = 0 if model.state_set.contains(x, tol) else 1
    su = 0 if model.input_set.contains(u, tol) else 1
    return sx, su


def _safe_policy_run(model, ss, cost, pair, x0, *, t_max, eps_stop, sampler):
    x = np.asarray(x0, dtype=float)
    stats = RunStats(0.0, 0, 0.0, 0, 0, 0, 0, 0.0)
    states = [x]
    step_times = []
    total = 0.0
    for t in range(t_max + 1):
        gap = pair.terminal_set.distance(x, cost.norm_mode)
        stats.duration = t
        stats.terminal_distance = gap
        t0 = time.perf_counter()
        q = ss.q_value(x)
        if not q.feasible:
            stats.exit_events += 1
            break
        u = ss.inputs.T @ q.weights
        step_times.append(time.perf_counter() - t0)
        sx, su = _check_violations(model, x, u)
        stats.state_violations += sx
        stats.input_violations += su
        total += cost.value(pair, x, u)
        if gap <= eps_stop or t == t_max:
            break
        x = model.successor(x, u, sampler.sample())
        states.append(x)
    stats.cost = total
    stats.mean_step_time = float(np.mean(step_times)) if step_times else 0.0
    return stats, np.vstack(states)


def _lmpc_run(model, ss, cost, pair, x0, *, horizon, t_max, eps_stop,
              sampler_seed, noise_scale, jobs):
    try:
        rec = run_iteration(model, ss, cost, pair, x0, horizon, t_max=t_max,
                            eps_stop=eps_stop, mode="noisy", seed=sampler_seed,
                            noise_scale=noise_scale, jobs=jobs,
                            record_trees=False)
    except AllInfeasibleError:
        return RunStats(np.nan, 0, 0.0, 0, 0, 0, 1, np.nan), np.zeros((0, model.n))
    sx = sum(0 if model.state_set.contains(x) else 1 for x in rec.states)
    su = sum(0 if model.input_set.contains(u, 1e-6) else 1 for u in rec.inputs)
    return RunStats(rec.cost, rec.duration, rec.mean_step_time, sx, su, 0, 0,
                    float(rec.terminal_distances[-1])), rec.states


def monte_carlo(model: SystemModel, ss: SafeSet, cost: StageCost,
                pair: TerminalPair, kind: str, runs: int, seed: int, *,
                horizon: int = 3, t_max: int = 30, eps_stop: float = 1e-3,
                x0=None, noise_scale: float = 1.0,
                jobs: int = 1) -> MonteCarloResult:
    """Seeded study of the planner ("lmpc") or the stored-column policy
    ("safe") under sampled disturbances.

    Start states are either fixed (`x0`) or drawn per run as uniform
    simplex mixtures of the safe-set columns.  Seeding is paired: run r
    uses the r-th spawn of the root seed for both policies and all scales.
    """
    if kind not in ("lmpc", "safe"):
        raise ValueError(f"unknown policy kind {kind!r}")
    root = np.random.SeedSequence(seed)
    run_seeds = root.spawn(2 * runs)
    out = MonteCarloResult(kind=kind, runs=[])
    for r in range(runs):
        if x0 is None:
            rng = np.random.default_rng(run_seeds[2 * r])
            weights = rng.dirichlet(np.ones(ss.num_columns))
            start = ss.states.T @ weights
        else:
            start = np.asarray(x0, dtype=float)
        if kind == "safe":
            sampler = DisturbanceSampler(model.disturbance_set,
                                         run_seeds[2 * r + 1], noise_scale)
            stats, states = _safe_policy_run(model, ss, cost, pair, start,
                                             t_max=t_max, eps_stop=eps_stop,
                                             sampler=sampler)
        else:
            stats, states = _lmpc_run(model, ss, cost, pair, start,
                                      horizon=horizon, t_max=t_max,
                                      eps_stop=eps_stop,
                                      sampler_seed=run_seeds[2 * r + 1],
                                      noise_scale=noise_scale, jobs=jobs)
        out.runs.append(stats)
        out.states.append(states)
    return out
