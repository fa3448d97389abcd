"""Scenario-tree optimal control over a learned safe set.

Each planning problem is posed on the complete disturbance-vertex tree of
depth N rooted at the current state.  The policy class is hybrid, indexed
by a split point: before the split, inputs are affine in the realized
disturbances (feedback gains M and feedforward g, strictly causal); from
the split onward each tree node applies the safe-set policy, i.e. its
input is the stored-input interpolation of a simplex certificate that
pins the node state inside the previous safe set.  Leaves carry such a
certificate as a terminal condition.  States and inputs of the feedback
section satisfy the constraint sets robustly by vertex enumeration; the
sections tied to the safe set inherit admissibility from the stored
columns by convexity, so no explicit rows are emitted for them.

The objective is evaluated on the nominal (zero-disturbance) chain: the
sum of stage costs plus the previous Q-function at the nominal terminal
state, embedded through its interpolation weights.  The per-step
controller solves one instance per split and keeps the cheapest,
breaking ties toward the smaller split.

`solve_long_horizon_feedback` poses the same robust constraints for a
pure feedback policy over a long horizon without the tree (constraint
tightening by support functions of the disturbance set), which stays
tractable where the tree would not; it seeds learning from states far
outside the initial safe set.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .polytope import Polytope
from .safe_set import SafeSet, ScenarioTree, TreeLayout
from .solver import ConvexProgram, SolveResult, SolveStatus, Variable
from .system import StageCost, SystemModel, TerminalPair, stage_cost_epigraph


class AllInfeasibleError(RuntimeError):
    """Every split of the planning problem is infeasible: the queried
    state lies outside the controllable set of the current safe set."""

    def __init__(self, message: str, statuses=None):
        super().__init__(message)
        self.statuses = statuses or {}


def _add_membership(prog: ConvexProgram, var: Variable, poly: Polytope,
                    hrep, tag: str) -> None:
    """Constrain var to poly: halfspace rows when available, otherwise a
    simplex certificate over the vertices."""
    if hrep is not None:
        h_mat, h_vec = hrep
        prog.add_inequality([(var, h_mat)], h_vec, label=tag)
        return
    verts = poly.vertices
    cert = prog.new_variable(f"{tag}.cert", verts.shape[0], nonneg=True)
    prog.add_equality([(cert, verts.T), (var, -np.eye(var.dim))],
                      np.zeros(var.dim), label=tag)
    prog.add_equality([(cert, np.ones((1, verts.shape[0])))], 1.0,
                      label=f"{tag}.simplex")


def _gain_coeff(w: np.ndarray, d: int) -> np.ndarray:
    """Coefficient C with C vec(M) = M w for a row-major flattened (d, n)
    gain block."""
    n = w.shape[0]
    c = np.zeros((d, d * n))
    for a in range(d):
        c[a, a * n:(a + 1) * n] = w
    return c


def _hrep_or_none(poly: Polytope):
    return poly.to_halfspaces() if poly.dim <= 2 else None


@dataclass
class _Handles:
    layout: TreeLayout
    node_x: list
    node_u: list
    gains: dict
    feedforward: list
    node_lam: dict
    xbar: list
    ubar: list
    bar_lam: dict
    term_lam: Variable | None


def build_ftocp(model: SystemModel, prev: SafeSet, cost: StageCost,
                pair: TerminalPair, horizon: int, split: int,
                x0=None, roa_direction=None, roa_basis=None
                ) -> tuple[ConvexProgram, _Handles]:
    """Assemble one planning instance.

    With `x0` the root is pinned; with `roa_direction` the root is free,
    constrained to the line spanned by the direction (rows of `roa_basis`
    are zeroed against it) and the objective becomes direction . x_root
    instead of the control cost.
    """
    if not 0 <= split <= horizon:
        raise ValueError("split must lie in 0..horizon")
    roa_mode = roa_direction is not None
    if roa_mode and split == 0:
        raise ValueError("a free root needs a feedback stage")
    w_verts = model.disturbance_set.vertices
    lay = TreeLayout(w_verts.shape[0], horizon)
    n, d = model.n, model.d
    state_h = _hrep_or_none(model.state_set)
    input_h = _hrep_or_none(model.input_set)

    prog = ConvexProgram(f"ftocp.split{split}")
    node_x = [prog.new_variable(f"x[{i}]", n) for i in range(lay.num_nodes)]
    num_internal = lay.offsets[horizon]
    node_u = [prog.new_variable(f"u[{i}]", d) for i in range(num_internal)]

    gains = {(k, s): prog.new_variable(f"M[{k},{s}]", d * n)
             for k in range(1, split) for s in range(k)}
    feedforward = [prog.new_variable(f"g[{k}]", d) for k in range(split)]

    # root
    if roa_mode:
        direction = np.asarray(roa_direction, dtype=float)
        for r, row in enumerate(np.atleast_2d(roa_basis)):
            prog.add_equality([(node_x[0], row.reshape(1, -1))], 0.0,
                              label=f"root.orth{r}")
        prog.add_linear_cost(node_x[0], direction)
    else:
        prog.add_equality([(node_x[0], np.eye(n))],
                          np.asarray(x0, dtype=float), label="root")

    # tree dynamics
    for i in range(num_internal):
        for j in range(lay.branching):
            c = lay.child(i, j)
            prog.add_equality(
                [(node_x[c], np.eye(n)), (node_x[i], -model.a),
                 (node_u[i], -model.b)],
                w_verts[j], label=f"dyn[{i}->{c}]")

    # feedback section: inputs affine in the disturbances along the path,
    # state and input sets enforced robustly node by node
    for k in range(split):
        for i in lay.level(k):
            path = lay.path(i)
            terms = [(node_u[i], np.eye(d)), (feedforward[k], -np.eye(d))]
            terms += [(gains[(k, s)], -_gain_coeff(w_verts[path[s]], d))
                      for s in range(k)]
            prog.add_equality(terms, np.zeros(d), label=f"fb[{i}]")
            _add_membership(prog, node_x[i], model.state_set, state_h,
                            f"X[{i}]")
            _add_membership(prog, node_u[i], model.input_set, input_h,
                            f"U[{i}]")

    # safe-set section: node states certified inside the previous safe
    # set, inputs interpolated from the stored columns
    node_lam, leaf_lam = {}, {}
    for k in range(split, horizon):
        for i in lay.level(k):
            lam = prog.new_variable(f"lam[{i}]", prev.num_columns, nonneg=True)
            prog.add_equality([(lam, prev.states.T), (node_x[i], -np.eye(n))],
                              np.zeros(n), label=f"cert[{i}]")
            prog.add_equality([(lam, np.ones((1, prev.num_columns)))], 1.0,
                              label=f"cert[{i}].simplex")
            prog.add_equality([(node_u[i], np.eye(d)), (lam, -prev.inputs.T)],
                              np.zeros(d), label=f"pol[{i}]")
            node_lam[i] = lam

    # leaves carry a pure membership condition (no input, no cost), so the
    # hull of the stored states -- the same set with far fewer
    # generators -- certifies them
    prev_hull = prev.hull
    leaf_h = _hrep_or_none(prev_hull)
    for i in lay.level(horizon):
        _add_membership(prog, node_x[i], prev_hull, leaf_h, f"cert[{i}]")

    # nominal chain shares the root variables; its tail is tied to the
    # safe set exactly like the tree nodes
    xbar = [node_x[0]] + [prog.new_variable(f"xbar[{k}]", n)
                          for k in range(1, horizon + 1)]
    ubar = [node_u[0]] + [prog.new_variable(f"ubar[{k}]", d)
                          for k in range(1, horizon)]
    bar_lam = {}
    for k in range(horizon):
        prog.add_equality([(xbar[k + 1], np.eye(n)), (xbar[k], -model.a),
                           (ubar[k], -model.b)],
                          np.zeros(n), label=f"nom[{k}]")
        if k == 0:
            continue
        if k < split:
            prog.add_equality([(ubar[k], np.eye(d)),
                               (feedforward[k], -np.eye(d))],
                              np.zeros(d), label=f"nomfb[{k}]")
        else:
            lam = prog.new_variable(f"blam[{k}]", prev.num_columns, nonneg=True)
            prog.add_equality([(lam, prev.states.T), (xbar[k], -np.eye(n))],
                              np.zeros(n), label=f"nomcert[{k}]")
            prog.add_equality([(lam, np.ones((1, prev.num_columns)))], 1.0,
                              label=f"nomcert[{k}].simplex")
            prog.add_equality([(ubar[k], np.eye(d)), (lam, -prev.inputs.T)],
                              np.zeros(d), label=f"nompol[{k}]")
            bar_lam[k] = lam

    term_lam = None
    if not roa_mode:
        for k in range(horizon):
            h_var = stage_cost_epigraph(cost, pair, prog, xbar[k], ubar[k],
                                        tag=f"h[{k}]")
            prog.add_linear_cost(h_var, [1.0])
        term_lam = prog.new_variable("tlam", prev.num_columns, nonneg=True)
        prog.add_equality([(term_lam, prev.states.T),
                           (xbar[horizon], -np.eye(n))],
                          np.zeros(n), label="term")
        prog.add_equality([(term_lam, np.ones((1, prev.num_columns)))], 1.0,
                          label="term.simplex")
        prog.add_linear_cost(term_lam, prev.costs)

    handles = _Handles(lay, node_x, node_u, gains, feedforward, node_lam,
                       xbar, ubar, bar_lam, term_lam)
    return prog, handles


# ----------------------------------------------------------------------
# policies
# ----------------------------------------------------------------------

def _simplex_weights(w: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Minimum-norm simplex weights reproducing w from the vertex rows.

    The minimum-norm choice makes the decomposition unique, and an exact
    vertex always decomposes onto itself (extreme points admit no other
    representation)."""
    m = vertices.shape[0]
    if m == 1:
        if np.max(np.abs(w - vertices[0])) > 1e-9:
            raise ValueError("disturbance outside its set")
        return np.ones(1)
    hits = np.where(np.max(np.abs(vertices - w), axis=1) <= 1e-12)[0]
    if hits.size:
        out = np.zeros(m)
        out[hits[0]] = 1.0
        return out
    prog = ConvexProgram("decompose")
    mu = prog.new_variable("mu", m, nonneg=True)
    prog.add_equality([(mu, vertices.T)], w, label="match")
    prog.add_equality([(mu, np.ones((1, m)))], 1.0, label="simplex")
    prog.add_squared_cost([(mu, np.eye(m))])
    res = prog.solve()
    if res.status is SolveStatus.INFEASIBLE:
        raise ValueError("disturbance outside its set")
    if not res.ok:
        raise RuntimeError(f"decomposition ended with {res.status}")
    return res.value(mu)


@dataclass
class ScenarioPolicy:
    """Solved planning instance, evaluable as an N-step policy.

    `input_at(k, w_history)` maps the disturbances realized before step k
    to the step-k input: the affine feedback law before the split, the
    stored node inputs interpolated by per-step disturbance weights after
    it (the nominal input on an all-zero history)."""

    split: int
    horizon: int
    gains: dict[tuple[int, int], np.ndarray]
    feedforward: np.ndarray
    node_inputs: np.ndarray
    nominal_states: np.ndarray
    nominal_inputs: np.ndarray
    w_vertices: np.ndarray
    root_state: np.ndarray
    root_time: int
    prev_iteration: int
    objective: float
    solve_time: float
    raw: SolveResult = field(repr=False, default=None)

    @property
    def layout(self) -> TreeLayout:
        return TreeLayout(self.w_vertices.shape[0], self.horizon)

    def input_at(self, k: int, w_history) -> np.ndarray:
        if not 0 <= k < self.horizon:
            raise ValueError("step index outside the policy horizon")
        hist = [np.asarray(w, dtype=float) for w in w_history]
        if len(hist) != k:
            raise ValueError(f"step {k} needs exactly {k} realized disturbances")
        if k < self.split:
            u = self.feedforward[k].copy()
            for s in range(k):
                u += self.gains[(k, s)] @ hist[s]
            return u
        if all(np.max(np.abs(w)) <= 1e-12 for w in hist):
            return self.nominal_inputs[k].copy()
        steps = [_simplex_weights(w, self.w_vertices) for w in hist]
        lay = self.layout
        u = np.zeros(self.node_inputs.shape[1])
        for i in lay.level(k):
            weight = 1.0
            for s, j in enumerate(lay.path(i)):
                weight *= steps[s][j]
                if weight == 0.0:
                    break
            if weight > 0.0:
                u += weight * self.node_inputs[i]
        return u

    def scenario_tree(self, model: SystemModel) -> ScenarioTree:
        """Re-expand the solved tree by exact forward recursion, so the
        recorded edges satisfy the dynamics identically."""
        lay = self.layout
        states = np.zeros((lay.num_nodes, model.n))
        states[0] = self.root_state
        for i in range(lay.offsets[self.horizon]):
            base = model.a @ states[i] + model.b @ self.node_inputs[i]
            for j in range(lay.branching):
                states[lay.child(i, j)] = base + self.w_vertices[j]
        return ScenarioTree(states=states,
                            controls=self.node_inputs.copy(),
                            branching=lay.branching, horizon=self.horizon,
                            root_time=self.root_time,
                            iteration=self.prev_iteration)

    def to_dict(self) -> dict:
        return {"split": self.split, "horizon": self.horizon,
                "objective": self.objective,
                "root_state": self.root_state.tolist(),
                "root_time": self.root_time,
                "feedforward": self.feedforward.tolist(),
                "gains": {f"{k},{s}": m.tolist()
                          for (k, s), m in sorted(self.gains.items())},
                "nominal_states": self.nominal_states.tolist(),
                "nominal_inputs": self.nominal_inputs.tolist(),
                "node_inputs": self.node_inputs.tolist()}


def solve_ftocp(model: SystemModel, prev: SafeSet, cost: StageCost,
                pair: TerminalPair, x0, horizon: int, split: int,
                root_time: int = 0) -> tuple[SolveStatus, ScenarioPolicy | None]:
    """Solve one split instance; OPTIMAL comes with the evaluable policy."""
    prog, hd = build_ftocp(model, prev, cost, pair, horizon, split, x0=x0)
    res = prog.solve()
    if not res.ok:
        return res.status, None
    return res.status, _extract_policy(model, res, hd, split, horizon,
                                       np.asarray(x0, dtype=float), root_time,
                                       prev.iteration)


def _extract_policy(model, res, hd, split, horizon, root_state, root_time,
                    prev_iteration) -> ScenarioPolicy:
    n, d = model.n, model.d
    gains = {(k, s): res.value(v).reshape(d, n) for (k, s), v in hd.gains.items()}
    feedforward = (np.vstack([res.value(v) for v in hd.feedforward])
                   if hd.feedforward else np.zeros((0, d)))
    node_inputs = np.vstack([res.value(v) for v in hd.node_u])
    nominal_states = np.vstack([res.value(v) for v in hd.xbar])
    nominal_inputs = np.vstack([res.value(v) for v in hd.ubar])
    return ScenarioPolicy(split=split, horizon=horizon, gains=gains,
                          feedforward=feedforward, node_inputs=node_inputs,
                          nominal_states=nominal_states,
                          nominal_inputs=nominal_inputs,
                          w_vertices=model.disturbance_set.vertices.copy(),
                          root_state=root_state, root_time=root_time,
                          prev_iteration=prev_iteration,
                          objective=float(res.objective),
                          solve_time=res.solve_time, raw=res)


def lmpc_step(model: SystemModel, prev: SafeSet, cost: StageCost,
              pair: TerminalPair, x0, horizon: int, root_time: int = 0,
              jobs: int = 1) -> ScenarioPolicy:
    """Solve all split instances and keep the cheapest policy.

    Ties go to the smaller split.  Raises AllInfeasibleError when every
    split is infeasible, i.e. x0 is outside the controllable set."""
    splits = list(range(horizon + 1))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(
                lambda s: solve_ftocp(model, prev, cost, pair, x0, horizon, s,
                                      root_time), splits))
    else:
        outs = [solve_ftocp(model, prev, cost, pair, x0, horizon, s, root_time)
                for s in splits]
    best = None
    failures = {}
    for s, (status, policy) in zip(splits, outs):
        failures[s] = status
        if policy is not None and (best is None
                                   or policy.objective < best.objective):
            best = policy
    if best is None:
        if any(st is SolveStatus.NUMERICAL_FAILURE for st in failures.values()):
            raise RuntimeError(f"planner failed numerically at {x0}: {failures}")
        raise AllInfeasibleError(
            f"state {np.asarray(x0)} is outside the controllable set",
            statuses=failures)
    return best


# ----------------------------------------------------------------------
# long-horizon pure-feedback program
# ----------------------------------------------------------------------

@dataclass
class FeedbackPlan:
    """Robust feedback policy over a long horizon (no tree): inputs are
    strictly causal affine functions of the realized disturbances and the
    constraints hold for every disturbance sequence."""

    horizon: int
    gains: dict[tuple[int, int], np.ndarray]
    feedforward: np.ndarray
    nominal_states: np.ndarray
    nominal_inputs: np.ndarray
    w_vertices: np.ndarray
    root_state: np.ndarray
    objective: float

    def input_at(self, k: int, w_history) -> np.ndarray:
        hist = [np.asarray(w, dtype=float) for w in w_history]
        if not 0 <= k < self.horizon or len(hist) != k:
            raise ValueError("bad step index or history length")
        u = self.feedforward[k].copy()
        for s in range(k):
            u += self.gains[(k, s)] @ hist[s]
        return u


def solve_long_horizon_feedback(model: SystemModel, pair: TerminalPair,
                                cost: StageCost, x0, horizon: int
                                ) -> FeedbackPlan:
    """Steer x0 into the terminal set in `horizon` steps, robustly.

    The state and input sets hold for every disturbance realization and
    the terminal state lands in the terminal set; the objective is the
    stage cost along the nominal chain.  Robustness is enforced by exact
    constraint tightening: for each halfspace the worst case over each
    disturbance is an epigraph over the disturbance vertices, affine in
    the feedback gains.  Needs halfspace forms, so state dimension <= 2.
    """
    if model.n > 2:
        raise NotImplementedError("long-horizon feedback needs planar states")
    x0 = np.asarray(x0, dtype=float)
    n, d = model.n, model.d
    w_verts = model.disturbance_set.vertices
    state_h = model.state_set.to_halfspaces()
    input_h = model.input_set.to_halfspaces()
    term_h = pair.terminal_set.to_halfspaces()

    a_pow = [np.eye(n)]
    for _ in range(horizon):
        a_pow.append(model.a @ a_pow[-1])

    prog = ConvexProgram("feedback-plan")
    gains = {(k, s): prog.new_variable(f"M[{k},{s}]", d * n)
             for k in range(1, horizon) for s in range(k)}
    feedforward = [prog.new_variable(f"g[{k}]", d) for k in range(horizon)]
    xbar = [prog.new_variable(f"xbar[{k}]", n) for k in range(horizon + 1)]

    prog.add_equality([(xbar[0], np.eye(n))], x0, label="root")
    for k in range(horizon):
        prog.add_equality([(xbar[k + 1], np.eye(n)), (xbar[k], -model.a),
                           (feedforward[k], -model.b)],
                          np.zeros(n), label=f"nom[{k}]")

    def tighten_state_row(h_row, h_rhs, k, tag):
        # h.x_k <= rhs for all disturbances: the w_r coefficient of x_k is
        # A^{k-1-r} + sum_{s>r} A^{k-1-s} B M_{s,r}, affine in the gains
        tau = prog.new_variable(f"{tag}.tau", k, nonneg=False) if k else None
        for r in range(k):
            const_row = h_row @ a_pow[k - 1 - r]
            for w in w_verts:
                terms = [(tau, -np.eye(k)[r:r + 1])]
                for s in range(r + 1, k):
                    c_s = (h_row @ a_pow[k - 1 - s] @ model.b).reshape(1, d)
                    terms.append((gains[(s, r)], c_s @ _gain_coeff(w, d)))
                prog.add_inequality(terms, -float(const_row @ w),
                                    label=f"{tag}.w{r}")
        terms = [(xbar[k], h_row.reshape(1, -1))]
        if tau is not None:
            terms.append((tau, np.ones((1, k))))
        prog.add_inequality(terms, float(h_rhs), label=tag)

    for k in range(1, horizon):
        for ri, (row, rhs) in enumerate(zip(*state_h)):
            tighten_state_row(row, rhs, k, f"X[{k}].{ri}")
    for ri, (row, rhs) in enumerate(zip(*term_h)):
        tighten_state_row(row, rhs, horizon, f"terminal.{ri}")
    if not all(state_h[0] @ x0 <= state_h[1] + 1e-12):
        raise AllInfeasibleError("initial state violates the state set")

    for k in range(horizon):
        for ri, (row, rhs) in enumerate(zip(*input_h)):
            tag = f"U[{k}].{ri}"
            tau = prog.new_variable(f"{tag}.tau", k, nonneg=False) if k else None
            for r in range(k):
                for w in w_verts:
                    prog.add_inequality(
                        [(tau, -np.eye(k)[r:r + 1]),
                         (gains[(k, r)], row.reshape(1, d) @ _gain_coeff(w, d))],
                        0.0, label=f"{tag}.w{r}")
            terms = [(feedforward[k], row.reshape(1, -1))]
            if tau is not None:
                terms.append((tau, np.ones((1, k))))
            prog.add_inequality(terms, float(rhs), label=tag)

    for k in range(horizon):
        h_var = stage_cost_epigraph(cost, pair, prog, xbar[k], feedforward[k],
                                    tag=f"h[{k}]")
        prog.add_linear_cost(h_var, [1.0])

    res = prog.solve()
    if res.status is SolveStatus.INFEASIBLE:
        raise AllInfeasibleError(
            f"state {x0} cannot be steered to the terminal set in "
            f"{horizon} steps")
    if not res.ok:
        raise RuntimeError(f"feedback plan ended with {res.status}")
    return FeedbackPlan(
        horizon=horizon,
        gains={ks: res.value(v).reshape(d, n) for ks, v in gains.items()},
        feedforward=np.vstack([res.value(v) for v in feedforward]),
        nominal_states=np.vstack([res.value(v) for v in xbar]),
        nominal_inputs=np.vstack([res.value(v) for v in feedforward]),
        w_vertices=w_verts.copy(), root_state=x0,
        objective=float(res.objective))
