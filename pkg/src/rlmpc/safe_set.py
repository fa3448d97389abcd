"""Safe sets, Q-functions and safe policies built from closed-loop data.

A safe set is stored column-wise: state points, one admissible input per
point, and a certified cost-to-go value per point.  The induced set is the
convex hull of the state columns, the Q-function at x is the cheapest
convex interpolation of the stored values that reproduces x,

    Q(x) = min  J . lam   s.t.  S' lam = x,  sum lam = 1,  lam >= 0,

and the safe policy applies the same interpolation to the stored inputs.
Infeasibility of that LP is exactly non-membership of x in the hull.

New data arrives as scenario trees: at each time step of a closed-loop run
the planner's robust reachable-set vertices over the planning horizon are
recorded as a tree branching on the disturbance vertices.  `extend` folds
the internal nodes of the recorded trees into the column family after
certifying their cost-to-go by a backward recursion through the tree:
leaves take their value from the previous safe set, and an internal node
pays its stage cost plus the cheapest convex interpolation of the next
level's values that matches its nominal successor.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .polytope import Polytope
from .solver import DEFAULT_TOL, ConvexProgram, SolveStatus
from .system import StageCost, SystemModel, TerminalPair


class NotInSafeSetError(RuntimeError):
    """Query state lies outside the safe set."""


class TreeDataError(RuntimeError):
    """Recorded tree violates the invariants required for extension."""


# ----------------------------------------------------------------------
# scenario trees
# ----------------------------------------------------------------------

class TreeLayout:
    """Index arithmetic for a complete tree with fixed branching."""

    def __init__(self, branching: int, horizon: int):
        if branching < 1 or horizon < 1:
            raise ValueError("branching and horizon must be positive")
        self.branching = branching
        self.horizon = horizon
        self.sizes = [branching ** k for k in range(horizon + 1)]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        self.num_nodes = int(self.offsets[-1])

    def level(self, k: int) -> range:
        return range(self.offsets[k], self.offsets[k + 1])

    def depth_of(self, i: int) -> int:
        return int(np.searchsorted(self.offsets, i, side="right") - 1)

    def child(self, i: int, j: int) -> int:
        k = self.depth_of(i)
        return self.offsets[k + 1] + (i - self.offsets[k]) * self.branching + j

    def parent(self, i: int) -> int:
        k = self.depth_of(i)
        return self.offsets[k - 1] + (i - self.offsets[k]) // self.branching

    def w_index(self, i: int) -> int:
        k = self.depth_of(i)
        return (i - self.offsets[k]) % self.branching

    def path(self, i: int) -> tuple[int, ...]:
        """Disturbance-vertex indices along the root-to-node path."""
        out = []
        while self.depth_of(i) > 0:
            out.append(self.w_index(i))
            i = self.parent(i)
        return tuple(reversed(out))


@dataclass
class ScenarioTree:
    """Complete disturbance-branching tree of planned states and inputs.

    `states` has one row per node in breadth-first order; `controls` has
    one row per internal node (leaves carry no input).  `iteration` is the
    index of the data iteration that recorded the tree and `root_time` the
    closed-loop time step it was recorded at.
    """

    states: np.ndarray
    controls: np.ndarray
    branching: int
    horizon: int
    root_time: int
    iteration: int

    def __post_init__(self):
        self.layout = TreeLayout(self.branching, self.horizon)
        if self.states.shape[0] != self.layout.num_nodes:
            raise TreeDataError("state rows do not match the tree layout")
        if self.controls.shape[0] != self.layout.offsets[self.horizon]:
            raise TreeDataError("control rows do not match the internal nodes")

    def leaf_states(self) -> np.ndarray:
        return self.states[self.layout.offsets[self.horizon]:]

    def validate(self, model: SystemModel, dyn_tol: float = 1e-9,
                 set_tol: float = 1e-6) -> None:
        """Raise TreeDataError unless dynamics hold edge-by-edge to dyn_tol
        and every recorded state/input is admissible to set_tol."""
        w_verts = model.disturbance_set.vertices
        if w_verts.shape[0] != self.branching:
            raise TreeDataError("branching factor does not match the disturbance set")
        lay = self.layout
        for i in range(lay.offsets[self.horizon]):
            succ = model.a @ self.states[i] + model.b @ self.controls[i]
            for j in range(self.branching):
                c = lay.child(i, j)
                if np.max(np.abs(self.states[c] - succ - w_verts[j])) > dyn_tol:
                    raise TreeDataError(f"dynamics violated on edge {i} -> {c}")
            if not model.input_set.contains(self.controls[i], set_tol):
                raise TreeDataError(f"control at node {i} is inadmissible")
        for i in range(lay.num_nodes):
            if not model.state_set.contains(self.states[i], set_tol):
                raise TreeDataError(f"state at node {i} leaves the state set")


# ----------------------------------------------------------------------
# safe set
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class QValue:
    value: float
    weights: np.ndarray | None
    feasible: bool


@dataclass(frozen=True)
class SafeSet:
    """Column family (state, input, cost-to-go) with provenance tags.

    `iteration` counts the data iterations folded in so far; a fresh set
    built from the terminal pair alone is iteration 0.  Provenance rows
    are (iteration, time, depth, node) per column, with (-1, -1, -1, k)
    for the k-th vertex of the terminal set.
    """

    states: np.ndarray
    inputs: np.ndarray
    costs: np.ndarray
    iteration: int
    provenance: tuple[tuple[int, int, int, int], ...]

    def __post_init__(self):
        if not (self.states.shape[0] == self.inputs.shape[0]
                == self.costs.shape[0] == len(self.provenance)):
            raise ValueError("column arrays disagree in length")
        if np.any(self.costs < -1e-12):
            raise ValueError("cost-to-go values must be nonnegative")

    @property
    def num_columns(self) -> int:
        return self.states.shape[0]

    @cached_property
    def hull(self) -> Polytope:
        return Polytope(self.states)

    def q_value(self, x, tol: float | None = None) -> QValue:
        """Cheapest convex interpolation of the stored values at x;
        infeasible exactly when x lies outside the hull of the columns."""
        x = np.asarray(x, dtype=float)
        prog = ConvexProgram("q-value")
        lam = prog.new_variable("lam", self.num_columns, nonneg=True)
        prog.add_equality([(lam, self.states.T)], x, label="match")
        prog.add_equality([(lam, np.ones((1, self.num_columns)))], 1.0,
                          label="simplex")
        prog.add_linear_cost(lam, self.costs)
        args = () if tol is None else (tol,)
        slack = DEFAULT_TOL if tol is None else tol
        res = prog.solve(*args)
        if res.ok:
            weights = res.value(lam)
            if np.max(np.abs(self.states.T @ weights - x)) <= slack:
                return QValue(float(res.objective), weights, True)
        # engine verdicts fray at the hull boundary (accepts that strain
        # the tolerance, infeasibility without a certificate), so hull
        # membership decides feasibility, with headroom over the strain,
        # and the interior-point engine settles the value for members
        if not self.hull.contains(x, 10 * slack):
            return QValue(np.inf, None, False)
        res = prog.solve(*args, engine="conic")
        if not res.ok:
            raise RuntimeError(f"q-value LP ended with {res.status}")
        return QValue(float(res.objective), res.value(lam), True)

    def policy(self, x) -> np.ndarray:
        """Interpolated stored input at x; raises NotInSafeSetError outside."""
        q = self.q_value(x)
        if not q.feasible:
            raise NotInSafeSetError(f"state {x!r} is outside the safe set")
        return self.inputs.T @ q.weights

    def to_dict(self) -> dict:
        return {"iteration": self.iteration,
                "states": self.states.tolist(),
                "inputs": self.inputs.tolist(),
                "costs": self.costs.tolist(),
                "provenance": [list(p) for p in self.provenance]}

    @classmethod
    def from_dict(cls, data: dict) -> "SafeSet":
        return cls(states=np.asarray(data["states"], dtype=float),
                   inputs=np.asarray(data["inputs"], dtype=float),
                   costs=np.asarray(data["costs"], dtype=float),
                   iteration=int(data["iteration"]),
                   provenance=tuple(tuple(int(v) for v in p)
                                    for p in data["provenance"]))


def initial_safe_set(pair: TerminalPair) -> SafeSet:
    """Safe set of the terminal pair alone: vertices of the terminal set
    with the gain inputs and zero cost-to-go."""
    verts = pair.terminal_set.vertices
    return SafeSet(states=verts.copy(),
                   inputs=verts @ pair.gain.T,
                   costs=np.zeros(verts.shape[0]),
                   iteration=0,
                   provenance=tuple((-1, -1, -1, k) for k in range(verts.shape[0])))


# ----------------------------------------------------------------------
# cost-to-go certification and extension
# ----------------------------------------------------------------------

def _interpolation_lp(points: np.ndarray, values: np.ndarray, x: np.ndarray) -> float:
    """min values . gam  s.t.  points' gam = x, simplex."""
    prog = ConvexProgram("interpolation")
    gam = prog.new_variable("gam", points.shape[0], nonneg=True)
    prog.add_equality([(gam, points.T)], x, label="match")
    prog.add_equality([(gam, np.ones((1, points.shape[0])))], 1.0, label="simplex")
    prog.add_linear_cost(gam, values)
    res = prog.solve()
    if res.status is SolveStatus.INFEASIBLE:
        raise TreeDataError("nominal successor escapes the next tree level")
    if not res.ok:
        raise RuntimeError(f"cost-to-go LP ended with {res.status}")
    return float(res.objective)


def compute_cost_to_go(tree: ScenarioTree, prev: SafeSet, cost: StageCost,
                       pair: TerminalPair, model: SystemModel) -> np.ndarray:
    """Backward value recursion over a recorded tree.

    Leaves take the previous safe set's Q-value (raising TreeDataError when
    a leaf escapes it); an internal node pays its stage cost plus the
    cheapest interpolation of the next level's values at its nominal
    successor.  Returns one value per node in breadth-first order.
    """
    lay = tree.layout
    values = np.full(lay.num_nodes, np.nan)
    for i in lay.level(tree.horizon):
        # leaves sit on the hull boundary by design; the loosened tolerance
        # absorbs the float drift of re-expanding the recorded tree
        q = prev.q_value(tree.states[i], tol=1e-6)
        if not q.feasible:
            raise TreeDataError(f"leaf {i} lies outside the previous safe set")
        values[i] = q.value
    for k in range(tree.horizon - 1, -1, -1):
        nxt = list(lay.level(k + 1))
        pts, vals = tree.states[nxt], values[nxt]
        for i in lay.level(k):
            succ = model.a @ tree.states[i] + model.b @ tree.controls[i]
            stage = cost.value(pair, tree.states[i], tree.controls[i])
            values[i] = stage + _interpolation_lp(pts, vals, succ)
    return values


def extend(prev: SafeSet, trees: list[ScenarioTree], cost: StageCost,
           pair: TerminalPair, model: SystemModel) -> SafeSet:
    """Fold the internal nodes of the recorded trees into the column family.

    Column order follows the trees in the order given, breadth-first within
    each tree, with the previous columns kept verbatim at the front.
    """
    states = [prev.states]
    inputs = [prev.inputs]
    costs = [prev.costs]
    provenance = list(prev.provenance)
    for tree in trees:
        if tree.iteration != prev.iteration:
            raise TreeDataError(
                f"tree from iteration {tree.iteration} cannot extend a safe "
                f"set at iteration {prev.iteration}")
        values = compute_cost_to_go(tree, prev, cost, pair, model)
        internal = range(tree.layout.offsets[tree.horizon])
        states.append(tree.states[:len(internal)])
        inputs.append(tree.controls)
        costs.append(values[:len(internal)])
        provenance.extend((tree.iteration, tree.root_time,
                           tree.layout.depth_of(i), i) for i in internal)
    return SafeSet(states=np.vstack(states), inputs=np.vstack(inputs),
                   costs=np.concatenate(costs), iteration=prev.iteration + 1,
                   provenance=tuple(provenance))


def prune(ss: SafeSet, tol: float = 1e-9) -> SafeSet:
    """Drop columns that other columns already certify.

    Column i goes when the remaining columns interpolate its state at a
    value no worse than costs[i] + tol, which leaves the hull and the
    Q-function unchanged up to tol.  The sweep is sequential in column
    order, so the result is deterministic.
    """
    keep = list(range(ss.num_columns))
    i = 0
    while i < len(keep):
        rest = keep[:i] + keep[i + 1:]
        if not rest:
            break
        idx = keep[i]
        prog = ConvexProgram("prune")
        gam = prog.new_variable("gam", len(rest), nonneg=True)
        prog.add_equality([(gam, ss.states[rest].T)], ss.states[idx], label="match")
        prog.add_equality([(gam, np.ones((1, len(rest))))], 1.0, label="simplex")
        prog.add_linear_cost(gam, ss.costs[rest])
        # solving at tol keeps the match equality honest at the same scale
        # as the promised hull preservation
        res = prog.solve(tol)
        if res.ok and res.objective <= ss.costs[idx] + tol:
            keep.pop(i)
        else:
            i += 1
    return SafeSet(states=ss.states[keep], inputs=ss.inputs[keep],
                   costs=ss.costs[keep], iteration=ss.iteration,
                   provenance=tuple(ss.provenance[k] for k in keep))
