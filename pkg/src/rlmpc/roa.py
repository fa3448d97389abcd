"""Inner approximation of the planner's region of attraction.

For a direction d, the extreme feasible initial state solves the planning
problem with a free root, minimizing d . x_root subject to x_root lying on
the line spanned by d (every direction orthogonal to d is zeroed out).
Sweeping a family of directions and every feedback split yields boundary
points whose convex hull inner-approximates the set of states the planner
can robustly steer into the safe set.

The same query with the sign-alternating first-coordinate direction picks
the initial condition for domain-enlargement runs: each iteration starts
from the farthest state (alternating sides) the current safe set can serve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

from .lmpc import AllInfeasibleError, build_ftocp
from .polytope import Polytope
from .safe_set import SafeSet
from .solver import SolveStatus
from .system import StageCost, SystemModel, TerminalPair


@dataclass(frozen=True)
class RoaQuery:
    direction: np.ndarray
    split: int
    status: SolveStatus
    state: np.ndarray | None
    extent: float


@dataclass(frozen=True)
class RoaResult:
    region: Polytope
    queries: tuple[RoaQuery, ...]


def _unit(direction) -> np.ndarray:
    d = np.asarray(direction, dtype=float)
    nrm = np.linalg.norm(d)
    if nrm == 0.0:
        raise ValueError("direction must be nonzero")
    return d / nrm


def extreme_initial_state(model: SystemModel, prev: SafeSet, cost: StageCost,
                          pair: TerminalPair, direction, horizon: int,
                          split: int) -> RoaQuery:
    """Farthest feasible initial state against `direction` on its span."""
    d = _unit(direction)
    basis = null_space(d.reshape(1, -1)).T
    prog, hd = build_ftocp(model, prev, cost, pair, horizon, split,
                           roa_direction=d, roa_basis=basis)
    res = prog.solve()
    if not res.ok:
        return RoaQuery(d, split, res.status, None, np.nan)
    state = res.value(hd.node_x[0])
    return RoaQuery(d, split, res.status, state, float(d @ state))


def uniform_directions(count: int, dim: int = 2) -> np.ndarray:
    """`count` unit directions; evenly spaced angles in the plane."""
    if dim != 2:
        raise ValueError("uniform direction families are planar")
    angles = 2.0 * np.pi * np.arange(count) / count
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def approximate_roa(model: SystemModel, prev: SafeSet, cost: StageCost,
                    pair: TerminalPair, horizon: int,
                    directions=16) -> RoaResult:
    """Hull of the extreme states over a direction family and all splits.

    `directions` is either a count (evenly spaced planar family) or an
    explicit (count, n) array of directions.
    """
    if np.isscalar(directions):
        dirs = uniform_directions(int(directions), model.n)
    else:
        dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    queries = []
    points = []
    for d in dirs:
        for split in range(1, horizon + 1):
            q = extreme_initial_state(model, prev, cost, pair, d, horizon,
                                      split)
            queries.append(q)
            if q.state is not None:
                points.append(q.state)
    if not points:
        raise AllInfeasibleError("no direction produced a feasible root")
    return RoaResult(region=Polytope(np.vstack(points)),
                     queries=tuple(queries))


def select_initial_condition(model: SystemModel, prev: SafeSet,
                             cost: StageCost, pair: TerminalPair,
                             horizon: int, iteration: int) -> np.ndarray:
    """Enlargement-schedule start state: extreme along the first
    coordinate, alternating sign with the iteration index, at the full
    feedback split."""
    d = np.zeros(model.n)
    d[0] = (-1.0) ** iteration
    q = extreme_initial_state(model, prev, cost, pair, d, horizon,
                              split=horizon)
    if q.state is None:
        raise AllInfeasibleError(
            f"no feasible start state along {d} at iteration {iteration}")
    return q.state
