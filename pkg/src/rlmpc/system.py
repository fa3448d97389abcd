"""Linear system under bounded additive disturbance, terminal ingredients
and stage cost.

The controlled system is x+ = A x + B u + w with polytopic state, input and
disturbance sets.  A terminal pair is a robust positively invariant
polytope O together with a linear gain K that renders it invariant:
(A + B K) v + w must stay in O for every vertex v of O and every
disturbance vertex w, with K v admissible and O inside the state set.

Synthesis runs an infinite-horizon Riccati recursion with unit weights to
get K, then builds an invariant set as a scaled truncation of the series
sum_i (A + B K)^i W: truncate at the smallest power s whose image lands in
alpha * W and inflate by 1 / (1 - alpha).

The stage cost is a weighted sum of set-point distances,

    h(x, u) = q * dist(x, O) + r * dist(u, K O),

zero exactly on the terminal pair, in either the Euclidean or the
infinity norm.  `stage_cost_epigraph` embeds h into a convex program
through simplex-certificate variables so that minimizing the returned
scalar variable reproduces h at the optimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import polytope as pt
from .polytope import Polytope
from .solver import ConvexProgram, Variable

RICCATI_REL_TOL = 1e-10
MRPI_ALPHA = 0.05
MRPI_MAX_POWER = 50


class SynthesisError(RuntimeError):
    """Terminal-pair synthesis could not produce a certified pair."""


@dataclass(frozen=True)
class SystemModel:
    """x+ = A x + B u + w, with x in X, u in U, w in W."""

    a: np.ndarray
    b: np.ndarray
    state_set: Polytope
    input_set: Polytope
    disturbance_set: Polytope

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        n, d = a.shape[0], b.shape[1]
        if a.shape != (n, n) or b.shape != (n, d):
            raise ValueError("inconsistent dynamics matrices")
        for name, poly, dim in (("state", self.state_set, n),
                                ("input", self.input_set, d),
                                ("disturbance", self.disturbance_set, n)):
            if poly.dim != dim:
                raise ValueError(f"{name} set has dimension {poly.dim}, expected {dim}")
        # the origin must be a valid equilibrium target
        for name, poly in (("state", self.state_set), ("input", self.input_set),
                           ("disturbance", self.disturbance_set)):
            if not poly.contains(np.zeros(poly.dim), tol=1e-9):
                raise ValueError(f"{name} set must contain the origin")

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def d(self) -> int:
        return self.b.shape[1]

    def successor(self, x, u, w=None) -> np.ndarray:
        nxt = self.a @ np.asarray(x, dtype=float) + self.b @ np.asarray(u, dtype=float)
        if w is not None:
            nxt = nxt + np.asarray(w, dtype=float)
        return nxt


@dataclass(frozen=True)
class TerminalPair:
    """Robust invariant terminal set O and stabilizing gain K."""

    terminal_set: Polytope
    gain: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gain",
                           np.atleast_2d(np.asarray(self.gain, dtype=float)))
        # image of O under the gain; the admissible-input target set
        object.__setattr__(self, "input_region",
                           pt.affine_image(self.terminal_set, self.gain))

    input_region: Polytope = field(init=False)


@dataclass(frozen=True)
class VerificationReport:
    ok: bool
    failures: tuple[str, ...]

    def __str__(self):
        if self.ok:
            return "terminal pair verified"
        return "terminal pair rejected:\n  " + "\n  ".join(self.failures)


def riccati_gain(a, b, max_iter: int = 100000) -> tuple[np.ndarray, np.ndarray]:
    """Fixed point of the discrete Riccati recursion with unit weights.

    Returns (K, P) with K = -(I + B'PB)^{-1} B'PA; iteration stops when the
    relative Frobenius change of P drops below 1e-10.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    n, d = a.shape[0], b.shape[1]
    p = np.eye(n)
    for _ in range(max_iter):
        gain_term = np.linalg.solve(np.eye(d) + b.T @ p @ b, b.T @ p @ a)
        p_next = a.T @ p @ (a - b @ gain_term) + np.eye(n)
        if np.linalg.norm(p_next - p) <= RICCATI_REL_TOL * np.linalg.norm(p_next):
            p = p_next
            break
        p = p_next
    else:
        raise SynthesisError("Riccati recursion did not converge")
    k = -np.linalg.solve(np.eye(d) + b.T @ p @ b, b.T @ p @ a)
    return k, p


def verify_terminal_pair(model: SystemModel, pair: TerminalPair,
                         tol: float = 1e-6) -> VerificationReport:
    """Certify robust invariance and admissibility by vertex enumeration."""
    failures = []
    o = pair.terminal_set
    if o.dim != model.n or pair.gain.shape != (model.d, model.n):
        return VerificationReport(False, ("terminal pair has wrong dimensions",))
    a_cl = model.a + model.b @ pair.gain
    for i, v in enumerate(o.vertices):
        if not model.state_set.contains(v, tol):
            failures.append(f"vertex {i} of the terminal set leaves the state set")
        if not model.input_set.contains(pair.gain @ v, tol):
            failures.append(f"gain input at vertex {i} leaves the input set")
        for j, w in enumerate(model.disturbance_set.vertices):
            if not o.contains(a_cl @ v + w, tol):
                failures.append(
                    f"successor of vertex {i} under disturbance vertex {j} "
                    f"escapes the terminal set")
    return VerificationReport(not failures, tuple(failures))


def synthesize_terminal_pair(model: SystemModel, alpha: float = MRPI_ALPHA,
                             max_power: int = MRPI_MAX_POWER,
                             tol: float = 1e-6) -> TerminalPair:
    """Riccati gain plus truncated-series invariant set.

    Finds the smallest s <= max_power with (A+BK)^s W inside alpha * W and
    returns O = (1/(1-alpha)) * sum_{i<s} (A+BK)^i W.  Raises
    SynthesisError when no admissible power exists or the certified checks
    fail afterwards.
    """
    k, _ = riccati_gain(model.a, model.b)
    a_cl = model.a + model.b @ k
    w_set = model.disturbance_set
    shrunk = pt.scale(w_set, alpha)

    power = np.eye(model.n)
    accum = w_set  # sum_{i<s} Acl^i W, grown as s increases
    s_found = None
    for s in range(1, max_power + 1):
        power = a_cl @ power
        image = pt.affine_image(w_set, power)
        if all(shrunk.contains(v, tol=1e-9) for v in image.vertices):
            s_found = s
            break
        accum = pt.minkowski_sum(accum, image)
    if s_found is None:
        raise SynthesisError(
            f"no power up to {max_power} contracts the disturbance set "
            f"into {alpha} of itself")
    o = pt.scale(accum, 1.0 / (1.0 - alpha))
    pair = TerminalPair(o, k)
    report = verify_terminal_pair(model, pair, tol)
    if not report.ok:
        raise SynthesisError(str(report))
    return pair


# ----------------------------------------------------------------------
# stage cost
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class StageCost:
    """h(x, u) = state_weight * dist(x, O) + input_weight * dist(u, K O)."""

    state_weight: float = 1.0
    input_weight: float = 1.0
    norm_mode: str = "euclidean"  # or "polyhedral-inf"

    def __post_init__(self):
        if self.state_weight <= 0 or self.input_weight < 0:
            raise ValueError("state weight must be positive, input weight nonnegative")
        if self.norm_mode not in ("euclidean", "polyhedral-inf"):
            raise ValueError(f"unknown norm mode {self.norm_mode!r}")

    def value(self, pair: TerminalPair, x, u) -> float:
        hx = pair.terminal_set.distance(x, self.norm_mode)
        hu = pair.input_region.distance(u, self.norm_mode)
        return self.state_weight * hx + self.input_weight * hu


def _distance_epigraph(prog: ConvexProgram, target: Polytope, var: Variable,
                       norm_mode: str, tag: str) -> Variable:
    """Bound dist(var, target) by a fresh scalar variable and return it."""
    verts = target.vertices
    m, n = verts.shape
    mu = prog.new_variable(f"{tag}.mu", m, nonneg=True)
    t = prog.new_variable(f"{tag}.t", 1, nonneg=True)
    prog.add_equality([(mu, np.ones((1, m)))], 1.0, label=f"{tag}.simplex")
    if norm_mode == "euclidean":
        rows = [[(var, np.eye(n)[i:i + 1]), (mu, -verts.T[i:i + 1])]
                for i in range(n)]
        prog.add_second_order_cone([(t, np.ones((1, 1)))], rows, label=tag)
    else:
        ones = np.ones((n, 1))
        prog.add_inequality([(var, np.eye(n)), (mu, -verts.T), (t, -ones)],
                            np.zeros(n), label=f"{tag}.hi")
        prog.add_inequality([(var, -np.eye(n)), (mu, verts.T), (t, -ones)],
                            np.zeros(n), label=f"{tag}.lo")
    return t


def stage_cost_epigraph(cost: StageCost, pair: TerminalPair, prog: ConvexProgram,
                        x_var: Variable, u_var: Variable, tag: str) -> Variable:
    """Add variables and constraints so the returned scalar variable
    upper-bounds h(x_var, u_var); tight when minimized."""
    tx = _distance_epigraph(prog, pair.terminal_set, x_var, cost.norm_mode,
                            f"{tag}.x")
    tu = _distance_epigraph(prog, pair.input_region, u_var, cost.norm_mode,
                            f"{tag}.u")
    h_var = prog.new_variable(f"{tag}.h", 1, nonneg=True)
    prog.add_equality([(h_var, np.ones((1, 1))),
                       (tx, -np.array([[cost.state_weight]])),
                       (tu, -np.array([[cost.input_weight]]))],
                      0.0, label=f"{tag}.sum")
    return h_var


# ----------------------------------------------------------------------
# configuration parsing
# ----------------------------------------------------------------------

def set_from_config(cfg, dim: int | None = None) -> Polytope:
    """Polytope from a config fragment: {"box": r}, {"bounds": [[lo, hi]..]}
    or {"vertices": [...]}; a bare number means a symmetric box."""
    if isinstance(cfg, (int, float)):
        return pt.box(float(cfg), dim=dim)
    if "box" in cfg:
        return pt.box(float(cfg["box"]), dim=dim)
    if "bounds" in cfg:
        return pt.box(np.asarray(cfg["bounds"], dtype=float))
    if "vertices" in cfg:
        return Polytope(np.asarray(cfg["vertices"], dtype=float))
    raise ValueError(f"cannot interpret set description {cfg!r}")


def system_from_config(cfg: dict) -> SystemModel:
    a = np.asarray(cfg["A"], dtype=float)
    n = a.shape[0]
    b = np.atleast_2d(np.asarray(cfg["B"], dtype=float))
    if b.shape[0] != n:
        b = b.T
    return SystemModel(
        a=a, b=b,
        state_set=set_from_config(cfg["state"], dim=n),
        input_set=set_from_config(cfg["input"], dim=b.shape[1]),
        disturbance_set=set_from_config(cfg["disturbance"], dim=n))


def terminal_from_config(cfg: dict | None, model: SystemModel) -> TerminalPair:
    """Explicit pair if given, synthesized otherwise; always verified."""
    if cfg:
        pair = TerminalPair(
            terminal_set=set_from_config(cfg["set"], dim=model.n),
            gain=np.asarray(cfg["gain"], dtype=float))
        report = verify_terminal_pair(model, pair)
        if not report.ok:
            raise SynthesisError(str(report))
        return pair
    return synthesize_terminal_pair(model)


def cost_from_config(cfg: dict | None) -> StageCost:
    cfg = cfg or {}
    return StageCost(state_weight=float(cfg.get("state_weight", 1.0)),
                     input_weight=float(cfg.get("input_weight", 1.0)),
                     norm_mode=cfg.get("norm", "euclidean"))
