"""Deterministic convex-program builder and solve layer.

All optimization in the package goes through this module.  Programs are
assembled from named variables, affine constraints, second-order-cone
constraints and convex costs; pure linear programs are handed to HiGHS
(through scipy) and anything with a cone or quadratic term is handed to
Clarabel.  A linear program that HiGHS leaves without a verdict is re-run
through Clarabel before the failure is surfaced.  Quadratic costs enter
only as sums of squared affine terms, so the Hessian is positive
semidefinite by construction.

Both backends are deterministic for a fixed program, which the rest of the
package relies on (re-solving the same program must reproduce the same
multipliers bit-for-bit on a given platform).
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

import clarabel


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


# tolerance used by every caller that does not explicitly override it
DEFAULT_TOL = 1e-7


@dataclass(frozen=True)
class Variable:
    """Handle to a block of scalar decision variables."""

    name: str
    dim: int
    offset: int
    nonneg: bool = False


# a linear term is (variable, coefficient matrix); vectors are promoted to rows
Term = tuple[Variable, np.ndarray]


def _coeff(matrix, dim: int) -> np.ndarray:
    """Promote a coefficient to a 2-D float array with `dim` columns."""
    arr = np.atleast_2d(np.asarray(matrix, dtype=float))
    if arr.shape[1] != dim:
        raise ValueError(f"coefficient has {arr.shape[1]} columns, variable has {dim}")
    return arr


@dataclass
class SolveResult:
    """Outcome of a solve.

    `objective` is recomputed from the primal values (not copied from the
    backend) and includes any constant cost offset; it is None unless the
    status is OPTIMAL.  `values` maps variable names to primal value arrays.
    """

    status: SolveStatus
    objective: float | None
    values: dict[str, np.ndarray]
    solve_time: float

    def value(self, var: Variable) -> np.ndarray:
        return self.values[var.name]

    @property
    def ok(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


@dataclass
class _SocConstraint:
    # ||F z + f||_2 <= g.z + h
    bound_terms: list[Term]
    bound_offset: float
    arg_terms: list[list[Term]]
    arg_offset: np.ndarray
    label: str = ""


class ConvexProgram:
    """Incrementally built convex program over named variable blocks."""

    def __init__(self, name: str = "program"):
        self.name = name
        self.variables: list[Variable] = []
        self._num_cols = 0
        # equality / inequality rows as (terms, rhs, label)
        self._eq: list[tuple[list[Term], np.ndarray, str]] = []
        self._ineq: list[tuple[list[Term], np.ndarray, str]] = []
        self._socs: list[_SocConstraint] = []
        self._lin_cost: dict[int, np.ndarray] = {}
        # squared costs: (terms, offset) contributing ||sum A_i z_i + c||^2
        self._sq_cost: list[tuple[list[Term], np.ndarray]] = []
        self._const_cost = 0.0

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------

    def new_variable(self, name: str, dim: int, nonneg: bool = False) -> Variable:
        if any(v.name == name for v in self.variables):
            raise ValueError(f"duplicate variable name {name!r}")
        var = Variable(name, int(dim), self._num_cols, nonneg)
        self.variables.append(var)
        self._num_cols += var.dim
        return var

    def add_equality(self, terms: list[Term], rhs, label: str = "") -> None:
        """Add sum_i A_i z_i = rhs."""
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        self._eq.append(([(v, _coeff(a, v.dim)) for v, a in terms], rhs, label))

    def add_inequality(self, terms: list[Term], rhs, label: str = "") -> None:
        """Add sum_i A_i z_i <= rhs componentwise."""
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        self._ineq.append(([(v, _coeff(a, v.dim)) for v, a in terms], rhs, label))

    def add_second_order_cone(self, bound_terms: list[Term], arg_terms: list[list[Term]],
                              arg_offset=None, bound_offset: float = 0.0,
                              label: str = "") -> None:
        """Add ||F z + f||_2 <= g.z + h.

        `bound_terms` define the affine bound g.z + h (row coefficients);
        `arg_terms[i]` define row i of F z + f.
        """
        dim = len(arg_terms)
        off = np.zeros(dim) if arg_offset is None else np.asarray(arg_offset, dtype=float)
        rows = [[(v, _coeff(a, v.dim)) for v, a in row] for row in arg_terms]
        bnd = [(v, _coeff(a, v.dim)) for v, a in bound_terms]
        self._socs.append(_SocConstraint(bnd, float(bound_offset), rows, off, label))

    def add_linear_cost(self, var: Variable, coeffs) -> None:
        c = np.atleast_1d(np.asarray(coeffs, dtype=float))
        if c.shape != (var.dim,):
            raise ValueError("linear cost shape mismatch")
        self._lin_cost[var.offset] = self._lin_cost.get(var.offset, 0.0) + c

    def add_squared_cost(self, terms: list[Term], offset=None) -> None:
        """Add ||sum_i A_i z_i + c||_2^2 to the objective."""
        rows = [(v, _coeff(a, v.dim)) for v, a in terms]
        dim = rows[0][1].shape[0]
        off = np.zeros(dim) if offset is None else np.asarray(offset, dtype=float)
        self._sq_cost.append((rows, off))

    def add_constant_cost(self, value: float) -> None:
        self._const_cost += float(value)

    # ------------------------------------------------------------------
    # assembly
    # ------------------------------------------------------------------

    def _stack(self, blocks) -> tuple[sp.csr_matrix, np.ndarray]:
        """Stack constraint blocks into one sparse matrix over all columns."""
        data, rows, cols = [], [], []
        rhs_parts = []
        row0 = 0
        for terms, rhs, _label in blocks:
            m = rhs.shape[0]
            for var, a in terms:
                if a.shape[0] != m:
                    raise ValueError("constraint row-count mismatch")
                r, c = np.nonzero(a)
                data.append(a[r, c])
                rows.append(r + row0)
                cols.append(c + var.offset)
            rhs_parts.append(rhs)
            row0 += m
        if row0 == 0:
            return sp.csr_matrix((0, self._num_cols)), np.zeros(0)
        mat = sp.csr_matrix(
            (np.concatenate(data) if data else np.zeros(0),
             (np.concatenate(rows) if rows else np.zeros(0, dtype=int),
              np.concatenate(cols) if cols else np.zeros(0, dtype=int))),
            shape=(row0, self._num_cols))
        return mat, np.concatenate(rhs_parts)

    def _cost_vector(self) -> np.ndarray:
        c = np.zeros(self._num_cols)
        for off, vec in self._lin_cost.items():
            c[off:off + vec.shape[0]] += vec
        return c

    @property
    def is_linear(self) -> bool:
        return not self._socs and not self._sq_cost

    # ------------------------------------------------------------------
    # solving
    # ------------------------------------------------------------------

    def solve(self, tol: float = DEFAULT_TOL, engine: str = "auto") -> SolveResult:
        if engine not in ("auto", "conic"):
            raise ValueError(f"unknown engine {engine!r}")
        t0 = time.perf_counter()
        if self.is_linear and engine == "auto":
            status, x = self._solve_linear(tol)
        else:
            status, x = self._solve_conic(tol)
        elapsed = time.perf_counter() - t0

        values: dict[str, np.ndarray] = {}
        objective = None
        if status is SolveStatus.OPTIMAL:
            for var in self.variables:
                values[var.name] = x[var.offset:var.offset + var.dim].copy()
            objective = self._evaluate_objective(x)
        return SolveResult(status, objective, values, elapsed)

    def _evaluate_objective(self, x: np.ndarray) -> float:
        obj = self._const_cost + float(self._cost_vector() @ x)
        for rows, off in self._sq_cost:
            val = off.copy()
            for var, a in rows:
                val = val + a @ x[var.offset:var.offset + var.dim]
            obj += float(val @ val)
        return obj

    def _solve_linear(self, tol: float):
        a_eq, b_eq = self._stack(self._eq)
        a_ub, b_ub = self._stack(self._ineq)
        bounds = []
        for var in self.variables:
            bounds.extend([(0.0, None) if var.nonneg else (None, None)] * var.dim)
        res = linprog(
            self._cost_vector(),
            A_ub=a_ub if a_ub.shape[0] else None, b_ub=b_ub if b_ub.shape[0] else None,
            A_eq=a_eq if a_eq.shape[0] else None, b_eq=b_eq if b_eq.shape[0] else None,
            bounds=bounds, method="highs",
            options={"primal_feasibility_tolerance": tol,
                     "dual_feasibility_tolerance": tol})
        if res.status not in (0, 2, 3):
            # HiGHS sometimes stops without a certificate when the feasible
            # set is empty or borderline at the tolerance scale; the conic
            # path is a second, independent engine and settles those
            return self._solve_conic(tol)
        status = {0: SolveStatus.OPTIMAL, 2: SolveStatus.INFEASIBLE,
                  3: SolveStatus.UNBOUNDED}.get(res.status, SolveStatus.NUMERICAL_FAILURE)
        return status, (np.asarray(res.x, dtype=float) if res.x is not None else None)

    def _solve_conic(self, tol: float):
        n = self._num_cols
        a_eq, b_eq = self._stack(self._eq)

        # nonnegativity rows precede general inequality rows
        nonneg_rows = []
        for var in self.variables:
            if var.nonneg:
                nonneg_rows.extend(range(var.offset, var.offset + var.dim))
        a_nn = -sp.csr_matrix(
            (np.ones(len(nonneg_rows)), (np.arange(len(nonneg_rows)), nonneg_rows)),
            shape=(len(nonneg_rows), n)) if nonneg_rows else sp.csr_matrix((0, n))
        a_ub, b_ub = self._stack(self._ineq)

        soc_blocks = []
        soc_dims = []
        for soc in self._socs:
            # Clarabel wants A z + s = b with s in the cone, so the block is
            # [-g; -F] z + s = [h; f], giving s = (g.z + h, F z + f).
            rows = [([(v, -a) for v, a in soc.bound_terms],
                     np.array([soc.bound_offset]), soc.label)]
            for i, row in enumerate(soc.arg_terms):
                rows.append(([(v, -a) for v, a in row],
                             np.array([soc.arg_offset[i]]), soc.label))
            mat, rhs = self._stack(rows)
            soc_blocks.append((mat, rhs))
            soc_dims.append(1 + len(soc.arg_terms))

        a_parts = [a_eq, a_nn, a_ub] + [m for m, _ in soc_blocks]
        b_parts = [b_eq, np.zeros(a_nn.shape[0]), b_ub] + [r for _, r in soc_blocks]
        a_full = sp.vstack([sp.csc_matrix(p) for p in a_parts], format="csc")
        b_full = np.concatenate(b_parts)

        cones = []
        if a_eq.shape[0]:
            cones.append(clarabel.ZeroConeT(a_eq.shape[0]))
        m_nn = a_nn.shape[0] + a_ub.shape[0]
        if m_nn:
            cones.append(clarabel.NonnegativeConeT(m_nn))
        cones.extend(clarabel.SecondOrderConeT(d) for d in soc_dims)

        # P from squared costs: ||A z + c||^2 -> z' (2 A'A /2) z + 2 c'A z + c'c
        q = self._cost_vector()
        p_mat = sp.csc_matrix((n, n))
        for rows, off in self._sq_cost:
            mat, _ = self._stack([(rows, np.zeros(rows[0][1].shape[0]), "")])
            mat = sp.csc_matrix(mat)
            p_mat = p_mat + 2.0 * (mat.T @ mat)
            q = q + 2.0 * (mat.T @ off)

        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_feas = tol
        settings.tol_gap_abs = tol
        settings.tol_gap_rel = tol
        solver = clarabel.DefaultSolver(sp.triu(p_mat, format="csc"), q,
                                        a_full, b_full, cones, settings)
        sol = solver.solve()
        name = str(sol.status)
        if name in ("Solved", "AlmostSolved"):
            return SolveStatus.OPTIMAL, np.asarray(sol.x, dtype=float)
        if name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            return SolveStatus.INFEASIBLE, None
        if name in ("DualInfeasible", "AlmostDualInfeasible"):
            return SolveStatus.UNBOUNDED, None
        return SolveStatus.NUMERICAL_FAILURE, None

    # ------------------------------------------------------------------
    # debugging
    # ------------------------------------------------------------------

    def dump(self) -> str:
        """Human-readable rendering for failure triage."""
        lines = [f"program {self.name}: {self._num_cols} columns"]
        for var in self.variables:
            tag = " >= 0" if var.nonneg else ""
            lines.append(f"  var {var.name}[{var.dim}] @ {var.offset}{tag}")
        for kind, block in (("eq", self._eq), ("ineq", self._ineq)):
            for terms, rhs, label in block:
                names = " + ".join(f"{a.shape}*{v.name}" for v, a in terms)
                lines.append(f"  {kind} ({label or 'unnamed'}): {names} "
                             f"{'=' if kind == 'eq' else '<='} rhs[{rhs.shape[0]}]")
        for soc in self._socs:
            lines.append(f"  soc ({soc.label or 'unnamed'}): dim {1 + len(soc.arg_terms)}")
        lines.append(f"  costs: linear on {len(self._lin_cost)} blocks, "
                     f"{len(self._sq_cost)} squared terms, const {self._const_cost}")
        return "\n".join(lines)
