"""Solve layer: statuses, objective accounting, and small frozen programs."""

import numpy as np
import pytest

from rlmpc.solver import ConvexProgram, SolveStatus


def test_lp_oracle():
    # min x + 2y  s.t.  x + y >= 1, x,y >= 0  ->  (1, 0), value 1
    prog = ConvexProgram()
    z = prog.new_variable("z", 2, nonneg=True)
    prog.add_inequality([(z, -np.ones((1, 2)))], -1.0)
    prog.add_linear_cost(z, [1.0, 2.0])
    res = prog.solve()
    assert res.ok
    assert res.objective == pytest.approx(1.0, abs=1e-8)
    np.testing.assert_allclose(res.value(z), [1.0, 0.0], atol=1e-8)


def test_lp_objective_recomputed_from_primal():
    prog = ConvexProgram()
    z = prog.new_variable("z", 2, nonneg=True)
    prog.add_equality([(z, np.ones((1, 2)))], 2.0)
    prog.add_linear_cost(z, [3.0, 1.0])
    prog.add_constant_cost(4.0)
    res = prog.solve()
    assert res.objective == pytest.approx(4.0 + float([3.0, 1.0] @ res.value(z)))
    assert res.objective == pytest.approx(6.0, abs=1e-8)


def test_lp_infeasible():
    prog = ConvexProgram()
    x = prog.new_variable("x", 1, nonneg=True)
    prog.add_inequality([(x, np.eye(1))], 1.0)
    prog.add_inequality([(x, -np.eye(1))], -2.0)  # x >= 2 and x <= 1
    prog.add_linear_cost(x, [1.0])
    assert prog.solve().status is SolveStatus.INFEASIBLE


def test_lp_infeasible_interpolation_gets_certified():
    # frozen instance where the simplex backend stops with an unknown
    # status; the point sits 0.15 outside the hull of the columns, so the
    # verdict must be a clean INFEASIBLE, not a numerical failure
    states = np.array([
        [7.1708162944532625e-02, 1.7424149800137370e-01],
        [-5.5987078442388860e-01, 3.1445440206184361e-01],
        [3.4220571885020157e-01, -7.1379412960026689e-01],
        [-7.1328748133498499e-01, 8.7781890422756137e-02],
        [-1.0337951977744113e+00, 4.4410144916664573e-01],
        [-1.0342804946423250e+00, 4.4398878272568953e-01],
        [-8.9029171191663536e-01, 4.7906585711311167e-01],
        [5.2338222863710993e-01, -3.1543553845019245e-01],
        [5.6559999999999997e+00, 0.0000000000000000e+00],
        [4.1088189331314995e-01, -4.2849818233287040e-04]])
    costs = np.array([
        0.0, 0.0, 1.3135167926057346e+01, 3.3810820613036565e+00,
        6.5672092463285532e+00, 6.5756077803716888e+00,
        4.5520374090164513e+00, 9.8113108458321337e-03,
        1.8522151163316451e+02, 2.6266885336438756e-02])
    x = np.array([-1.2242285498693215, 0.5165638750022296])
    prog = ConvexProgram()
    lam = prog.new_variable("lam", 10, nonneg=True)
    prog.add_equality([(lam, states.T)], x)
    prog.add_equality([(lam, np.ones((1, 10)))], 1.0)
    prog.add_linear_cost(lam, costs)
    assert prog.solve().status is SolveStatus.INFEASIBLE


def test_lp_unbounded():
    prog = ConvexProgram()
    x = prog.new_variable("x", 1)
    prog.add_linear_cost(x, [1.0])
    assert prog.solve().status is SolveStatus.UNBOUNDED


def test_equality_only_feasibility():
    prog = ConvexProgram()
    x = prog.new_variable("x", 3)
    prog.add_equality([(x, np.eye(3))], [1.0, -2.0, 0.5])
    res = prog.solve()
    assert res.ok
    np.testing.assert_allclose(res.value(x), [1.0, -2.0, 0.5], atol=1e-9)
    assert res.objective == pytest.approx(0.0)


def test_qp_projection_onto_simplex():
    # min ||z - (0.6, 0.2)||^2 over the simplex -> interior point (0.7, 0.3)
    prog = ConvexProgram()
    z = prog.new_variable("z", 2, nonneg=True)
    prog.add_equality([(z, np.ones((1, 2)))], 1.0)
    prog.add_squared_cost([(z, np.eye(2))], offset=[-0.6, -0.2])
    res = prog.solve()
    assert res.ok
    np.testing.assert_allclose(res.value(z), [0.7, 0.3], atol=1e-6)
    assert res.objective == pytest.approx(0.02, abs=1e-6)


def test_socp_distance_oracle():
    # t >= ||x - (1, 2)|| with x pinned at (4, 6) -> t = 5
    prog = ConvexProgram()
    x = prog.new_variable("x", 2)
    t = prog.new_variable("t", 1, nonneg=True)
    prog.add_equality([(x, np.eye(2))], [4.0, 6.0])
    prog.add_second_order_cone(
        [(t, np.ones((1, 1)))],
        [[(x, np.eye(2)[i:i + 1])] for i in range(2)],
        arg_offset=[-1.0, -2.0])
    prog.add_linear_cost(t, [1.0])
    res = prog.solve()
    assert res.ok
    assert res.objective == pytest.approx(5.0, abs=1e-6)


def test_socp_constant_bound():
    # max 3 x0 + 4 x1 over the unit ball -> 5 at (0.6, 0.8)
    prog = ConvexProgram()
    x = prog.new_variable("x", 2)
    prog.add_second_order_cone(
        [], [[(x, np.eye(2)[i:i + 1])] for i in range(2)], bound_offset=1.0)
    prog.add_linear_cost(x, [-3.0, -4.0])
    res = prog.solve()
    assert res.ok
    assert res.objective == pytest.approx(-5.0, abs=1e-6)
    np.testing.assert_allclose(res.value(x), [0.6, 0.8], atol=1e-6)


def test_conic_path_keeps_sign_constraints():
    # if the nonnegativity rows were dropped the optimum would be -8
    prog = ConvexProgram()
    y = prog.new_variable("y", 1, nonneg=True)
    prog.add_second_order_cone(
        [], [[(y, np.eye(1))]], arg_offset=[3.0], bound_offset=5.0)
    prog.add_linear_cost(y, [1.0])
    res = prog.solve()
    assert res.ok
    assert res.objective == pytest.approx(0.0, abs=1e-6)


def test_conic_infeasible():
    prog = ConvexProgram()
    x = prog.new_variable("x", 2)
    # ||x|| <= -1 is empty
    prog.add_second_order_cone(
        [], [[(x, np.eye(2)[i:i + 1])] for i in range(2)], bound_offset=-1.0)
    prog.add_linear_cost(x, [1.0, 0.0])
    assert prog.solve().status is SolveStatus.INFEASIBLE


def test_mixed_cone_and_inequality():
    # min x0 s.t. ||x|| <= 2, x0 >= -1  (inequality row alongside the cone)
    prog = ConvexProgram()
    x = prog.new_variable("x", 2)
    prog.add_second_order_cone(
        [], [[(x, np.eye(2)[i:i + 1])] for i in range(2)], bound_offset=2.0)
    prog.add_inequality([(x, -np.eye(2)[0:1])], 1.0)
    prog.add_linear_cost(x, [1.0, 0.0])
    res = prog.solve()
    assert res.ok
    assert res.objective == pytest.approx(-1.0, abs=1e-6)


def test_conic_engine_agrees_on_linear_program():
    def build():
        prog = ConvexProgram()
        z = prog.new_variable("z", 2, nonneg=True)
        prog.add_inequality([(z, -np.ones((1, 2)))], -1.0)
        prog.add_linear_cost(z, [1.0, 2.0])
        return prog
    assert build().solve(engine="conic").objective == pytest.approx(
        build().solve().objective, abs=1e-6)
    with pytest.raises(ValueError):
        build().solve(engine="simplex")


def test_duplicate_variable_name_rejected():
    prog = ConvexProgram()
    prog.new_variable("x", 1)
    with pytest.raises(ValueError):
        prog.new_variable("x", 2)


def test_coefficient_width_check():
    prog = ConvexProgram()
    x = prog.new_variable("x", 2)
    with pytest.raises(ValueError):
        prog.add_equality([(x, np.eye(3))], np.zeros(3))


def test_linear_cost_shape_check():
    prog = ConvexProgram()
    x = prog.new_variable("x", 2)
    with pytest.raises(ValueError):
        prog.add_linear_cost(x, [1.0, 2.0, 3.0])


def test_values_and_timing_populated():
    prog = ConvexProgram("probe")
    x = prog.new_variable("x", 1, nonneg=True)
    prog.add_linear_cost(x, [1.0])
    res = prog.solve()
    assert res.ok and res.solve_time > 0.0
    assert set(res.values) == {"x"}


def test_dump_mentions_structure():
    prog = ConvexProgram("demo")
    x = prog.new_variable("x", 2, nonneg=True)
    prog.add_equality([(x, np.ones((1, 2)))], 1.0, label="simplex")
    text = prog.dump()
    assert "demo" in text and "simplex" in text and "x[2]" in text
