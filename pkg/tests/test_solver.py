import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ccfp.solver import ConicProgram, SolverOptions, Status, barrier_terms, diagnose, solve


def lp():
    prog = ConicProgram()
    x = prog.var("x", 1)
    prog.add("bounds", [x >= 3])
    prog.minimize(cp.sum(x))
    return prog


def test_lp():
    sol = solve(lp())
    assert sol.status is Status.OPTIMAL and sol.backend == "CLARABEL"
    assert sol.values["x"][0] == pytest.approx(3.0, abs=1e-7)


def test_soc_projection():
    prog = ConicProgram()
    x = prog.var("x", 3)
    t = prog.var("t", 1)
    c = np.array([1.0, 2.0, 3.0])
    prog.add("soc", [cp.SOC(t[0], x - c)])
    prog.minimize(cp.sum(t))
    sol = solve(prog)
    assert np.allclose(sol.values["x"], c, atol=1e-6)
    assert sol.objective_value == pytest.approx(0.0, abs=1e-7)


def barrier_1d(exp_cone=True):
    # -log(x) + x has its minimum 1 at x = 1
    prog = ConicProgram()
    x = prog.var("x", 1)
    prog.add("box", [x <= 10])
    prog.add_log_barrier(x, 1.0, upper=10.0, lower=0.01)
    prog.minimize(cp.sum(x))
    return prog, SolverOptions(exp_cone=exp_cone)


def test_exp_cone_barrier():
    prog, opts = barrier_1d()
    sol = solve(prog, opts)
    assert sol.objective_value == pytest.approx(1.0, abs=1e-7)
    # the objective is flat near the optimum: f(x) - 1 ~ (x - 1)^2 / 2
    assert sol.values["x"][0] == pytest.approx(1.0, abs=1e-3)


def test_pwl_barrier_fallback_is_an_underestimate():
    prog, opts = barrier_1d(exp_cone=False)
    sol = solve(prog, opts)
    x = sol.values["x"][0]
    assert sol.objective_value <= -np.log(x) + x + 1e-7
    assert sol.objective_value == pytest.approx(1.0, abs=0.05)


def test_barrier_zero_weight_adds_nothing():
    prog = ConicProgram()
    a, b = prog.var("a", 3), prog.var("b", 3)
    barrier_terms(prog, [(a, b, (0, 0, 0))])
    assert prog.barriers == []
    with pytest.raises(ValueError):
        barrier_terms(prog, [(a, b, (0, 0, -1))])


@pytest.mark.parametrize("upper", [1.0, 0.4])
def test_barrier_pushes_to_upper_bound(upper):
    prog = ConicProgram()
    a, b = prog.var("a", 3), prog.var("b", 3)
    prog.add("pin", [a == 0, b[:2] == 0, b[2] <= upper])
    barrier_terms(prog, [(a, b, (0, 0, 1))], upper=upper)
    sol = solve(prog)
    assert sol.values["b"][2] == pytest.approx(upper, abs=1e-6)


def test_fallback_marks_inaccurate():
    prog = ConicProgram()
    x = prog.var("x", 2)
    prog.add("lin", [x >= [1, 2], cp.sum(x) <= 10])
    prog.add("soc", [cp.SOC(5.0, x)])
    prog.minimize(cp.sum(x))
    sol = solve(prog, SolverOptions(primary="NO_SUCH_SOLVER"))
    assert sol.status is Status.INACCURATE and sol.backend == "SCS"
    assert np.allclose(sol.values["x"], [1, 2], atol=1e-3)
    assert max(sol.residuals.values()) <= 1e-4


def test_infeasible_is_reported_with_groups():
    prog = ConicProgram()
    x = prog.var("x", 1)
    prog.add("low", [x <= 0])
    prog.add("high", [x >= 1])
    prog.add("box", [x <= 5])
    prog.minimize(cp.sum(x))
    sol = solve(prog)
    assert sol.status is Status.INFEASIBLE and not sol.ok
    assert diagnose(prog) == {"low": True, "high": True, "box": False}


def test_unbounded():
    prog = ConicProgram()
    x = prog.var("x", 1)
    prog.add("up", [x <= 0])
    prog.minimize(cp.sum(x))
    assert solve(prog).status is Status.UNBOUNDED


def test_dump(tmp_path):
    prog, _ = barrier_1d()
    prog.dump(tmp_path / "p.cbf")
    text = (tmp_path / "p.cbf").read_text()
    assert "EXP 1" in text and text.startswith("VER")


def qp(c):
    prog = ConicProgram()
    x = prog.var("x", 3)
    prog.add("lin", [cp.sum(x) == 1, x >= 0])
    prog.minimize(cp.sum_squares(x - c))
    return prog


vec = st.lists(st.floats(-3, 3), min_size=3, max_size=3).map(np.array)


@given(vec)
def test_deterministic_and_not_worse_than_feasible_points(c):
    a, b = solve(qp(c)), solve(qp(c))
    assert abs(a.objective_value - b.objective_value) <= 1e-10
    for p in np.eye(3).tolist() + [[1 / 3] * 3]:
        assert a.objective_value <= np.sum((np.array(p) - c) ** 2) + 1e-7
