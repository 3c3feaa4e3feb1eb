import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from consec_rm.lpsolve import (AutoSolver, BadBounds, DuplicateName, HighsSolver, LpModel, LpStatus,
                               SimplexSolver, get_solver, solve, to_lp_text, write_lp)

SOLVERS = ["simplex", "highs"]


def test_add_var_and_duplicates():
    m = LpModel()
    x = m.add_var("x")
    assert m.var("x") == x and m.num_vars == 1
    with pytest.raises(DuplicateName):
        m.add_var("x")
    with pytest.raises(BadBounds):
        m.add_var("y", lower=2, upper=1)


def test_constraint_with_undeclared_var():
    m, other = LpModel(), LpModel()
    z = other.add_var("z")
    with pytest.raises(KeyError):
        m.add_constraint({z: 1}, "<=", 1)
    m.add_var("x")
    with pytest.raises(ValueError):
        m.add_constraint({m.var("x"): 1}, ">=", 1)


@pytest.mark.parametrize("solver", SOLVERS)
def test_bounded(solver):
    m = LpModel()
    x = m.add_var("x")
    m.add_constraint({x: 1}, "<=", 3)
    m.set_objective({x: 1})
    sol = solve(m, solver)
    assert sol.status is LpStatus.OPTIMAL and sol.objective == pytest.approx(3.0, abs=1e-9)
    assert sol[x] == pytest.approx(3.0)


@pytest.mark.parametrize("solver", SOLVERS)
def test_unbounded(solver):
    m = LpModel()
    x = m.add_var("x")
    m.set_objective({x: 1})
    assert solve(m, solver).status is LpStatus.UNBOUNDED


@pytest.mark.parametrize("solver", SOLVERS)
def test_infeasible(solver):
    m = LpModel()
    x = m.add_var("x")
    m.add_constraint({x: 1}, "<=", -1)
    assert solve(m, solver).status is LpStatus.INFEASIBLE


@pytest.mark.parametrize("solver", SOLVERS)
def test_textbook_problem(solver):
    # max 3a + 5b, a <= 4, 2b <= 12, 3a + 2b <= 18  ->  36 at (2, 6)
    m = LpModel()
    a, b = m.add_var("a"), m.add_var("b")
    m.add_constraint({a: 1}, "<=", 4)
    m.add_constraint({b: 2}, "<=", 12)
    m.add_constraint({a: 3, b: 2}, "<=", 18)
    m.set_objective({a: 3, b: 5})
    sol = solve(m, solver)
    assert sol.objective == pytest.approx(36.0, abs=1e-9)
    assert (sol[a], sol[b]) == pytest.approx((2.0, 6.0), abs=1e-9)


@pytest.mark.parametrize("solver", SOLVERS)
def test_equalities_free_and_shifted_bounds(solver):
    m = LpModel()
    x = m.add_var("x", lower=-np.inf)
    y = m.add_var("y", lower=1, upper=4)
    z = m.add_var("z", lower=-np.inf, upper=2)
    m.add_constraint({x: 1, y: 1}, "=", 3)
    m.add_constraint({x: 1, z: -1}, "<=", 0)
    m.set_objective({x: 2, y: 1, z: 1})
    sol = solve(m, solver)
    # x = 3 - y, x <= z <= 2 -> y >= 1; objective 6 - y + z maximized at y=1, z=2
    assert sol.objective == pytest.approx(7.0, abs=1e-9)
    assert m.max_violation(sol.values) <= 1e-9


def test_redundant_equalities():
    m = LpModel()
    x, y = m.add_var("x"), m.add_var("y")
    m.add_constraint({x: 1, y: 1}, "=", 1)
    m.add_constraint({x: 2, y: 2}, "=", 2)
    m.set_objective({x: 1, y: 2})
    sol = solve(m, "simplex")
    assert sol.objective == pytest.approx(2.0, abs=1e-12)


def test_degenerate_cycling_example():
    # Beale's example cycles under the textbook largest-coefficient rule
    m = LpModel()
    x = [m.add_var(f"x{i}") for i in range(4)]
    m.add_constraint({x[0]: 0.25, x[1]: -60, x[2]: -1 / 25, x[3]: 9}, "<=", 0)
    m.add_constraint({x[0]: 0.5, x[1]: -90, x[2]: -1 / 50, x[3]: 3}, "<=", 0)
    m.add_constraint({x[2]: 1}, "<=", 1)
    m.set_objective({x[0]: 0.75, x[1]: -150, x[2]: 1 / 50, x[3]: -6})
    sol = SimplexSolver().solve(m)
    assert sol.optimal and sol.objective == pytest.approx(0.05, abs=1e-12)


def test_iteration_limit():
    m = LpModel()
    a, b = m.add_var("a"), m.add_var("b")
    m.add_constraint({a: 1, b: 1}, "<=", 4)
    m.add_constraint({a: 1, b: 3}, "<=", 6)
    m.add_constraint({a: 1, b: -1}, "=", 1)
    m.set_objective({a: 1, b: 2})
    assert SimplexSolver(max_iter=0).solve(m).status is LpStatus.ITERATION_LIMIT


def test_duality_gap_reported():
    m = LpModel()
    a, b = m.add_var("a"), m.add_var("b")
    m.add_constraint({a: 1, b: 2}, "<=", 4)
    m.add_constraint({a: 3, b: 1}, "<=", 6)
    m.set_objective({a: 1, b: 1})
    sol = SimplexSolver().solve(m)
    assert sol.duality_gap <= 1e-9


def test_solver_lookup():
    assert isinstance(get_solver(None), SimplexSolver)
    assert isinstance(get_solver("highs"), HighsSolver)
    assert isinstance(get_solver("auto"), AutoSolver)
    s = SimplexSolver()
    assert get_solver(s) is s


def test_lp_text(tmp_path):
    m = LpModel("demo")
    x, y = m.add_var("x[1]"), m.add_var("y", upper=2)
    m.add_constraint({x: 1, y: -1}, "<=", 1, name="cap")
    m.set_objective({x: 1, y: 1})
    text = to_lp_text(m)
    assert "Maximize" in text and "Bounds" in text
    assert "cap:" in text and "x_1_" in text and "End" in text
    write_lp(m, tmp_path / "m.lp")
    assert (tmp_path / "m.lp").read_text() == text


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_simplex_agrees_with_highs_on_random_packing(n, m_rows, seed):
    rng = np.random.default_rng(seed)
    A = np.round(rng.uniform(-1, 3, size=(m_rows, n)), 2)
    b = np.round(rng.uniform(0, 5, size=m_rows), 2)
    c = np.round(rng.uniform(-1, 4, size=n), 2)
    model = LpModel()
    xs = [model.add_var(f"x{i}", upper=float(rng.choice([np.inf, 3.0]))) for i in range(n)]
    for i in range(m_rows):
        model.add_constraint(dict(zip(xs, A[i])), "<=", b[i])
    if rng.random() < 0.5:
        model.add_constraint(dict(zip(xs, np.ones(n))), "=", float(b[0]))
    model.set_objective(dict(zip(xs, c)))
    s1, s2 = solve(model, "simplex"), solve(model, "highs")
    assert s1.status == s2.status
    if s1.optimal:
        assert s1.objective == pytest.approx(s2.objective, abs=1e-7)
        assert model.max_violation(s1.values) <= 1e-7
