import os

import numpy as np
import pytest

from tems import lp_core as lp
from tems.errors import UnknownName


def test_min_x_with_lower_bound():
    m = lp.LpModel()
    x = m.add_vars("x", 1)
    m.add_rows(np.array([[-1.0]]), x, lp.LEQ, [-3.0])
    m.add_objective(x, [1.0])
    sol = lp.solve(m)
    assert sol.status == lp.OPTIMAL
    assert sol.x[0] == pytest.approx(3.0)
    assert sol.objective_value == pytest.approx(3.0)


def test_infeasible_pair_is_a_status_not_an_exception():
    m = lp.LpModel()
    x = m.add_vars("x", 1)
    m.add_rows(np.array([[1.0]]), x, lp.LEQ, [-1.0])
    m.add_rows(np.array([[-1.0]]), x, lp.LEQ, [-1.0])
    sol = lp.solve(m)
    assert sol.status == lp.INFEASIBLE


def test_unbounded_status():
    m = lp.LpModel()
    x = m.add_vars("x", 1)
    m.add_objective(x, [-1.0])
    m.add_rows(np.array([[-1.0]]), x, lp.LEQ, [0.0])
    sol = lp.solve(m)
    assert sol.status == lp.UNBOUNDED


def test_scalar_invariant_tube_rhs_matches_geometric_series():
    # tube rhs for a_cl = 0.5, T = [1; -1], w in [-0.1, 0.1]: the fixed point
    # of tau = 0.5 tau + 0.1 in both rows, i.e. sum_k 0.5^k * 0.1 = 0.2
    P_hat = np.array([[0.5, 0.0], [0.0, 0.5]])
    T_hat = np.array([[1.0], [-1.0]])
    m = lp.LpModel()
    tau = m.add_vars("tau", 2, lb=0.0)
    for w in (-0.1, 0.1):
        m.add_rows(P_hat - np.eye(2), tau, lp.LEQ, -(T_hat * w).ravel())
    m.add_objective(tau, np.ones(2))
    sol = lp.solve(m)
    assert sol.status == lp.OPTIMAL
    assert np.allclose(lp.extract(m, sol, "tau"), [0.2, 0.2], atol=1e-9)


def test_extract_blocks_and_unknown_name():
    m = lp.LpModel()
    a = m.add_vars("v[k=0,j=1]", 2)
    b = m.add_vars("tau[k=1,j=1]", 3, lb=0.0)
    m.add_rows(np.eye(2), a, lp.EQ, [1.0, 2.0])
    m.add_rows(np.eye(3), b, lp.EQ, [3.0, 4.0, 5.0])
    sol = lp.solve(m)
    assert np.allclose(lp.extract(m, sol, "v[k=0,j=1]"), [1.0, 2.0])
    assert lp.extract(m, sol, "tau[k=1,j=1]").shape == (3,)
    with pytest.raises(UnknownName):
        lp.extract(m, sol, "nope")


def _sample_model(scale=1.0):
    rng = np.random.default_rng(0)
    m = lp.LpModel()
    x = m.add_vars("x", 5)
    A = rng.normal(size=(12, 5))
    b = rng.uniform(1.0, 2.0, size=12)
    m.add_rows(A, x, lp.LEQ, b)
    m.add_objective(x, scale * rng.normal(size=5))
    return m


def test_determinism_across_repeated_solves():
    sols = [lp.solve(_sample_model()) for _ in range(3)]
    assert len({s.status for s in sols}) == 1
    assert max(abs(sols[0].objective_value - s.objective_value) for s in sols) <= 1e-9
    assert all(np.array_equal(sols[0].x, s.x) for s in sols)


def test_objective_scaling_preserves_argmin():
    s1 = lp.solve(_sample_model(1.0))
    s3 = lp.solve(_sample_model(3.0))
    assert np.max(np.abs(s1.x - s3.x)) <= 1e-6
    assert s3.objective_value == pytest.approx(3.0 * s1.objective_value, abs=1e-8)


def test_optimal_solution_invariants():
    m = _sample_model()
    settings = lp.SolverSettings()
    sol = lp.solve(m, settings)
    assert sol.status == lp.OPTIMAL
    assert sol.max_violation <= settings.primal_tol
    asm = m.assembled()
    assert abs(sol.objective_value - asm.c @ sol.x) <= 1e-6 * (1 + abs(sol.objective_value))


def test_rhs_update_resolves_without_reassembly():
    m = lp.LpModel()
    x = m.add_vars("x", 1)
    row = m.add_rows(np.array([[-1.0]]), x, lp.LEQ, [-3.0])
    m.add_objective(x, [1.0])
    assert lp.solve(m).x[0] == pytest.approx(3.0)
    m.set_rhs(row, [-7.0])
    assert lp.solve(m).x[0] == pytest.approx(7.0)


def test_lp_text_dump(tmp_path):
    m = _sample_model()
    path = os.path.join(tmp_path, "model.lp")
    lp.dump_lp(m, path)
    text = open(path).read()
    assert "Minimize" in text and "Subject To" in text and "Bounds" in text


def test_settings_validation():
    with pytest.raises(ValueError):
        lp.SolverSettings(primal_tol=-1.0)
