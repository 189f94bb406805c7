import numpy as np
import pytest
from scipy.optimize import minimize

from lifeloop.qp import solve_qp


def test_unconstrained_minimiser():
    G = np.array([[4.0, 1.0], [1.0, 3.0]])
    a = np.array([1.0, 2.0])
    r = solve_qp(G, a)
    assert r.ok
    assert np.allclose(r.x, np.linalg.solve(G, -a), atol=1e-12)


def test_single_active_bound_closed_form():
    # min (x-2)^2 + (y-1)^2  s.t. x <= 1  ->  (1, 1), multiplier 2
    r = solve_qp(2 * np.eye(2), np.array([-4.0, -2.0]), np.array([[-1.0, 0.0]]), [-1.0])
    assert r.ok
    assert np.allclose(r.x, [1.0, 1.0], atol=1e-12)
    assert r.multipliers[0] == pytest.approx(2.0, abs=1e-12)


def test_equality_row():
    # min x^2 + y^2  s.t. x + y = 1
    r = solve_qp(2 * np.eye(2), np.zeros(2), np.array([[1.0, 1.0]]), [1.0], meq=1)
    assert np.allclose(r.x, [0.5, 0.5], atol=1e-12)


def test_every_constraint_active():
    # box corner: all three lower bounds bind
    G = np.eye(3)
    a = np.array([1.0, 2.0, 3.0])
    r = solve_qp(G, a, np.eye(3), np.zeros(3))
    assert r.ok
    assert np.allclose(r.x, 0.0, atol=1e-14)
    assert np.allclose(r.multipliers, a, atol=1e-12)


def test_infeasible_detected():
    C = np.array([[1.0], [-1.0]])
    r = solve_qp(np.eye(1), np.zeros(1), C, [1.0, 0.0])   # x >= 1 and x <= 0
    assert r.status == "infeasible"
    assert not r.ok


def test_nonfinite_data_rejected():
    with pytest.raises(ValueError):
        solve_qp(np.eye(2), np.array([np.nan, 0.0]))


def test_indefinite_hessian_reported():
    r = solve_qp(np.diag([1.0, -1.0]), np.zeros(2))
    assert r.status == "singular"


@pytest.mark.parametrize("seed", range(20))
def test_matches_general_solver_on_random_problems(seed):
    rng = np.random.default_rng(seed)
    n, m = 5, 8
    M = rng.standard_normal((n, n))
    G = M @ M.T + n * np.eye(n)
    a = rng.standard_normal(n)
    C = rng.standard_normal((m, n))
    b = C @ rng.standard_normal(n) - rng.uniform(0.0, 1.0, m)   # feasible by construction
    r = solve_qp(G, a, C, b)
    assert r.ok
    assert np.all(C @ r.x >= b - 1e-9)
    ref = minimize(lambda x: 0.5 * x @ G @ x + a @ x, np.zeros(n), jac=lambda x: G @ x + a,
                   constraints=[{"type": "ineq", "fun": lambda x: C @ x - b, "jac": lambda x: C}],
                   method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
    f = lambda x: 0.5 * x @ G @ x + a @ x
    assert f(r.x) <= f(ref.x) + 1e-8
    # KKT: stationarity with non-negative multipliers
    assert np.all(r.multipliers >= -1e-12)
    assert np.allclose(G @ r.x + a, C.T @ r.multipliers, atol=1e-8)
