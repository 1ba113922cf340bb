"""Budget layer: coverage objective, projection, solver, and implicit gradient."""

import itertools

import numpy as np
import pytest
from scipy.optimize import LinearConstraint, minimize

from dflab.errors import ConfigurationError, ValidationError
from dflab.layers import (
    BudgetProblem,
    budget_objective,
    budget_solve_exact,
    budget_solve_relaxed,
)
from dflab.layers.budget import (
    _leave_one_out,
    _obj_grad_a,
    _obj_hessian_a,
    _objective,
    _project,
)


def coverage_oracle(a, y):
    """Scalar-loop expected-users-reached, independent of the vectorized form."""
    total = 0.0
    for u in range(y.shape[1]):
        miss = 1.0
        for w in range(y.shape[0]):
            miss *= 1.0 - a[w] * y[w, u]
        total += 1.0 - miss
    return total


def random_ctr(rng, w=5, u=10, hi=0.2):
    return rng.uniform(0.0, hi, size=(w, u))


# ---------------------------------------------------------------- objective


def test_objective_matches_scalar_oracle():
    rng = np.random.default_rng(40)
    for _ in range(50):
        w, u = int(rng.integers(2, 7)), int(rng.integers(1, 12))
        y = rng.uniform(0, 1, size=(w, u))
        a = rng.uniform(0, 1, size=w)
        assert abs(budget_objective(a, y) - coverage_oracle(a, y)) < 1e-12


def test_objective_hand_example():
    y = np.array([[0.5, 0.2], [0.3, 0.4]])
    assert abs(budget_objective(np.array([1.0, 0.0]), y) - 0.7) < 1e-15
    # Both websites: user u reached with prob 1 - (1-y1u)(1-y2u).
    want = (1 - 0.5 * 0.7) + (1 - 0.8 * 0.6)
    assert abs(budget_objective(np.array([1.0, 1.0]), y) - want) < 1e-15


def test_objective_bounds():
    y = np.ones((3, 4))
    assert budget_objective(np.zeros(3), y) == 0.0
    assert budget_objective(np.ones(3), y) == 4.0


def test_objective_validates_ranges():
    y = np.full((2, 2), 0.5)
    with pytest.raises(ValidationError):
        budget_objective(np.array([1.2, 0.0]), y)
    with pytest.raises(ValidationError):
        budget_objective(np.array([0.5, 0.5]), np.full((2, 2), 1.5))
    with pytest.raises(ConfigurationError):
        budget_objective(np.zeros(3), y)


def test_grad_a_matches_finite_differences():
    rng = np.random.default_rng(41)
    h = 1e-6
    for _ in range(20):
        y = random_ctr(rng, w=4, u=6, hi=0.9)
        a = rng.uniform(0.05, 0.95, size=4)
        grad = _obj_grad_a(a, y)
        for w in range(4):
            ap, am = a.copy(), a.copy()
            ap[w] += h
            am[w] -= h
            fd = (_objective(ap, y) - _objective(am, y)) / (2 * h)
            assert abs(grad[w] - fd) < 1e-7


def test_hessian_a_matches_finite_differences():
    rng = np.random.default_rng(42)
    h = 1e-5
    for _ in range(10):
        y = random_ctr(rng, w=4, u=6, hi=0.9)
        a = rng.uniform(0.05, 0.95, size=4)
        hess = _obj_hessian_a(a, y)
        assert np.allclose(hess, hess.T, atol=1e-12)
        assert np.all(np.diag(hess) == 0.0)  # objective is linear in each a_w alone
        for w in range(4):
            ap, am = a.copy(), a.copy()
            ap[w] += h
            am[w] -= h
            fd = (_obj_grad_a(ap, y) - _obj_grad_a(am, y)) / (2 * h)
            assert np.max(np.abs(hess[:, w] - fd)) < 1e-6


def test_fast_and_slow_paths_agree():
    rng = np.random.default_rng(43)
    y = random_ctr(rng, w=4, u=5, hi=1.0)
    a = rng.uniform(0, 1, size=4)
    a[1] = 1.0
    y[1, 2] = 1.0  # m[1,2] = 0 forces the explicit-loop path
    m = 1.0 - a[:, None] * y
    assert np.min(m) == 0.0
    slow_loo = _leave_one_out(m)
    m_safe = np.maximum(m, 1e-3)
    fast_loo = _leave_one_out(m_safe)
    ref = np.array([np.prod(m_safe[np.arange(4) != i], axis=0) for i in range(4)])
    assert np.allclose(fast_loo, ref, rtol=1e-12)
    ref0 = np.array([np.prod(m[np.arange(4) != i], axis=0) for i in range(4)])
    assert np.allclose(slow_loo, ref0, rtol=1e-12)


# ---------------------------------------------------------------- projection


def projection_oracle(point, budget):
    n = len(point)
    res = minimize(
        lambda x: 0.5 * np.sum((x - point) ** 2),
        np.clip(point, 0, 1),
        jac=lambda x: x - point,
        bounds=[(0.0, 1.0)] * n,
        constraints=[LinearConstraint(np.ones(n), -np.inf, budget)],
        method="SLSQP",
        options={"ftol": 1e-14, "maxiter": 300},
    )
    assert res.success
    return res.x


def test_projection_matches_qp_oracle():
    rng = np.random.default_rng(44)
    for _ in range(60):
        n = int(rng.integers(2, 9))
        budget = float(rng.integers(1, n))
        point = rng.normal(scale=2.0, size=n)
        got = _project(point, budget)
        want = projection_oracle(point, budget)
        assert np.max(np.abs(got - want)) < 1e-7
        assert got.sum() <= budget + 1e-9
        assert np.all(got >= 0) and np.all(got <= 1)


def test_projection_identity_inside_set():
    a = np.array([0.3, 0.4, 0.1])
    assert np.array_equal(_project(a, 2.0), a)


def test_projection_exact_simplex_case():
    # All coordinates interior after the shift: tau = (sum - B)/n.
    a = np.array([0.6, 0.5, 0.4])
    got = _project(a, 1.0)
    assert np.allclose(got, a - 0.5 / 3, atol=1e-12)
    assert abs(got.sum() - 1.0) < 1e-12


# ---------------------------------------------------------------- solvers


def test_exact_matches_independent_enumeration():
    rng = np.random.default_rng(45)
    p = BudgetProblem(n_websites=5, n_users=4, budget=2)
    for _ in range(40):
        y = random_ctr(rng, 5, 4, hi=1.0)
        out = budget_solve_exact(p, y)
        best = max(
            coverage_oracle(np.eye(5)[list(s)].sum(axis=0), y)
            for s in itertools.combinations(range(5), 2)
        )
        assert abs(-out.loss - best) < 1e-12
        assert out.a.sum() == 2.0
        assert set(np.unique(out.a)) <= {0.0, 1.0}


def test_exact_uses_true_ctr_for_loss():
    p = BudgetProblem(n_websites=3, n_users=2, budget=1)
    y_hat = np.array([[0.9, 0.9], [0.1, 0.1], [0.0, 0.0]])
    y_true = np.array([[0.0, 0.0], [0.5, 0.5], [0.9, 0.9]])
    out = budget_solve_exact(p, y_hat, y_true)
    assert np.array_equal(out.a, [1.0, 0.0, 0.0])
    assert out.loss == 0.0  # picked site is worthless under the true CTRs


def test_relaxed_beats_multistart_oracle():
    rng = np.random.default_rng(46)
    p = BudgetProblem(n_websites=4, n_users=6, budget=2, gamma=0.1)
    cons = [LinearConstraint(np.ones(4), -np.inf, 2.0)]
    for _ in range(6):
        y = random_ctr(rng, 4, 6)
        out = budget_solve_relaxed(p, y)
        ours = budget_objective(out.a, y) - p.gamma * float(out.a @ out.a)
        best_ref = -np.inf
        for _ in range(30):
            res = minimize(
                lambda a: -(_objective(a, y) - p.gamma * a @ a),
                rng.uniform(0, 1, size=4),
                bounds=[(0.0, 1.0)] * 4,
                constraints=cons,
                method="SLSQP",
                options={"ftol": 1e-12, "maxiter": 300},
            )
            if res.success:
                best_ref = max(best_ref, -res.fun)
        assert ours >= best_ref - 1e-6


def test_relaxed_feasible_and_deterministic():
    rng = np.random.default_rng(47)
    p = BudgetProblem(n_websites=5, n_users=10, budget=2, gamma=0.1)
    y = random_ctr(rng)
    out1 = budget_solve_relaxed(p, y)
    out2 = budget_solve_relaxed(p, y)
    assert np.array_equal(out1.a, out2.a)
    assert np.array_equal(out1.grad_yhat, out2.grad_yhat)
    assert out1.a.sum() <= 2.0 + 1e-9
    assert np.all(out1.a >= 0) and np.all(out1.a <= 1)


def test_relaxed_gradient_matches_finite_differences():
    rng = np.random.default_rng(48)
    p = BudgetProblem(n_websites=4, n_users=5, budget=2, gamma=0.1)
    h = 1e-5
    checked = 0
    while checked < 6:
        y_hat = random_ctr(rng, 4, 5)
        y_true = random_ctr(rng, 4, 5)
        out = budget_solve_relaxed(p, y_hat, y_true)
        base_state = out.active_set
        if not any(s == 1 for s in base_state[1]):
            continue  # fully locked: gradient is identically zero by convention
        fd = np.zeros_like(y_hat)
        stable = True
        for w in range(4):
            for u in range(5):
                yp, ym = y_hat.copy(), y_hat.copy()
                yp[w, u] += h
                ym[w, u] -= h
                op = budget_solve_relaxed(p, yp, y_true)
                om = budget_solve_relaxed(p, ym, y_true)
                if op.active_set != base_state or om.active_set != base_state:
                    stable = False
                    break
                fd[w, u] = (op.loss - om.loss) / (2 * h)
            if not stable:
                break
        if not stable:
            continue
        checked += 1
        scale = max(1.0, float(np.max(np.abs(fd))))
        assert np.max(np.abs(out.grad_yhat - fd)) / scale < 1e-4


def test_vertex_locked_solution_has_zero_gradient():
    # Two sites with large disjoint audiences and two worthless ones: the
    # optimum is the 0/1 vertex (1,1,0,0), locally constant in y, so the
    # pullback is zero.
    p = BudgetProblem(n_websites=4, n_users=6, budget=2, gamma=0.1)
    y = np.zeros((4, 6))
    y[0, :3] = 0.9
    y[1, 3:] = 0.9
    out = budget_solve_relaxed(p, y)
    assert np.array_equal(out.a, [1.0, 1.0, 0.0, 0.0])
    assert not any(s == 1 for s in out.active_set[1])
    assert np.all(out.grad_yhat == 0.0)
    assert abs(out.a.sum() - 2.0) < 1e-9


def test_relaxed_validates_input():
    p = BudgetProblem(n_websites=3, n_users=2, budget=1)
    with pytest.raises(ConfigurationError):
        budget_solve_relaxed(p, np.zeros((2, 2)))
    with pytest.raises(ConfigurationError):
        budget_solve_relaxed(p, np.full((3, 2), np.nan))


def test_problem_validation():
    with pytest.raises(ConfigurationError):
        BudgetProblem(n_websites=3, budget=3).check()
    with pytest.raises(ConfigurationError):
        BudgetProblem(gamma=-1.0).check()
    with pytest.raises(ConfigurationError):
        BudgetProblem(fake_targets=-2).check()
