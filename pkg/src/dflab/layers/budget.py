"""Budget-allocation layer: pick B of W websites to maximize expected user reach.

The objective is multilinear in the selection vector a:

    f(a, y) = sum_u (1 - prod_w (1 - a_w * y_wu)),

the expected number of users reached when website w is used with
intensity a_w and clicks through user u with probability y_wu.

Evaluation enumerates all C(W, B) subsets exactly. Training maximizes
the gamma-regularized relaxation f(a, y) - gamma*|a|^2 over
{0 <= a <= 1, sum(a) <= B} by projected gradient ascent from several
deterministic starts, polishes the best point with Newton steps on the
active-set KKT system, and differentiates that system implicitly for
dL/dy.

Derivatives use the product trick loo[w] = P / m[w] with
P = prod_w m[w] whenever every m entry is safely positive, falling back
to explicit leave-one-out products when some a_w * y_wu is at 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ..errors import ConfigurationError, SolverError, ValidationError
from .types import DecisionOutput

ACTIVE_TOL = 1e-7
RESIDUAL_TOL = 1e-6
PGA_ITER_DEFAULT = 5000
FASTPATH_MIN = 1e-9


@dataclass
class BudgetProblem:
    n_websites: int = 5
    n_users: int = 10
    budget: int = 2
    fake_targets: int = 0
    gamma: float = 0.1
    max_iters: int = PGA_ITER_DEFAULT

    def check(self) -> None:
        if not 0 < self.budget < self.n_websites:
            raise ConfigurationError(
                f"budget must lie in (0, n_websites); got {self.budget} of {self.n_websites}"
            )
        if self.gamma <= 0:
            raise ConfigurationError("relaxation strength gamma must be positive")
        if self.fake_targets < 0:
            raise ConfigurationError("fake_targets must be >= 0")


def _check_ctr(p: BudgetProblem, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (p.n_websites, p.n_users):
        raise ConfigurationError(
            f"expected CTR matrix of shape ({p.n_websites}, {p.n_users}), got {y.shape}"
        )
    return y


def _objective(a: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(1.0 - np.prod(1.0 - a[:, None] * y, axis=0)))


def budget_objective(a: np.ndarray, y: np.ndarray) -> float:
    """Expected users reached; validates a in [0,1]^W and y in [0,1]^(W x U)."""
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    if a.ndim != 1 or y.ndim != 2 or y.shape[0] != a.shape[0]:
        raise ConfigurationError(f"shape mismatch: a {a.shape} vs y {y.shape}")
    if np.any(a < 0.0) or np.any(a > 1.0):
        raise ValidationError("selection vector entries must lie in [0,1]")
    if np.any(y < 0.0) or np.any(y > 1.0):
        raise ValidationError("CTR entries must lie in [0,1]")
    return _objective(a, y)


def _leave_one_out(m: np.ndarray) -> np.ndarray:
    """Row w of the result is the column-wise product of all rows of m except w."""
    w = m.shape[0]
    if m.min() > FASTPATH_MIN:
        return m.prod(axis=0) / m
    out = np.empty_like(m)
    for i in range(w):
        out[i] = np.prod(m[np.arange(w) != i], axis=0)
    return out


def _obj_grad_a(a: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Closed-form partials df/da_w = sum_u y_wu prod_{w'!=w} (1 - a_w' y_w'u)."""
    m = 1.0 - a[:, None] * y
    return (y * _leave_one_out(m)).sum(axis=1)


def _obj_hessian_a(a: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d2f/da_w da_v: zero diagonal, -sum_u y_wu y_vu prod_{w' not in {w,v}} m."""
    w_count = len(a)
    m = 1.0 - a[:, None] * y
    if np.min(m) > FASTPATH_MIN:
        t = (y / m) * np.sqrt(np.prod(m, axis=0))
        h = -(t @ t.T)
    else:
        h = np.zeros((w_count, w_count))
        for v in range(w_count):
            mv = m.copy()
            mv[v] = 1.0
            loo_v = _leave_one_out(mv)  # row w: prod over w' not in {w, v}
            for w in range(w_count):
                if w != v:
                    h[w, v] = -float(np.sum(y[w] * y[v] * loo_v[w]))
    np.fill_diagonal(h, 0.0)
    return h


def _project(a: np.ndarray, budget: float) -> np.ndarray:
    """Euclidean projection onto {0 <= x <= 1, sum(x) <= budget}.

    When the clipped point overshoots the budget, the projection is
    clip(a - tau, 0, 1) with the exact tau found on the piecewise-linear
    breakpoint grid of sum(clip(a - tau, 0, 1)).
    """
    # minimum/maximum instead of np.clip: same values, far less call overhead
    # on the tiny vectors this sees thousands of times per solve.
    clipped = np.minimum(np.maximum(a, 0.0), 1.0)
    if clipped.sum() <= budget:
        return clipped
    taus = np.unique(np.concatenate([a - 1.0, a]))
    sums = np.minimum(np.maximum(a[None, :] - taus[:, None], 0.0), 1.0).sum(axis=1)
    # sums is nonincreasing in tau; find the segment bracketing the budget.
    j = int(np.searchsorted(-sums, -budget))
    if j == 0:
        tau = taus[0]
    elif j >= len(taus):
        tau = taus[-1]
    else:
        lo, hi = taus[j - 1], taus[j]
        s_lo, s_hi = sums[j - 1], sums[j]
        tau = lo if s_lo == s_hi else lo + (s_lo - budget) * (hi - lo) / (s_lo - s_hi)
    return np.minimum(np.maximum(a - tau, 0.0), 1.0)


def _regularized_value(p: BudgetProblem, y: np.ndarray, a: np.ndarray) -> float:
    return _objective(a, y) - p.gamma * float(a @ a)


def _natural_residual(p: BudgetProblem, y: np.ndarray, a: np.ndarray) -> float:
    grad = _obj_grad_a(a, y) - 2.0 * p.gamma * a
    return float(np.linalg.norm(a - _project(a + grad, p.budget)))


def _pga(p: BudgetProblem, y: np.ndarray, start: np.ndarray) -> np.ndarray:
    """Projected gradient ascent with a 1/L step; loose tolerance, polished later."""
    lipschitz = float(np.max(np.sum(np.abs(y @ y.T), axis=1))) + 2.0 * p.gamma
    step = 1.0 / lipschitz
    a = _project(start, p.budget)
    for _ in range(p.max_iters):
        grad = _obj_grad_a(a, y) - 2.0 * p.gamma * a
        a_next = _project(a + step * grad, p.budget)
        move = float(np.abs(a_next - a).max())
        a = a_next
        if move <= 1e-10:
            break
    return a


def _newton_polish(p: BudgetProblem, y: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Sharpen a near-solution by Newton steps on the reduced KKT system."""
    budget = float(p.budget)
    for _ in range(12):
        grad = _obj_grad_a(a, y) - 2.0 * p.gamma * a
        free = (a > ACTIVE_TOL) & (a < 1.0 - ACTIVE_TOL)
        if not np.any(free):
            break
        idx = np.flatnonzero(free)
        k = len(idx)
        h = (_obj_hessian_a(a, y) - 2.0 * p.gamma * np.eye(len(a)))[np.ix_(idx, idx)]
        budget_tight = a.sum() >= budget - ACTIVE_TOL
        if budget_tight:
            mu = float(np.mean(grad[idx]))
            if mu < 0.0:
                budget_tight = False
        try:
            if budget_tight:
                kkt = np.zeros((k + 1, k + 1))
                kkt[:k, :k] = h
                kkt[:k, k] = -1.0
                kkt[k, :k] = 1.0
                rhs = np.concatenate([-(grad[idx] - mu), [budget - a.sum()]])
                step_a = np.linalg.solve(kkt, rhs)[:k]
            else:
                step_a = np.linalg.solve(h, -grad[idx])
        except np.linalg.LinAlgError:
            break
        trial = a.copy()
        trial[idx] = trial[idx] + step_a
        if np.any(trial < -1e-12) or np.any(trial > 1.0 + 1e-12) or trial.sum() > budget + 1e-9:
            break
        trial = np.clip(trial, 0.0, 1.0)
        if _regularized_value(p, y, trial) < _regularized_value(p, y, a) - 1e-12:
            break
        a = trial
        if float(np.max(np.abs(step_a))) < 1e-13:
            break
    return a


def budget_solve_relaxed(
    p: BudgetProblem, y_hat: np.ndarray, y_true: np.ndarray | None = None
) -> DecisionOutput:
    """Maximize the regularized relaxation at y_hat; loss/gradient against y_true.

    y_true defaults to y_hat; the gradient flows through the decision
    only, with the evaluation target held fixed.
    """
    p.check()
    y = _check_ctr(p, y_hat)
    if not np.all(np.isfinite(y)):
        raise ConfigurationError("non-finite CTR predictions")

    w_count = p.n_websites
    center = np.full(w_count, min(p.budget / w_count, 1.0))
    greedy = np.zeros(w_count)
    greedy[np.argsort(-y.sum(axis=1), kind="stable")[: p.budget]] = 1.0
    starts = [np.zeros(w_count), center, greedy, 0.5 * greedy + 0.5 * center]

    best_a, best_val = None, -np.inf
    for start in starts:
        a_run = _pga(p, y, start)
        val = _regularized_value(p, y, a_run)
        if val > best_val + 1e-12:
            best_a, best_val = a_run, val
    a = _newton_polish(p, y, best_a)
    residual = _natural_residual(p, y, a)
    if residual > RESIDUAL_TOL:
        raise SolverError(
            f"budget relaxation failed to reach first-order residual {RESIDUAL_TOL}",
            residual=residual,
        )

    target = y if y_true is None else _check_ctr(p, y_true)
    loss = -_objective(a, target)
    grad = _implicit_grad_y(p, y, a, target)
    free = (a > ACTIVE_TOL) & (a < 1.0 - ACTIVE_TOL)
    budget_tight = a.sum() >= p.budget - ACTIVE_TOL
    state = np.where(free, 1, np.where(a >= 1.0 - ACTIVE_TOL, 2, 0))
    return DecisionOutput(
        a=a,
        loss=loss,
        grad_yhat=grad,
        active_set=(bool(budget_tight), tuple(int(s) for s in state)),
    )


def _implicit_grad_y(
    p: BudgetProblem, y: np.ndarray, a: np.ndarray, target: np.ndarray
) -> np.ndarray:
    """dL/dy via the implicitly differentiated reduced KKT system.

    L = -f(a*(y), target); bound coordinates are locally constant, so the
    gradient flows only through the free block. A fully vertex-locked
    solution therefore has zero gradient (the locally-constant-subgradient
    convention).
    """
    free = (a > ACTIVE_TOL) & (a < 1.0 - ACTIVE_TOL)
    grad_y = np.zeros_like(y)
    if not np.any(free):
        return grad_y
    idx = np.flatnonzero(free)
    k = len(idx)
    h = (_obj_hessian_a(a, y) - 2.0 * p.gamma * np.eye(len(a)))[np.ix_(idx, idx)]
    upstream = -_obj_grad_a(a, target)[idx]

    grad_f = _obj_grad_a(a, y) - 2.0 * p.gamma * a
    budget_tight = a.sum() >= p.budget - ACTIVE_TOL and float(np.mean(grad_f[idx])) > ACTIVE_TOL
    try:
        if budget_tight:
            kkt = np.zeros((k + 1, k + 1))
            kkt[:k, :k] = h
            kkt[:k, k] = -1.0
            kkt[k, :k] = 1.0
            z = np.linalg.solve(kkt.T, np.concatenate([upstream, [0.0]]))[:k]
        else:
            z = np.linalg.solve(h, upstream)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"singular reduced KKT system in budget layer: {exc}") from exc

    # grad_y[v,u] = -d/dy_vu of sum_{w in F} z_w * g_w(a, y), with a held fixed:
    #   direct term   z_v * prod_{w'!=v} m[w']                  (v free only)
    #   cross terms   sum_{w in F, w!=v} z_w y_wu (-a_v) prod_{w' not in {w,v}} m[w'].
    m = 1.0 - a[:, None] * y
    loo = _leave_one_out(m)
    z_full = np.zeros(len(a))
    z_full[idx] = z
    if np.min(m) > FASTPATH_MIN:
        # row w of zt: z_w y_wu prod_{w'!=w} m; z_full is zero off the free set,
        # so sums over rows of zt already range over w in F only.
        zt = z_full[:, None] * y * loo
        s = zt.sum(axis=0)
        cross = -a[:, None] * (s[None, :] - zt) / m
        grad_y = -(z_full[:, None] * loo + cross)
    else:
        for v in range(len(a)):
            mv = m.copy()
            mv[v] = 1.0
            loo_v = _leave_one_out(mv)  # row w: prod over w' not in {w, v}
            term = z_full[v] * loo[v] if free[v] else np.zeros(y.shape[1])
            cross = np.zeros(y.shape[1])
            for w in idx:
                if w != v:
                    cross += z_full[w] * y[w] * (-a[v]) * loo_v[w]
            grad_y[v] = -(term + cross)
    return grad_y


def budget_solve_exact(
    p: BudgetProblem, y_hat: np.ndarray, y_true: np.ndarray | None = None
) -> DecisionOutput:
    """Enumerate all C(W, B) subsets of exactly B websites; loss against y_true.

    CTR range is not validated here: the worst-case-regret path
    deliberately calls this with negated CTRs.
    """
    p.check()
    y = _check_ctr(p, y_hat)
    best_a, best_val = None, -np.inf
    for subset in combinations(range(p.n_websites), p.budget):
        a = np.zeros(p.n_websites)
        a[list(subset)] = 1.0
        val = _objective(a, y)
        if val > best_val:
            best_a, best_val = a, val
    target = y if y_true is None else _check_ctr(p, y_true)
    return DecisionOutput(a=best_a, loss=-_objective(best_a, target), grad_yhat=None)
