"""Knapsack layer: exact 0/1 solves for evaluation, a regularized QP for training.

Training differentiates through the concave relaxation

    max v.a - gamma * |a|^2   s.t.  w.a <= c,  0 <= a <= 1,

whose KKT system is solved exactly: the box-clipped stationary point
a_i(mu) = clip((v_i - mu*w_i) / (2*gamma), 0, 1) is monotone in the
capacity multiplier mu, so mu is found by bisection and then polished
on the identified active set. The gradient dL/dv comes from implicitly
differentiating the reduced KKT system (bound coordinates frozen, the
capacity row kept only when binding).

Evaluation uses the true integer program: dynamic programming over the
integer capacity (weighted variant) or best-k selection (unweighted).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, SolverError
from .types import DecisionOutput

# Coordinates closer than this to a bound are treated as bound-active.
ACTIVE_TOL = 1e-9
KKT_TOL = 1e-8
BISECT_ITERS = 120


@dataclass
class KnapsackProblem:
    weights: np.ndarray
    capacity: float
    variant: str = "unweighted"
    gamma: float = 0.1

    def check(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if self.variant not in ("unweighted", "weighted"):
            raise ConfigurationError(f"unknown knapsack variant {self.variant!r}")
        if self.variant == "unweighted" and not np.all(w == 1.0):
            raise ConfigurationError("unweighted variant requires all weights equal to 1")
        if np.any(w <= 0):
            raise ConfigurationError("weights must be positive")
        if not 0 < self.capacity < float(w.sum()):
            raise ConfigurationError(
                f"capacity must lie in (0, sum of weights); got {self.capacity}"
            )
        if self.gamma <= 0:
            raise ConfigurationError("relaxation strength gamma must be positive")

    @property
    def n_items(self) -> int:
        return len(self.weights)


def _clip_point(v: np.ndarray, w: np.ndarray, gamma: float, mu: float) -> np.ndarray:
    return np.clip((v - mu * w) / (2.0 * gamma), 0.0, 1.0)


def knapsack_solve_relaxed(
    p: KnapsackProblem, v_hat: np.ndarray, v_true: np.ndarray | None = None
) -> DecisionOutput:
    """Solve the regularized relaxation at v_hat; loss/gradient against v_true.

    v_true defaults to v_hat; the gradient flows through the decision
    only, with the evaluation target held fixed.
    """
    p.check()
    v = np.asarray(v_hat, dtype=float)
    w = np.asarray(p.weights, dtype=float)
    if v.shape != w.shape:
        raise ConfigurationError(f"expected {w.shape} values, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ConfigurationError("non-finite values passed to knapsack_solve_relaxed")
    gamma = p.gamma
    c = float(p.capacity)

    a0 = _clip_point(v, w, gamma, 0.0)
    capacity_active = float(w @ a0) > c
    if not capacity_active:
        mu = 0.0
        a = a0
    else:
        # w.a(mu) is continuous and nonincreasing; bracket then bisect.
        lo, hi = 0.0, float(np.max(v / w)) + 1.0
        for _ in range(BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            if float(w @ _clip_point(v, w, gamma, mid)) > c:
                lo = mid
            else:
                hi = mid
        mu = 0.5 * (lo + hi)
        a = _clip_point(v, w, gamma, mu)
        # Polish mu exactly on the identified active set.
        raw = (v - mu * w) / (2.0 * gamma)
        free = (raw > ACTIVE_TOL) & (raw < 1.0 - ACTIVE_TOL)
        at_one = raw >= 1.0 - ACTIVE_TOL
        wf2 = float(w[free] @ w[free])
        if wf2 > 0.0:
            mu_star = (float(w[free] @ v[free]) - 2.0 * gamma * (c - float(w[at_one].sum()))) / wf2
            if mu_star >= 0.0:
                a_star = _clip_point(v, w, gamma, mu_star)
                raw_star = (v - mu_star * w) / (2.0 * gamma)
                same_set = np.array_equal(
                    (raw_star > ACTIVE_TOL) & (raw_star < 1.0 - ACTIVE_TOL), free
                ) and np.array_equal(raw_star >= 1.0 - ACTIVE_TOL, at_one)
                if same_set and abs(float(w @ a_star) - c) <= KKT_TOL:
                    mu, a = mu_star, a_star

    residual = _kkt_residual(v, w, gamma, c, a, mu, capacity_active)
    if residual > KKT_TOL:
        raise SolverError(
            f"knapsack relaxation failed to reach KKT residual {KKT_TOL}", residual=residual
        )

    raw = (v - mu * w) / (2.0 * gamma)
    free = (raw > ACTIVE_TOL) & (raw < 1.0 - ACTIVE_TOL)
    target = v if v_true is None else np.asarray(v_true, dtype=float)
    loss = -float(target @ a)
    upstream = -target
    grad = np.zeros_like(v)
    if np.any(free):
        uf = upstream[free]
        if capacity_active:
            wf = w[free]
            grad[free] = (uf - wf * (float(wf @ uf) / float(wf @ wf))) / (2.0 * gamma)
        else:
            grad[free] = uf / (2.0 * gamma)
    state = np.where(free, 1, np.where(raw >= 1.0 - ACTIVE_TOL, 2, 0))
    return DecisionOutput(
        a=a, loss=loss, grad_yhat=grad, active_set=(capacity_active, tuple(int(s) for s in state))
    )


def _kkt_residual(v, w, gamma, c, a, mu, capacity_active) -> float:
    slack = c - float(w @ a)
    r = max(0.0, -slack)
    if capacity_active:
        r = max(r, abs(mu * slack))
    free = (a > ACTIVE_TOL) & (a < 1.0 - ACTIVE_TOL)
    if np.any(free):
        r = max(r, float(np.max(np.abs(v[free] - 2.0 * gamma * a[free] - mu * w[free]))))
    return r


def knapsack_solve_exact(
    p: KnapsackProblem, v_hat: np.ndarray, v_true: np.ndarray | None = None
) -> DecisionOutput:
    """Exact 0/1 optimum of v_hat.a subject to w.a <= c; loss against v_true."""
    p.check()
    v = np.asarray(v_hat, dtype=float)
    w = np.asarray(p.weights, dtype=float)
    if v.shape != w.shape:
        raise ConfigurationError(f"expected {w.shape} values, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ConfigurationError("non-finite values passed to knapsack_solve_exact")
    if np.any(np.abs(w - np.round(w)) > 1e-9) or abs(p.capacity - round(p.capacity)) > 1e-9:
        raise ConfigurationError("exact solve requires integer weights and capacity")

    if p.variant == "unweighted":
        a = _solve_top_k(v, int(round(p.capacity)))
    else:
        a = _solve_dp(v, np.round(w).astype(int), int(round(p.capacity)))
    target = v if v_true is None else np.asarray(v_true, dtype=float)
    return DecisionOutput(a=a, loss=-float(target @ a), grad_yhat=None)


def _solve_top_k(v: np.ndarray, k: int) -> np.ndarray:
    """Best selection of at most k items under unit weights: top positive values."""
    a = np.zeros_like(v)
    order = np.argsort(-v, kind="stable")
    for idx in order[:k]:
        if v[idx] > 0.0:
            a[idx] = 1.0
    return a


def _solve_dp(v: np.ndarray, w: np.ndarray, c: int) -> np.ndarray:
    """Classic 0/1 knapsack DP over integer capacity, with choice reconstruction."""
    n = len(v)
    best = np.zeros(c + 1)
    keep = np.zeros((n, c + 1), dtype=bool)
    for i in range(n):
        wi, vi = int(w[i]), v[i]
        if vi <= 0.0 or wi > c:
            continue
        cand = best[: c + 1 - wi] + vi
        improve = cand > best[wi:]
        keep[i, wi:] = improve
        best[wi:] = np.where(improve, cand, best[wi:])
    a = np.zeros(n)
    j = c
    for i in range(n - 1, -1, -1):
        if keep[i, j]:
            a[i] = 1.0
            j -= int(w[i])
    return a
