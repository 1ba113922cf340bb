"""Chain rule between the prediction model and the decision layers.

Each pullback runs the model on one instance's feature rows, solves the
relaxed decision problem at the predictions, and pushes the decision
loss gradient back to the flat parameter vector:

    dL_dec/dtheta = (dyhat/dtheta)^T (da*/dyhat)^T (dL_dec/da).

The prediction-loss counterpart (`mse_pullback`) backpropagates the
mean squared error over every predicted entry, fake columns included,
so the two gradients are directly comparable inputs to a combiner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, NumericError
from ..mlp import MlpParams, backward_rows, forward_rows
from .budget import BudgetProblem, budget_solve_relaxed
from .knapsack import KnapsackProblem, knapsack_solve_relaxed
from .portfolio import PortfolioProblem, portfolio_solve
from .types import DecisionOutput


@dataclass
class DecisionPullback:
    """Decision loss of one instance plus its gradient in the flat parameters."""

    loss: float
    grad_theta: np.ndarray
    pred: np.ndarray
    output: DecisionOutput


def _require_finite(yhat: np.ndarray) -> np.ndarray:
    # Non-finite predictions mean the model diverged; fail here as a numeric
    # error rather than letting a solver reject them as a config mistake.
    if not np.all(np.isfinite(yhat)):
        raise NumericError("model output is non-finite; the parameters have diverged")
    return yhat


def predict_values(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Model outputs per row; (n,) for scalar heads, (n, out) otherwise."""
    yhat, _ = forward_rows(params, x)
    _require_finite(yhat)
    return yhat[:, 0] if params.out_dim == 1 else yhat


def model_predictions(problem, params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Solver-ready predictions for an instance: the inference-time view.

    Budget models emit extra fake-target columns and unconstrained
    reals; only the leading CTR block, clamped to [0,1], reaches a
    solver. Other problems feed the scalar head straight through.
    """
    if isinstance(problem, BudgetProblem):
        yhat, _ = forward_rows(params, x)
        # Check before the clamp: clip would silently fold +inf into 1.0.
        _require_finite(yhat)
        return np.clip(yhat[:, : problem.n_users], 0.0, 1.0)
    return predict_values(params, x)


def mse_pullback(
    params: MlpParams, x: np.ndarray, target: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean squared error over all predicted entries and its parameter gradient."""
    yhat, cache = forward_rows(params, x)
    _require_finite(yhat)
    target = np.asarray(target, dtype=float)
    if target.ndim == 1:
        target = target[:, None]
    if target.shape != yhat.shape:
        raise ConfigurationError(f"target shape {target.shape} != output shape {yhat.shape}")
    resid = yhat - target
    loss = float(np.mean(resid * resid))
    grad = backward_rows(params, cache, (2.0 / resid.size) * resid)
    return loss, grad


def decision_pullback(
    problem, params: MlpParams, x: np.ndarray, y: np.ndarray
) -> DecisionPullback:
    """Dispatch on the problem type; y is the instance's true parameter block."""
    if isinstance(problem, KnapsackProblem):
        return _value_head_pullback(knapsack_solve_relaxed, problem, params, x, y)
    if isinstance(problem, PortfolioProblem):
        return _value_head_pullback(portfolio_solve, problem, params, x, y)
    if isinstance(problem, BudgetProblem):
        return _budget_pullback(problem, params, x, y)
    raise ConfigurationError(f"no decision pullback for problem type {type(problem).__name__}")


def _value_head_pullback(solve, problem, params, x, y) -> DecisionPullback:
    """Scalar-head problems (knapsack values, portfolio returns)."""
    if params.out_dim != 1:
        raise ConfigurationError("scalar-head pullback requires a 1-output model")
    yhat, cache = forward_rows(params, x)
    _require_finite(yhat)
    pred = yhat[:, 0]
    out = solve(problem, pred, np.asarray(y, dtype=float))
    grad_theta = backward_rows(params, cache, out.grad_yhat[:, None])
    return DecisionPullback(loss=out.loss, grad_theta=grad_theta, pred=pred, output=out)


def _budget_pullback(problem: BudgetProblem, params, x, y) -> DecisionPullback:
    """Budget instances predict a (websites x targets) block per feature row.

    Only the first n_users columns are click-through rates; they are
    clamped to [0,1] before the solve, and the clamp passes gradient
    through unclamped coordinates only. Fake-target columns never touch
    the decision, so their decision gradient is identically zero.
    """
    n_users = problem.n_users
    yhat, cache = forward_rows(params, x)
    if yhat.shape != (problem.n_websites, n_users + problem.fake_targets):
        raise ConfigurationError(
            f"expected model output ({problem.n_websites}, "
            f"{n_users + problem.fake_targets}), got {yhat.shape}"
        )
    _require_finite(yhat)
    y = np.asarray(y, dtype=float)
    ctr_raw = yhat[:, :n_users]
    ctr = np.clip(ctr_raw, 0.0, 1.0)
    passthrough = (ctr_raw >= 0.0) & (ctr_raw <= 1.0)
    out = budget_solve_relaxed(problem, ctr, y[:, :n_users])
    upstream = np.zeros_like(yhat)
    upstream[:, :n_users] = out.grad_yhat * passthrough
    grad_theta = backward_rows(params, cache, upstream)
    return DecisionPullback(loss=out.loss, grad_theta=grad_theta, pred=ctr, output=out)
