"""Differentiable decision layers and the model-to-decision chain rule."""

from .budget import (
    BudgetProblem,
    budget_objective,
    budget_solve_exact,
    budget_solve_relaxed,
)
from .chain import (
    DecisionPullback,
    decision_pullback,
    model_predictions,
    mse_pullback,
    predict_values,
)
from .knapsack import KnapsackProblem, knapsack_solve_exact, knapsack_solve_relaxed
from .portfolio import (
    PortfolioProblem,
    portfolio_decision_loss,
    portfolio_jacobian,
    portfolio_jacobian_apply,
    portfolio_solve,
)
from .types import DecisionOutput

__all__ = [
    "BudgetProblem",
    "DecisionOutput",
    "DecisionPullback",
    "KnapsackProblem",
    "PortfolioProblem",
    "budget_objective",
    "budget_solve_exact",
    "budget_solve_relaxed",
    "decision_pullback",
    "knapsack_solve_exact",
    "knapsack_solve_relaxed",
    "model_predictions",
    "mse_pullback",
    "portfolio_decision_loss",
    "portfolio_jacobian",
    "portfolio_jacobian_apply",
    "portfolio_solve",
    "predict_values",
]
