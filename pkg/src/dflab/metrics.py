"""Regret evaluation, gradient-geometry statistics, and run summaries.

Regret of a prediction is the decision-loss gap between acting on the
prediction and acting on the truth, with both decisions produced by the
EXACT solvers:

    raw(yhat, y) = L_dec(a*(yhat), y) - L_dec(a*(y), y) >= 0.

Each instance is normalized by its own worst-case regret so scores are
comparable across instances and problems. The worst case is the
problem's natural pessimum: an empty knapsack, the budget decision
optimal for the negated rates, or an all-in position on the asset with
the lowest realized return. The budget pessimum is a proxy (the true
worst selection is not enumerated against the negated objective), so a
pathological predictor may exceed 1; values above 1 are reported, not
clipped.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateInstanceError, NumericError
from .layers import (
    BudgetProblem,
    KnapsackProblem,
    PortfolioProblem,
    budget_solve_exact,
    knapsack_solve_exact,
    portfolio_decision_loss,
    portfolio_solve,
)
from .layers.chain import model_predictions

REGRET_NEGATIVE_TOL = 1e-9
WORST_REGRET_MIN = 1e-9


@dataclass
class RegretRow:
    """Per-instance regret: raw gap, worst-case denominator, and their ratio."""

    raw: float
    worst: float
    normalized: float


@dataclass
class GradGeometry:
    """Angle and scale relation between a prediction and a decision gradient."""

    cos_phi: float
    norm_ratio: float
    epoch: int = 0
    defined: bool = True


def decision_loss_exact(problem, pred: np.ndarray, y: np.ndarray) -> float:
    """Decision loss of the exact solve at pred, evaluated against y."""
    if isinstance(problem, KnapsackProblem):
        return knapsack_solve_exact(problem, pred, y).loss
    if isinstance(problem, BudgetProblem):
        return budget_solve_exact(problem, pred, y).loss
    if isinstance(problem, PortfolioProblem):
        return portfolio_solve(problem, pred, y).loss
    raise ConfigurationError(f"no exact solver for problem type {type(problem).__name__}")


def regret_of_prediction(problem, pred: np.ndarray, y: np.ndarray) -> RegretRow:
    """Normalized regret of an explicit prediction against ground truth y."""
    y = np.asarray(y, dtype=float)
    raw = decision_loss_exact(problem, pred, y) - decision_loss_exact(problem, y, y)
    if raw < -REGRET_NEGATIVE_TOL:
        raise NumericError(
            f"regret {raw} below -{REGRET_NEGATIVE_TOL}: exact solver inconsistency"
        )
    raw = max(raw, 0.0)
    worst = worst_case_regret(problem, y)
    return RegretRow(raw=raw, worst=worst, normalized=raw / worst)


def regret(problem, params, instance) -> RegretRow:
    """Normalized regret of the model's prediction on one instance."""
    y = np.asarray(instance.y, dtype=float)
    if isinstance(problem, BudgetProblem):
        y = y[:, : problem.n_users]
    pred = model_predictions(problem, params, instance.x)
    return regret_of_prediction(problem, pred, y)


def worst_case_regret(problem, y: np.ndarray) -> float:
    """Per-instance normalization denominator; raises on degenerate instances."""
    y = np.asarray(y, dtype=float)
    if isinstance(problem, KnapsackProblem):
        # Worst decision selects nothing, scoring 0; the gap is the optimal value.
        worst = -knapsack_solve_exact(problem, y, y).loss
    elif isinstance(problem, BudgetProblem):
        worst_loss = budget_solve_exact(problem, -y, y).loss
        worst = worst_loss - budget_solve_exact(problem, y, y).loss
    elif isinstance(problem, PortfolioProblem):
        a_worst = np.zeros(problem.n_assets)
        a_worst[int(np.argmin(y))] = 1.0
        worst_loss = portfolio_decision_loss(problem, a_worst, y)
        worst = worst_loss - portfolio_solve(problem, y, y).loss
    else:
        raise ConfigurationError(f"no worst case for problem type {type(problem).__name__}")
    if worst <= WORST_REGRET_MIN:
        raise DegenerateInstanceError(
            f"worst-case regret {worst} too small to normalize by"
        )
    return float(worst)


def grad_geometry(g_pred: np.ndarray, g_dec: np.ndarray, epoch: int = 0) -> GradGeometry:
    """Cosine and norm ratio of the two training gradients.

    Either norm at zero makes the geometry undefined; a marker row with
    NaNs is returned rather than raising, so logs stay rectangular.
    """
    np_pred = float(np.linalg.norm(g_pred))
    np_dec = float(np.linalg.norm(g_dec))
    if np_pred == 0.0 or np_dec == 0.0:
        return GradGeometry(cos_phi=math.nan, norm_ratio=math.nan, epoch=epoch, defined=False)
    cos_phi = float(np.dot(g_pred, g_dec)) / (np_pred * np_dec)
    cos_phi = min(1.0, max(-1.0, cos_phi))
    return GradGeometry(cos_phi=cos_phi, norm_ratio=np_dec / np_pred, epoch=epoch)


def sem(values) -> float:
    """Standard error of the mean: sample standard deviation over sqrt(n)."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ConfigurationError("SEM needs at least 2 values")
    return float(np.std(values, ddof=1) / math.sqrt(values.size))


def summarize_runs(records) -> list:
    """Aggregate run records into (problem, method, mean, sem, n) rows.

    Records need .problem, .method, and .normalized_regret attributes;
    failed records (normalized_regret None) are excluded per cell. Cells
    need at least 2 surviving runs.
    """
    cells: dict = {}
    for rec in records:
        if rec.normalized_regret is None:
            continue
        cells.setdefault((rec.problem, rec.method), []).append(rec.normalized_regret)
    rows = []
    for (problem, method), vals in sorted(cells.items()):
        if len(vals) < 2:
            raise ConfigurationError(
                f"cell ({problem}, {method}) has {len(vals)} runs; need >= 2 for a SEM"
            )
        rows.append(
            {
                "problem": problem,
                "method": method,
                "mean_normalized_regret": float(np.mean(vals)),
                "sem": sem(vals),
                "runs": len(vals),
            }
        )
    return rows


EPOCH_LOG_COLUMNS = (
    "epoch",
    "loss_pred",
    "loss_dec",
    "cos_phi",
    "norm_ratio",
    "alpha",
    "degenerate_count",
)

SUMMARY_COLUMNS = ("problem", "method", "mean_normalized_regret", "sem", "runs")


def _cell(value) -> str:
    if isinstance(value, float):
        # Plain-float repr: numpy scalars would stringify as np.float64(..).
        return repr(float(value))
    return str(value)


def write_epoch_log(rows: list, path: str) -> None:
    """Per-epoch training log in the documented column order."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPOCH_LOG_COLUMNS)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in EPOCH_LOG_COLUMNS])


def write_summary(rows: list, path: str) -> None:
    """Suite summary table: one row per (problem, method) cell."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in SUMMARY_COLUMNS])
