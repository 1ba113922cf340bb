"""Mean-variance portfolio layer: closed-form solve and Jacobian.

The program is max_a y.a - lam * a.Sigma.a subject to sum(a) = 1, with
short positions permitted (the only constraint is the budget equality).
The KKT system is linear, so both the solution and its Jacobian in y
have closed forms:

    a*(y) = (1/2lam) Sigma^-1 (y - nu * 1),
    nu    = (1.Sigma^-1 y - 2lam) / (1.Sigma^-1 1),
    da*/dy = (1/2lam) (Sigma^-1 - Sigma^-1 1 1.Sigma^-1 / (1.Sigma^-1 1)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ..errors import ConfigurationError, IllConditionedProblemError
from .types import DecisionOutput


@dataclass
class PortfolioProblem:
    cov: np.ndarray
    risk_aversion: float = 1.0
    _chol: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def n_assets(self) -> int:
        return self.cov.shape[0]

    def chol(self) -> tuple:
        """Cached Cholesky factor of the covariance."""
        if self._chol is None:
            cov = np.asarray(self.cov, dtype=float)
            if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or cov.shape[0] < 2:
                raise ConfigurationError(f"covariance must be square with N >= 2, got {cov.shape}")
            if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-10):
                raise ConfigurationError("covariance must be symmetric")
            try:
                self._chol = cho_factor(cov, lower=True)
            except np.linalg.LinAlgError as exc:
                raise IllConditionedProblemError(f"covariance not positive definite: {exc}") from exc
        return self._chol


def portfolio_decision_loss(p: PortfolioProblem, a: np.ndarray, y: np.ndarray) -> float:
    """Negated risk-adjusted return: -(y.a - lam * a.Sigma.a)."""
    return -(float(y @ a) - p.risk_aversion * float(a @ p.cov @ a))


def portfolio_solve(
    p: PortfolioProblem, y_hat: np.ndarray, y_true: np.ndarray | None = None
) -> DecisionOutput:
    """Closed-form KKT solve on y_hat; loss and grad_yhat against y_true.

    When y_true is omitted the loss is measured against y_hat itself and
    grad_yhat reduces to the (zero) envelope term through a*.
    """
    y_hat = np.asarray(y_hat, dtype=float)
    n = p.n_assets
    if y_hat.shape != (n,):
        raise ConfigurationError(f"expected return vector of shape ({n},), got {y_hat.shape}")
    if not np.all(np.isfinite(y_hat)):
        raise ConfigurationError("non-finite predicted returns")
    factor = p.chol()
    lam = p.risk_aversion
    ones = np.ones(n)
    sinv_y = cho_solve(factor, y_hat)
    sinv_1 = cho_solve(factor, ones)
    denom = float(ones @ sinv_1)
    nu = (float(ones @ sinv_y) - 2.0 * lam) / denom
    a = (sinv_y - nu * sinv_1) / (2.0 * lam)

    target = y_hat if y_true is None else np.asarray(y_true, dtype=float)
    loss = portfolio_decision_loss(p, a, target)
    # dL/da at (a*, target), pushed through the Jacobian of the solve.
    dl_da = -(target - 2.0 * lam * (p.cov @ a))
    grad = portfolio_jacobian_apply(p, dl_da)
    return DecisionOutput(a=a, loss=loss, grad_yhat=grad, active_set=("budget",))


def portfolio_jacobian_apply(p: PortfolioProblem, v: np.ndarray) -> np.ndarray:
    """Apply the (symmetric) solution Jacobian da*/dy to a vector."""
    factor = p.chol()
    ones = np.ones(p.n_assets)
    sinv_v = cho_solve(factor, v)
    sinv_1 = cho_solve(factor, ones)
    denom = float(ones @ sinv_1)
    return (sinv_v - sinv_1 * (float(ones @ sinv_v) / denom)) / (2.0 * p.risk_aversion)


def portfolio_jacobian(p: PortfolioProblem) -> np.ndarray:
    """Dense da*/dy, mainly for tests and small N."""
    factor = p.chol()
    n = p.n_assets
    ones = np.ones(n)
    sinv = cho_solve(factor, np.eye(n))
    sinv_1 = cho_solve(factor, ones)
    denom = float(ones @ sinv_1)
    return (sinv - np.outer(sinv_1, sinv_1) / denom) / (2.0 * p.risk_aversion)
