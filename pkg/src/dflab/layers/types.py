"""Shared output type for the decision layers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class DecisionOutput:
    """Result of a solve: decision a, its decision loss, and optionally dL/dyhat.

    `loss` is the decision loss of `a` measured against the evaluation
    target supplied to the solve (the prediction itself when no separate
    target was given). `grad_yhat` is the derivative of that loss with
    respect to the predicted parameters, flowing through the decision
    only; it is present only for the differentiable (relaxed) solves.
    `active_set` records which constraints were binding at the solution,
    so callers can detect active-set changes between nearby solves.
    """

    a: np.ndarray
    loss: float
    grad_yhat: np.ndarray | None = None
    active_set: tuple = field(default_factory=tuple)
