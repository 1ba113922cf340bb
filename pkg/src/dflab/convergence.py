"""Empirical convergence lab for the bisector update on two-objective problems.

Runs x_{k+1} = x_k - eta_k * g(x_k) with the geometric-mean bisector
combiner (decay exponent 0) on analytically tractable problem pairs,
tracing per step:

    psi_k  = (|grad L1| + |grad L2|) * cos(phi_k / 2),
    m_k    = sqrt(|grad L1| * |grad L2|),
    cert_k = min over lam in [0,1] of |lam*grad L1 + (1-lam)*grad L2|,

the running minimum of m_k * psi_k, and the per-step losses. The loop
stops when the combiner reports a degenerate pair (a zero gradient or
an exactly antiparallel pair): such a point is already Pareto
stationary, and the final row is logged with psi = 0.

`rate_check` fits the decay exponent of the running minimum against the
theoretical bound -(1 - alpha_step) for the step schedule
eta_k = eta0 / (k+1)^alpha_step. A running minimum that reaches exactly
zero decays faster than any power law; that case is reported as
early-exact stationarity instead of a slope, whatever the trace length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .combiners import CombinerConfig, GradPair, mgda_lambda, select_update
from .errors import ConfigurationError, DivergenceError


@dataclass
class TwoObjectiveProblem:
    """A pair of smooth objectives with closed-form gradients and Lipschitz bounds."""

    name: str
    loss1: callable
    grad1: callable
    loss2: callable
    grad2: callable
    lipschitz1: float
    lipschitz2: float


@dataclass
class ScheduleConfig:
    """Step sizes eta_k = eta0 / (k+1)^alpha_step for alpha_step in (1/2, 1)."""

    eta0: float = 0.5
    alpha_step: float = 0.75
    horizon: int = 100_000

    def check(self) -> None:
        if self.eta0 <= 0:
            raise ConfigurationError("eta0 must be positive")
        if not 0.5 < self.alpha_step < 1.0:
            raise ConfigurationError("alpha_step must lie strictly between 1/2 and 1")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")

    def eta(self, k: int) -> float:
        return self.eta0 / (k + 1) ** self.alpha_step


@dataclass
class TraceRow:
    k: int
    x: np.ndarray
    eta: float
    loss1: float
    loss2: float
    psi: float
    m: float
    m_psi: float
    runmin: float
    certificate: float
    degenerate: bool = False


@dataclass
class RateCheckResult:
    slope: float | None
    bound: float
    early_exact: bool = False


def shared_quadratic(dim: int = 2) -> TwoObjectiveProblem:
    """L1 = L2 = |x|^2: a shared minimizer at the origin."""
    return TwoObjectiveProblem(
        name="shared_quadratic",
        loss1=lambda x: float(x @ x),
        grad1=lambda x: 2.0 * x,
        loss2=lambda x: float(x @ x),
        grad2=lambda x: 2.0 * x,
        lipschitz1=2.0,
        lipschitz2=2.0,
    )


def biquadratic_1d() -> TwoObjectiveProblem:
    """L1 = (x-1)^2, L2 = (x+1)^2: the Pareto set is the segment [-1, 1]."""
    return TwoObjectiveProblem(
        name="biquadratic_1d",
        loss1=lambda x: float((x[0] - 1.0) ** 2),
        grad1=lambda x: np.array([2.0 * (x[0] - 1.0)]),
        loss2=lambda x: float((x[0] + 1.0) ** 2),
        grad2=lambda x: np.array([2.0 * (x[0] + 1.0)]),
        lipschitz1=2.0,
        lipschitz2=2.0,
    )


def _rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def rotated_quadratics() -> TwoObjectiveProblem:
    """Two anisotropic 2-D quadratics with rotated axes and distinct minima."""
    r1 = _rotation(math.pi / 6.0)
    r2 = _rotation(-math.pi / 4.0)
    a1 = r1 @ np.diag([3.0, 1.0]) @ r1.T
    a2 = r2 @ np.diag([2.0, 0.5]) @ r2.T
    c1 = np.array([1.0, 0.0])
    c2 = np.array([-1.0, 1.0])
    return TwoObjectiveProblem(
        name="rotated_quadratics",
        loss1=lambda x: 0.5 * float((x - c1) @ a1 @ (x - c1)),
        grad1=lambda x: a1 @ (x - c1),
        loss2=lambda x: 0.5 * float((x - c2) @ a2 @ (x - c2)),
        grad2=lambda x: a2 @ (x - c2),
        lipschitz1=3.0,
        lipschitz2=2.0,
    )


def pareto_certificate(gp: GradPair) -> float:
    """Min-norm point of the segment between the two gradients.

    Zero exactly when the convex hull of the pair contains the origin,
    i.e. the point is Pareto stationary for the two objectives.
    """
    lam = mgda_lambda(gp)
    return float(np.linalg.norm(lam * gp.g_pred + (1.0 - lam) * gp.g_dec))


def _psi(g1: np.ndarray, g2: np.ndarray) -> tuple[float, float]:
    """(psi, m): alignment magnitude and geometric-mean norm of a gradient pair."""
    n1 = float(np.linalg.norm(g1))
    n2 = float(np.linalg.norm(g2))
    m = math.sqrt(n1 * n2)
    if n1 == 0.0 or n2 == 0.0:
        return 0.0, m
    cos_phi = min(1.0, max(-1.0, float(g1 @ g2) / (n1 * n2)))
    cos_half = math.sqrt(max(0.0, 0.5 * (1.0 + cos_phi)))
    return (n1 + n2) * cos_half, m


def run_schedule(
    problem: TwoObjectiveProblem,
    cfg: ScheduleConfig,
    start: np.ndarray,
    kappa: float = 0.0,
    inflection_c: float = 50.0,
) -> list:
    """Trace the combined-update descent until the horizon or a degenerate pair."""
    cfg.check()
    x = np.asarray(start, dtype=float).copy()
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("start point must be finite")
    combiner = CombinerConfig(strategy="ours", kappa=kappa, inflection_c=inflection_c)
    rows: list = []
    runmin = math.inf
    for k in range(cfg.horizon):
        # Overflow here becomes a DivergenceError below; silence the warning.
        with np.errstate(over="ignore", invalid="ignore"):
            g1 = np.asarray(problem.grad1(x), dtype=float)
            g2 = np.asarray(problem.grad2(x), dtype=float)
            loss1 = problem.loss1(x)
            loss2 = problem.loss2(x)
        # Overflowed gradients would read as a zero-direction "degenerate"
        # pair inside the combiner; catch the divergence before it does.
        if not (
            np.all(np.isfinite(g1))
            and np.all(np.isfinite(g2))
            and math.isfinite(loss1)
            and math.isfinite(loss2)
        ):
            raise DivergenceError(
                f"losses or gradients overflowed at step {k} on {problem.name}", trace=rows
            )
        combiner.t = k
        result = select_update(GradPair(g_pred=g1, g_dec=g2), combiner)
        psi, m = _psi(g1, g2)
        if result.degenerate:
            psi = 0.0
        m_psi = m * psi
        runmin = min(runmin, m_psi)
        rows.append(
            TraceRow(
                k=k,
                x=x.copy(),
                eta=cfg.eta(k),
                loss1=loss1,
                loss2=loss2,
                psi=psi,
                m=m,
                m_psi=m_psi,
                runmin=runmin,
                certificate=pareto_certificate(GradPair(g_pred=g1, g_dec=g2)),
                degenerate=result.degenerate,
            )
        )
        if result.degenerate:
            break
        x = x - cfg.eta(k) * result.g
        if not np.all(np.isfinite(x)):
            raise DivergenceError(
                f"iterate diverged at step {k + 1} on {problem.name}", trace=rows
            )
    return rows


def rate_check(trace: list, alpha_step: float | None = None) -> RateCheckResult:
    """Fit the decay exponent of the running-min m_k psi_k over the trailing half.

    An exactly-zero running minimum short-circuits to the early-exact
    branch before any length requirement: the trace has already decayed
    below every power law.
    """
    if not trace:
        raise ConfigurationError("rate_check requires a nonempty trace")
    if alpha_step is None:
        if len(trace) < 2:
            raise ConfigurationError("cannot recover alpha_step from a length-1 trace")
        alpha_step = math.log(trace[0].eta / trace[1].eta) / math.log(2.0)
    bound = -(1.0 - alpha_step)
    if trace[-1].runmin == 0.0:
        return RateCheckResult(slope=None, bound=bound, early_exact=True)
    if len(trace) < 1000:
        raise ConfigurationError(
            f"rate_check needs a trace of length >= 1000 (got {len(trace)})"
        )
    tail = trace[len(trace) // 2 :]
    logs_k = np.array([math.log(row.k + 1.0) for row in tail])
    logs_v = np.array([math.log(row.runmin) for row in tail])
    slope = float(np.polyfit(logs_k, logs_v, 1)[0])
    return RateCheckResult(slope=slope, bound=bound)


def telescoping_check(trace: list, lipschitz: float) -> tuple[float, float]:
    """LHS and RHS of the summed descent inequality over a trace.

    Returns (sum_k (eta_k m_k psi_k - (M/2) eta_k^2 m_k^2),
             (L1+L2)(x_0) - min_k (L1+L2)(x_k)); the first must not
    exceed the second for M-Lipschitz combined gradients. The sum runs
    over steps whose landing point is itself logged, i.e. every row but
    the last; the final row's update (if any) has no logged successor
    to telescope against.
    """
    if not trace:
        raise ConfigurationError("telescoping_check requires a nonempty trace")
    lhs = sum(
        row.eta * row.m_psi - 0.5 * lipschitz * row.eta**2 * row.m**2 for row in trace[:-1]
    )
    totals = [row.loss1 + row.loss2 for row in trace]
    return float(lhs), float(totals[0] - min(totals))


def estimate_lipschitz(
    problem: TwoObjectiveProblem,
    lo: np.ndarray,
    hi: np.ndarray,
    n_samples: int = 2000,
    seed: int = 0,
) -> tuple[float, float]:
    """Sampled lower bounds on each objective's gradient Lipschitz constant."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    rng = np.random.Generator(np.random.Philox(seed))
    best1 = best2 = 0.0
    for _ in range(n_samples):
        x = rng.uniform(lo, hi)
        y = rng.uniform(lo, hi)
        gap = float(np.linalg.norm(x - y))
        if gap < 1e-12:
            continue
        best1 = max(best1, float(np.linalg.norm(problem.grad1(x) - problem.grad1(y))) / gap)
        best2 = max(best2, float(np.linalg.norm(problem.grad2(x) - problem.grad2(y))) / gap)
    return best1, best2


TRACE_COLUMNS = ("k", "eta", "loss1", "loss2", "psi", "m", "m_psi", "runmin", "certificate")


def write_trace(trace: list, path: str) -> None:
    """Trace CSV in the documented column order; floats keep full precision."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for row in trace:
            # Plain-float repr: numpy scalars would stringify as np.float64(..).
            cells = [
                str(row.k),
                repr(float(row.eta)),
                repr(float(row.loss1)),
                repr(float(row.loss2)),
                repr(float(row.psi)),
                repr(float(row.m)),
                repr(float(row.m_psi)),
                repr(float(row.runmin)),
                repr(float(row.certificate)),
            ]
            fh.write(",".join(cells) + "\n")
