"""Gradient-combination strategies for the two-loss training loop.

Eight update rules: prediction-only (pfl), decision-only (dfl), a convex
combination, PCGrad-style projection, MGDA's min-norm point, a
bisector-projection rule (dcgd), and the guided merge ("ours") at
steepness kappa = 0 or 1.

The guided merge scales the bisector-like direction
(alpha * u_pred + u_dec) to the geometric mean of the two gradient
norms, where alpha = (1 + e^(t - c))^(-kappa) decays over epochs t with
inflection c. With kappa = 0 the update bisects the two gradient
directions exactly; for any kappa it never conflicts with the decision
gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

STRATEGIES = ("pfl", "dfl", "convex", "pcgrad", "mgda", "dcgd", "ours")

# Degeneracy tolerance on the merged-direction denominator.
EPS_DEGENERATE = 1e-10


@dataclass
class GradPair:
    g_pred: np.ndarray
    g_dec: np.ndarray

    def check(self) -> None:
        if self.g_pred.shape != self.g_dec.shape:
            raise ConfigurationError(
                f"gradient shapes differ: {self.g_pred.shape} vs {self.g_dec.shape}"
            )


@dataclass
class CombinerConfig:
    strategy: str = "ours"
    beta: float = 0.5
    kappa: float = 0.0
    inflection_c: float = 50.0
    t: int = 0
    eps_degenerate: float = EPS_DEGENERATE

    def check(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigurationError(f"beta must lie in [0,1], got {self.beta}")
        if self.kappa < 0:
            raise ConfigurationError(f"kappa must be >= 0, got {self.kappa}")
        if self.inflection_c <= 0:
            raise ConfigurationError(f"inflection_c must be positive, got {self.inflection_c}")


@dataclass
class CombineResult:
    g: np.ndarray
    alpha_used: float = 1.0
    degenerate: bool = False
    # Which fallback fired, if any: "", "pred_zero", "dec_zero", "both_zero", "antiparallel".
    reason: str = ""


def alpha_decay(t: float, c: float, kappa: float) -> float:
    """alpha = (1 + e^(t-c))^(-kappa); in (0, 1], nonincreasing in t."""
    if kappa < 0:
        raise ConfigurationError(f"kappa must be >= 0, got {kappa}")
    if kappa == 0:
        return 1.0
    z = t - c
    if z > 700.0:
        # 1 + e^z == e^z to double precision; avoids overflow in exp.
        return math.exp(-kappa * z)
    return (1.0 + math.exp(z)) ** (-kappa)


def combine_ours(gp: GradPair, cfg: CombinerConfig) -> CombineResult:
    """Geometric-mean-scaled merge of the two gradient directions.

    m = sqrt(|g_pred| * |g_dec|), g = m * (alpha*u_pred + u_dec) / |alpha*u_pred + u_dec|.

    Fallbacks: a vanishing gradient yields the other raw gradient; both
    vanishing yields a zero step; an (anti)parallel cancellation of the
    merged direction yields g_dec. All fallbacks set the degenerate flag.
    """
    gp.check()
    alpha = alpha_decay(cfg.t, cfg.inflection_c, cfg.kappa)
    n_pred = math.sqrt(float(np.dot(gp.g_pred, gp.g_pred)))
    n_dec = math.sqrt(float(np.dot(gp.g_dec, gp.g_dec)))
    if n_pred == 0.0 and n_dec == 0.0:
        return CombineResult(np.zeros_like(gp.g_pred), alpha, True, "both_zero")
    if n_pred == 0.0:
        return CombineResult(gp.g_dec.copy(), alpha, True, "pred_zero")
    if n_dec == 0.0:
        return CombineResult(gp.g_pred.copy(), alpha, True, "dec_zero")
    u_pred = gp.g_pred / n_pred
    u_dec = gp.g_dec / n_dec
    merged = alpha * u_pred + u_dec
    denom = math.sqrt(float(np.dot(merged, merged)))
    if denom < cfg.eps_degenerate:
        return CombineResult(gp.g_dec.copy(), alpha, True, "antiparallel")
    m = math.sqrt(n_pred * n_dec)
    return CombineResult((m / denom) * merged, alpha, False, "")


def combine_convex(gp: GradPair, beta: float) -> np.ndarray:
    """(1 - beta) * g_pred + beta * g_dec."""
    if not 0.0 <= beta <= 1.0:
        raise ConfigurationError(f"beta must lie in [0,1], got {beta}")
    gp.check()
    return (1.0 - beta) * gp.g_pred + beta * gp.g_dec


def combine_pcgrad(gp: GradPair) -> np.ndarray:
    """Sum the gradients, projecting each onto the other's normal space on conflict."""
    gp.check()
    g1, g2 = gp.g_pred, gp.g_dec
    n1sq = float(np.dot(g1, g1))
    n2sq = float(np.dot(g2, g2))
    if n1sq == 0.0:
        return g2.copy()
    if n2sq == 0.0:
        return g1.copy()
    dot = float(np.dot(g1, g2))
    if dot >= 0.0:
        return g1 + g2
    g1_proj = g1 - (dot / n2sq) * g2
    g2_proj = g2 - (dot / n1sq) * g1
    return g1_proj + g2_proj


def mgda_lambda(gp: GradPair) -> float:
    """Closed-form minimizer of |lam*g_pred + (1-lam)*g_dec| over lam in [0,1]."""
    diff = gp.g_pred - gp.g_dec
    denom = float(np.dot(diff, diff))
    if denom == 0.0:
        return 0.5
    lam = float(np.dot(gp.g_dec - gp.g_pred, gp.g_dec)) / denom
    return min(1.0, max(0.0, lam))


def combine_mgda(gp: GradPair) -> np.ndarray:
    """Min-norm point of the convex hull of the two gradients."""
    gp.check()
    lam = mgda_lambda(gp)
    return lam * gp.g_pred + (1.0 - lam) * gp.g_dec


def combine_dcgd(gp: GradPair) -> np.ndarray:
    """Project the summed gradient onto the bisector of (sum, u_dec).

    Fallback when the projection is not an ascent direction for the sum
    (s . b <= 0, or the bisector is undefined): the component of g_dec
    orthogonal to g_pred, which has zero dot with g_pred and nonnegative
    dot with g_dec, i.e. a dual-cone direction of the pair.
    """
    gp.check()
    s = gp.g_pred + gp.g_dec
    ns = math.sqrt(float(np.dot(s, s)))
    n_dec = math.sqrt(float(np.dot(gp.g_dec, gp.g_dec)))
    if ns == 0.0 or n_dec == 0.0:
        return gp.g_dec.copy()
    s_hat = s / ns
    u_dec = gp.g_dec / n_dec
    bis = s_hat + u_dec
    nb = math.sqrt(float(np.dot(bis, bis)))
    if nb < EPS_DEGENERATE:
        return _dual_cone_component(gp)
    b = bis / nb
    sb = float(np.dot(s, b))
    if sb <= 0.0:
        return _dual_cone_component(gp)
    return sb * b


def _dual_cone_component(gp: GradPair) -> np.ndarray:
    n1sq = float(np.dot(gp.g_pred, gp.g_pred))
    if n1sq == 0.0:
        return gp.g_dec.copy()
    coef = float(np.dot(gp.g_dec, gp.g_pred)) / n1sq
    return gp.g_dec - coef * gp.g_pred


def select_update(gp: GradPair, cfg: CombinerConfig) -> CombineResult:
    """Dispatch on cfg.strategy; wraps plain-vector combiners in a CombineResult."""
    cfg.check()
    if cfg.strategy == "pfl":
        return CombineResult(gp.g_pred.copy())
    if cfg.strategy == "dfl":
        return CombineResult(gp.g_dec.copy())
    if cfg.strategy == "convex":
        return CombineResult(combine_convex(gp, cfg.beta))
    if cfg.strategy == "pcgrad":
        return CombineResult(combine_pcgrad(gp))
    if cfg.strategy == "mgda":
        return CombineResult(combine_mgda(gp))
    if cfg.strategy == "dcgd":
        return CombineResult(combine_dcgd(gp))
    return combine_ours(gp, cfg)
