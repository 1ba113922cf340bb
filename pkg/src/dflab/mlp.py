"""One-hidden-layer MLP with analytic forward/backward and an Adam step.

The model is deliberately tiny: a single ReLU hidden layer and a linear
output head. Every operation is a pure function of explicit arrays, so
gradients stay exact, runs stay reproducible, and no autodiff framework
is needed.

Parameter flattening order is fixed and load-bearing for the rest of the
package: w1 row-major, then b1, then w2 row-major, then b2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class MlpParams:
    """Weights and biases: w1 (hidden x in), b1 (hidden), w2 (out x hidden), b2 (out)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def check(self) -> None:
        if self.w1.ndim != 2 or self.w2.ndim != 2:
            raise ConfigurationError("weight matrices must be 2-D")
        hidden, _ = self.w1.shape
        out, hidden2 = self.w2.shape
        if hidden2 != hidden or self.b1.shape != (hidden,) or self.b2.shape != (out,):
            raise ConfigurationError(
                f"inconsistent dimensions: w1 {self.w1.shape}, b1 {self.b1.shape}, "
                f"w2 {self.w2.shape}, b2 {self.b2.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[0]

    @property
    def n_params(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size


@dataclass
class ForwardCache:
    """Intermediates stored by forward so backward avoids recomputation."""

    x: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    yhat: np.ndarray


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    k: int = 0


def init_mlp(in_dim: int, hidden_dim: int, out_dim: int, rng: np.random.Generator) -> MlpParams:
    """Balanced-variance init: weights uniform in +-sqrt(6/(fan_in+fan_out)), biases zero."""
    if min(in_dim, hidden_dim, out_dim) < 1:
        raise ConfigurationError("all layer dimensions must be >= 1")
    s1 = np.sqrt(6.0 / (in_dim + hidden_dim))
    s2 = np.sqrt(6.0 / (hidden_dim + out_dim))
    return MlpParams(
        w1=rng.uniform(-s1, s1, size=(hidden_dim, in_dim)),
        b1=np.zeros(hidden_dim),
        w2=rng.uniform(-s2, s2, size=(out_dim, hidden_dim)),
        b2=np.zeros(out_dim),
    )


def init_adam(params: MlpParams) -> AdamState:
    n = params.n_params
    return AdamState(m=np.zeros(n), v=np.zeros(n), k=0)


def flatten_params(params: MlpParams) -> np.ndarray:
    return np.concatenate(
        [params.w1.ravel(), params.b1, params.w2.ravel(), params.b2]
    )


def unflatten_params(vec: np.ndarray, in_dim: int, hidden_dim: int, out_dim: int) -> MlpParams:
    expected = hidden_dim * in_dim + hidden_dim + out_dim * hidden_dim + out_dim
    if vec.shape != (expected,):
        raise ConfigurationError(f"expected flat vector of length {expected}, got {vec.shape}")
    i = 0
    w1 = vec[i : i + hidden_dim * in_dim].reshape(hidden_dim, in_dim)
    i += hidden_dim * in_dim
    b1 = vec[i : i + hidden_dim]
    i += hidden_dim
    w2 = vec[i : i + out_dim * hidden_dim].reshape(out_dim, hidden_dim)
    i += out_dim * hidden_dim
    b2 = vec[i:]
    return MlpParams(w1=w1.copy(), b1=b1.copy(), w2=w2.copy(), b2=b2.copy())


def forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """yhat = w2 . relu(w1 . x + b1) + b2 for a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (params.in_dim,):
        raise ConfigurationError(f"expected input of shape ({params.in_dim},), got {x.shape}")
    z1 = params.w1 @ x + params.b1
    h1 = np.maximum(z1, 0.0)
    yhat = params.w2 @ h1 + params.b2
    return yhat, ForwardCache(x=x, z1=z1, h1=h1, yhat=yhat)


def backward(params: MlpParams, cache: ForwardCache, upstream: np.ndarray) -> np.ndarray:
    """Chain an upstream dL/dyhat back to the flat parameter gradient.

    ReLU subgradient at 0 is taken to be 0.
    """
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != (params.out_dim,):
        raise ConfigurationError(
            f"expected upstream of shape ({params.out_dim},), got {upstream.shape}"
        )
    dw2 = np.outer(upstream, cache.h1)
    db2 = upstream
    dh1 = params.w2.T @ upstream
    dz1 = dh1 * (cache.z1 > 0.0)
    dw1 = np.outer(dz1, cache.x)
    db1 = dz1
    return np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])


def forward_rows(params: MlpParams, xmat: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Apply the model to each row of xmat; returns (n_rows x out) outputs."""
    xmat = np.asarray(xmat, dtype=float)
    if xmat.ndim != 2 or xmat.shape[1] != params.in_dim:
        raise ConfigurationError(
            f"expected rows of width {params.in_dim}, got shape {xmat.shape}"
        )
    z1 = xmat @ params.w1.T + params.b1
    h1 = np.maximum(z1, 0.0)
    yhat = h1 @ params.w2.T + params.b2
    return yhat, ForwardCache(x=xmat, z1=z1, h1=h1, yhat=yhat)


def backward_rows(params: MlpParams, cache: ForwardCache, upstream: np.ndarray) -> np.ndarray:
    """Flat parameter gradient summed over rows; upstream is (n_rows x out)."""
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != cache.yhat.shape:
        raise ConfigurationError(
            f"upstream shape {upstream.shape} != output shape {cache.yhat.shape}"
        )
    dw2 = upstream.T @ cache.h1
    db2 = upstream.sum(axis=0)
    dh1 = upstream @ params.w2
    dz1 = dh1 * (cache.z1 > 0.0)
    dw1 = dz1.T @ cache.x
    db1 = dz1.sum(axis=0)
    return np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])


def adam_step(
    params: MlpParams, grads: np.ndarray, state: AdamState, lr: float
) -> tuple[MlpParams, AdamState]:
    """Standard Adam with bias correction; returns fresh params and state."""
    if lr <= 0:
        raise ConfigurationError("lr must be positive")
    grads = np.asarray(grads, dtype=float)
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradient passed to adam_step (diverged run)")
    theta = flatten_params(params)
    if grads.shape != theta.shape:
        raise ConfigurationError(f"gradient shape {grads.shape} != params {theta.shape}")
    k = state.k + 1
    m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * grads
    v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * grads * grads
    m_hat = m / (1.0 - ADAM_BETA1**k)
    v_hat = v / (1.0 - ADAM_BETA2**k)
    theta = theta - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    new_params = unflatten_params(theta, params.in_dim, params.hidden_dim, params.out_dim)
    return new_params, AdamState(m=m, v=v, k=k)
