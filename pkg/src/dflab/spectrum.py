"""Hessian-spectrum estimation from gradient calls only.

The Hessian is never formed: Hessian-vector products come from a
central finite difference of the gradient function, and the spectrum is
summarized by the Lanczos recurrence with full reorthogonalization.
Each Gaussian probe vector yields Ritz values and weights (the squared
first components of the tridiagonal eigenvectors, summing to 1); probes
are averaged into a Gaussian-broadened density on a value grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import erf

from .errors import ConfigurationError, NumericError

BREAKDOWN_TOL = 1e-12
DEFAULT_GRID_POINTS = 512
GRID_PAD_FRAC = 0.05


def hessian_vector_product(grad_fn, theta: np.ndarray, v: np.ndarray) -> np.ndarray:
    """H.v by central finite differences of grad_fn around theta.

    The step scales with the parameter norm: h = 1e-5 * (1 + |theta|).
    Small enough that the O(h^2) Taylor error stays well below the
    near-zero eigenvalue windows this feeds (gradients are computed
    analytically, so the roundoff floor |g| * eps / h is still tiny).
    Exact for quadratics up to roundoff.
    """
    theta = np.asarray(theta, dtype=float)
    v = np.asarray(v, dtype=float)
    norm_v = float(np.linalg.norm(v))
    if norm_v == 0.0:
        raise ConfigurationError("hessian_vector_product requires a nonzero direction")
    vhat = v / norm_v
    h = 1e-5 * (1.0 + float(np.linalg.norm(theta)))
    g_plus = grad_fn(theta + h * vhat)
    g_minus = grad_fn(theta - h * vhat)
    out = (np.asarray(g_plus) - np.asarray(g_minus)) * (norm_v / (2.0 * h))
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite gradient encountered in Hessian-vector product")
    return out


@dataclass
class SpectrumEstimate:
    """Ritz summaries per probe plus a broadened density on a shared grid."""

    ritz_values: list
    ritz_weights: list
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    steps: int
    probes: int
    truncated: list = field(default_factory=list)

    def mass(self, lo: float, hi: float) -> float:
        """Probability mass of the broadened spectrum inside [lo, hi].

        Computed in closed form from the Ritz mixture, so it does not
        depend on grid resolution.
        """
        if hi < lo:
            raise ConfigurationError("mass interval must satisfy lo <= hi")
        scale = self.bandwidth * math.sqrt(2.0)
        total = 0.0
        for vals, wts in zip(self.ritz_values, self.ritz_weights):
            total += float(
                np.sum(wts * 0.5 * (erf((hi - vals) / scale) - erf((lo - vals) / scale)))
            )
        return total / len(self.ritz_values)

    def weight_within(self, lo: float, hi: float) -> float:
        """Raw quadrature weight on Ritz values inside [lo, hi], probe-averaged.

        Unlike `mass`, no broadening: the right estimator for intervals
        much narrower than the grid bandwidth, e.g. near-zero curvature
        mass.
        """
        if hi < lo:
            raise ConfigurationError("mass interval must satisfy lo <= hi")
        total = 0.0
        for vals, wts in zip(self.ritz_values, self.ritz_weights):
            vals = np.asarray(vals)
            total += float(np.sum(np.asarray(wts)[(vals >= lo) & (vals <= hi)]))
        return total / len(self.ritz_values)


def _lanczos_probe(matvec, n: int, steps: int, rng: np.random.Generator):
    """One Lanczos run: returns (ritz values, weights, truncated?)."""
    q = rng.normal(size=n)
    q /= np.linalg.norm(q)
    basis = [q]
    alphas, betas = [], []
    truncated = False
    for j in range(steps):
        w = np.asarray(matvec(basis[j]), dtype=float)
        alpha = float(basis[j] @ w)
        alphas.append(alpha)
        w = w - alpha * basis[j]
        if j > 0:
            w = w - betas[j - 1] * basis[j - 1]
        # Full reorthogonalization keeps Ritz values clean at this scale.
        bmat = np.asarray(basis)
        w = w - bmat.T @ (bmat @ w)
        beta = float(np.linalg.norm(w))
        if j == steps - 1:
            break
        if beta < BREAKDOWN_TOL:
            truncated = True
            break
        betas.append(beta)
        basis.append(w / beta)
    evals, evecs = eigh_tridiagonal(np.asarray(alphas), np.asarray(betas))
    weights = evecs[0] ** 2
    return evals, weights, truncated


def default_grid(ritz_values: list, n_points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    """Value grid covering every probe's Ritz span, padded for tail mass.

    A degenerate span (all Ritz values equal, e.g. the identity
    operator) falls back to [center-1, center+1].
    """
    lo = min(float(np.min(v)) for v in ritz_values)
    hi = max(float(np.max(v)) for v in ritz_values)
    span = hi - lo
    if span < 1e-12:
        center = 0.5 * (lo + hi)
        return np.linspace(center - 1.0, center + 1.0, n_points)
    pad = GRID_PAD_FRAC * span
    return np.linspace(lo - pad, hi + pad, n_points)


def density_from_ritz(ritz_values: list, ritz_weights: list, grid: np.ndarray):
    """Average probes into a Gaussian mixture density; bandwidth = 2 x spacing."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ConfigurationError("grid must be a 1-D array with at least 2 points")
    bandwidth = 2.0 * float(grid[1] - grid[0])
    density = np.zeros_like(grid)
    norm = 1.0 / (bandwidth * math.sqrt(2.0 * math.pi))
    for vals, wts in zip(ritz_values, ritz_weights):
        z = (grid[None, :] - np.asarray(vals)[:, None]) / bandwidth
        density += np.asarray(wts) @ (norm * np.exp(-0.5 * z * z))
    return density / len(ritz_values), bandwidth


def lanczos_spectrum_matvec(
    matvec,
    n: int,
    steps: int = 80,
    probes: int = 8,
    seed: int = 0,
    grid: np.ndarray | None = None,
) -> SpectrumEstimate:
    """Spectrum of an arbitrary symmetric operator given as a matvec."""
    if steps < 1 or probes < 1:
        raise ConfigurationError("steps and probes must be >= 1")
    if steps > n:
        raise ConfigurationError(f"steps ({steps}) cannot exceed operator dimension ({n})")
    rng = np.random.Generator(np.random.Philox(seed))
    ritz_values, ritz_weights, truncated = [], [], []
    for _ in range(probes):
        vals, wts, trunc = _lanczos_probe(matvec, n, steps, rng)
        ritz_values.append(vals)
        ritz_weights.append(wts)
        truncated.append(trunc)
    if grid is None:
        grid = default_grid(ritz_values)
    density, bandwidth = density_from_ritz(ritz_values, ritz_weights, grid)
    return SpectrumEstimate(
        ritz_values=ritz_values,
        ritz_weights=ritz_weights,
        grid=np.asarray(grid, dtype=float),
        density=density,
        bandwidth=bandwidth,
        steps=steps,
        probes=probes,
        truncated=truncated,
    )


def lanczos_spectrum(
    grad_fn,
    theta: np.ndarray,
    steps: int = 80,
    probes: int = 8,
    seed: int = 0,
    grid: np.ndarray | None = None,
) -> SpectrumEstimate:
    """Hessian spectrum of the loss whose gradient function is grad_fn."""
    theta = np.asarray(theta, dtype=float)
    return lanczos_spectrum_matvec(
        lambda v: hessian_vector_product(grad_fn, theta, v),
        n=theta.size,
        steps=steps,
        probes=probes,
        seed=seed,
        grid=grid,
    )


def write_spectrum(est: SpectrumEstimate, path: str) -> None:
    """Two-column CSV: eigenvalue_grid,density."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("eigenvalue_grid,density\n")
        for g, d in zip(est.grid, est.density):
            # Plain-float repr: numpy scalars would stringify as np.float64(..).
            fh.write(f"{float(g)!r},{float(d)!r}\n")
