"""Spectrum estimation: HVP exactness, Ritz values against dense eigensolves."""

import numpy as np
import pytest

from dflab.errors import ConfigurationError, NumericError
from dflab.spectrum import (
    default_grid,
    density_from_ritz,
    hessian_vector_product,
    lanczos_spectrum,
    lanczos_spectrum_matvec,
    write_spectrum,
)


def quad_grad(mat):
    return lambda theta: mat @ theta


def test_hvp_exact_on_quadratics():
    rng = np.random.default_rng(80)
    for _ in range(10):
        n = int(rng.integers(2, 15))
        m = rng.normal(size=(n, n))
        mat = (m + m.T) / 2
        theta = rng.normal(size=n)
        v = rng.normal(size=n)
        hv = hessian_vector_product(quad_grad(mat), theta, v)
        assert np.max(np.abs(hv - mat @ v)) < 1e-8 * max(1.0, np.max(np.abs(mat @ v)))


def test_hvp_linear_in_v():
    mat = np.diag([1.0, 4.0, 9.0])
    v = np.array([1.0, 1.0, 1.0])
    hv1 = hessian_vector_product(quad_grad(mat), np.zeros(3), v)
    hv5 = hessian_vector_product(quad_grad(mat), np.zeros(3), 5.0 * v)
    assert np.allclose(hv5, 5.0 * hv1, rtol=1e-10)


def test_hvp_quartic_accuracy():
    # grad of sum(x^4) is 4x^3; Hessian diag 12 x^2.
    grad_fn = lambda t: 4.0 * t**3
    theta = np.array([1.0, -2.0])
    hv = hessian_vector_product(grad_fn, theta, np.array([1.0, 1.0]))
    assert np.max(np.abs(hv - np.array([12.0, 48.0]))) < 1e-4


def test_hvp_rejects_zero_direction():
    with pytest.raises(ConfigurationError):
        hessian_vector_product(quad_grad(np.eye(2)), np.zeros(2), np.zeros(2))


def test_hvp_rejects_nonfinite_gradient():
    def bad_grad(theta):
        return np.full_like(theta, np.nan)

    with pytest.raises(NumericError):
        hessian_vector_product(bad_grad, np.zeros(2), np.ones(2))


def test_full_lanczos_recovers_diag_spectrum():
    mat = np.diag(np.arange(1.0, 11.0))
    est = lanczos_spectrum_matvec(lambda v: mat @ v, n=10, steps=10, probes=4, seed=0)
    for vals in est.ritz_values:
        assert np.max(np.abs(np.sort(vals) - np.arange(1.0, 11.0))) < 1e-6


def test_partial_lanczos_brackets_spectrum():
    rng = np.random.default_rng(81)
    m = rng.normal(size=(40, 40))
    mat = (m + m.T) / 2
    evals = np.linalg.eigvalsh(mat)
    est = lanczos_spectrum_matvec(lambda v: mat @ v, n=40, steps=20, probes=4, seed=1)
    for vals in est.ritz_values:
        assert vals.min() >= evals.min() - 1e-8
        assert vals.max() <= evals.max() + 1e-8
    # Extreme Ritz values converge first; some probe nails each spectral edge.
    assert abs(max(v.max() for v in est.ritz_values) - evals.max()) < 1e-4
    assert abs(min(v.min() for v in est.ritz_values) - evals.min()) < 1e-4


def test_ritz_weights_sum_to_one():
    rng = np.random.default_rng(82)
    m = rng.normal(size=(15, 15))
    mat = (m + m.T) / 2
    est = lanczos_spectrum_matvec(lambda v: mat @ v, n=15, steps=9, probes=5, seed=2)
    for wts in est.ritz_weights:
        assert abs(float(np.sum(wts)) - 1.0) < 1e-10


def test_identity_operator_truncates_first_step():
    est = lanczos_spectrum_matvec(lambda v: v, n=12, steps=6, probes=3, seed=3)
    assert all(est.truncated)
    for vals in est.ritz_values:
        assert np.allclose(vals, 1.0, atol=1e-12)
    # Degenerate span falls back to a unit-wide grid around the spike.
    assert est.grid[0] < 1.0 < est.grid[-1]


def test_density_integrates_to_one():
    mat = np.diag(np.linspace(-3.0, 5.0, 25))
    est = lanczos_spectrum_matvec(lambda v: mat @ v, n=25, steps=25, probes=4, seed=4)
    integral = np.trapezoid(est.density, est.grid)
    assert abs(integral - 1.0) < 1e-3


def test_mass_matches_numeric_integral():
    mat = np.diag(np.linspace(0.0, 4.0, 30))
    est = lanczos_spectrum_matvec(lambda v: mat @ v, n=30, steps=30, probes=3, seed=5)
    lo, hi = 1.0, 3.0
    fine = np.linspace(lo, hi, 200001)  # endpoints exact; trapezoid error ~ 1e-8
    dens, _ = density_from_ritz(est.ritz_values, est.ritz_weights, est.grid)
    # Rebuild the mixture on a fine grid with the coarse grid's bandwidth.
    scale = est.bandwidth
    num = 0.0
    for vals, wts in zip(est.ritz_values, est.ritz_weights):
        z = (fine[None, :] - vals[:, None]) / scale
        mix = np.asarray(wts) @ (np.exp(-0.5 * z * z) / (scale * np.sqrt(2 * np.pi)))
        num += np.trapezoid(mix, fine)
    num /= len(est.ritz_values)
    assert abs(est.mass(lo, hi) - num) < 1e-6
    assert dens.shape == est.grid.shape


def test_mass_validates_interval():
    est = lanczos_spectrum_matvec(lambda v: v, n=5, steps=3, probes=1, seed=6)
    with pytest.raises(ConfigurationError):
        est.mass(1.0, 0.0)


def test_lanczos_spectrum_from_gradient_function():
    mat = np.diag([2.0, 2.0, 8.0, 8.0])
    est = lanczos_spectrum(quad_grad(mat), np.zeros(4), steps=4, probes=3, seed=7)
    for vals in est.ritz_values:
        got = np.sort(np.unique(np.round(vals, 4)))
        assert np.allclose(got, [2.0, 8.0], atol=1e-4)
    assert est.mass(7.0, 9.0) > 0.4  # half the mass sits near 8


def test_steps_cannot_exceed_dimension():
    with pytest.raises(ConfigurationError):
        lanczos_spectrum_matvec(lambda v: v, n=3, steps=4)
    with pytest.raises(ConfigurationError):
        lanczos_spectrum_matvec(lambda v: v, n=3, steps=0)


def test_spectrum_deterministic_in_seed():
    mat = np.diag(np.linspace(1.0, 2.0, 8))
    a = lanczos_spectrum_matvec(lambda v: mat @ v, n=8, steps=5, probes=2, seed=11)
    b = lanczos_spectrum_matvec(lambda v: mat @ v, n=8, steps=5, probes=2, seed=11)
    assert all(np.array_equal(x, y) for x, y in zip(a.ritz_values, b.ritz_values))
    assert np.array_equal(a.density, b.density)


def test_write_spectrum_schema(tmp_path):
    est = lanczos_spectrum_matvec(lambda v: 2.0 * v, n=6, steps=3, probes=1, seed=8)
    path = tmp_path / "spec.csv"
    write_spectrum(est, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "eigenvalue_grid,density"
    assert len(lines) == 1 + len(est.grid)
    g0, d0 = lines[1].split(",")
    assert float(g0) == est.grid[0] and float(d0) == est.density[0]


def test_default_grid_padding():
    grid = default_grid([np.array([0.0, 10.0])])
    assert grid[0] == -0.5 and grid[-1] == 10.5
