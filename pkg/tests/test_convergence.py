"""Convergence lab: schedules, traces, certificates, and rate checks."""

import math

import numpy as np
import pytest

from dflab.combiners import GradPair
from dflab.convergence import (
    RateCheckResult,
    ScheduleConfig,
    biquadratic_1d,
    estimate_lipschitz,
    pareto_certificate,
    rate_check,
    rotated_quadratics,
    run_schedule,
    shared_quadratic,
    telescoping_check,
    write_trace,
)
from dflab.errors import ConfigurationError, DivergenceError


def test_schedule_values_and_validation():
    cfg = ScheduleConfig(eta0=0.5, alpha_step=0.75, horizon=10)
    assert cfg.eta(0) == 0.5
    assert abs(cfg.eta(1) - 0.5 / 2**0.75) < 1e-15
    with pytest.raises(ConfigurationError):
        ScheduleConfig(alpha_step=0.5).check()
    with pytest.raises(ConfigurationError):
        ScheduleConfig(alpha_step=1.0).check()
    with pytest.raises(ConfigurationError):
        ScheduleConfig(eta0=0.0).check()


def test_certificate_zero_iff_hull_contains_origin():
    # Antiparallel gradients: the segment crosses zero.
    gp = GradPair(g_pred=np.array([2.0, 0.0]), g_dec=np.array([-1.0, 0.0]))
    assert pareto_certificate(gp) < 1e-15
    # Agreeing gradients: certificate is the shorter one's norm (lam clamps).
    gp = GradPair(g_pred=np.array([2.0, 0.0]), g_dec=np.array([1.0, 0.0]))
    assert abs(pareto_certificate(gp) - 1.0) < 1e-15


def test_certificate_matches_fine_grid():
    rng = np.random.default_rng(90)
    grid = np.linspace(0.0, 1.0, 100001)
    half_step = 0.5e-5
    for _ in range(50):
        g1 = rng.normal(size=3) * 10 ** rng.uniform(-3, 3)
        g2 = rng.normal(size=3) * 10 ** rng.uniform(-3, 3)
        gp = GradPair(g_pred=g1, g_dec=g2)
        cert = pareto_certificate(gp)
        norms = np.linalg.norm(grid[:, None] * g1 + (1 - grid[:, None]) * g2, axis=1)
        ref = float(norms.min())
        # The closed form can only undershoot the grid, and by at most the
        # norm's variation over half a grid step: |d/dlam| <= |g1 - g2|.
        assert cert <= ref + 1e-12 * max(1.0, ref)
        assert ref - cert <= np.linalg.norm(g1 - g2) * half_step + 1e-12


def test_shared_quadratic_decays_toward_origin():
    # The decaying schedule contracts x by prod(1 - 2 eta_k): sublinear but
    # steady. Losses are monotone and psi carries the aligned-pair identity.
    problem = shared_quadratic()
    cfg = ScheduleConfig(eta0=0.05, alpha_step=0.75, horizon=2000)
    trace = run_schedule(problem, cfg, np.array([3.0, -2.0]))
    assert len(trace) == 2000
    assert trace[-1].loss1 < 0.05 * trace[0].loss1
    for prev, cur in zip(trace, trace[1:]):
        assert cur.loss1 <= prev.loss1 + 1e-15
    # Identical objectives: cos(phi) = 1, so psi = (|g1|+|g2|) = 4 sqrt(loss).
    for row in trace[:10]:
        assert abs(row.psi - 4.0 * math.sqrt(row.loss1)) < 1e-9


def test_shared_quadratic_exact_landing_stops_trace():
    # eta0 = 0.5 maps x -> x (1 - 2 eta0) = 0 in one step: both gradients
    # vanish, the combiner reports degenerate, and the trace ends at 2 rows.
    problem = shared_quadratic()
    cfg = ScheduleConfig(eta0=0.5, alpha_step=0.75, horizon=1000)
    trace = run_schedule(problem, cfg, np.array([3.0, -2.0]))
    assert len(trace) == 2
    assert trace[-1].degenerate
    assert trace[-1].psi == 0.0 and trace[-1].m == 0.0
    assert trace[-1].runmin == 0.0


def test_biquadratic_lands_inside_pareto_segment():
    problem = biquadratic_1d()
    cfg = ScheduleConfig(eta0=0.5, alpha_step=0.75, horizon=100)
    trace = run_schedule(problem, cfg, np.array([3.0]))
    # One step from 3: gradients 2(x-1) = 4 and 2(x+1) = 8 share direction;
    # the merged step lands inside [-1, 1] where the pair turns antiparallel.
    assert len(trace) == 2
    assert trace[-1].degenerate
    assert -1.0 <= trace[-1].x[0] <= 1.0
    assert trace[-1].certificate < 1e-12
    assert trace[-1].runmin == 0.0


def test_biquadratic_from_inside_is_immediately_stationary():
    problem = biquadratic_1d()
    cfg = ScheduleConfig(eta0=0.1, alpha_step=0.75, horizon=50)
    trace = run_schedule(problem, cfg, np.array([0.25]))
    assert len(trace) == 1
    assert trace[0].degenerate and trace[0].psi == 0.0
    assert trace[0].certificate < 1e-12


def test_rotated_quadratics_long_run_decays():
    problem = rotated_quadratics()
    cfg = ScheduleConfig(eta0=0.2, alpha_step=0.75, horizon=5000)
    trace = run_schedule(problem, cfg, np.array([2.0, 2.0]))
    assert len(trace) == 5000
    assert trace[-1].runmin < trace[100].runmin
    assert trace[-1].certificate < 1.0
    # Iterates approach the Pareto set between the two minima: certificate
    # shrinks while individual gradients stay nonzero.
    assert trace[-1].m > 0.0


def test_trace_runmin_is_running_minimum():
    problem = rotated_quadratics()
    cfg = ScheduleConfig(eta0=0.2, alpha_step=0.75, horizon=200)
    trace = run_schedule(problem, cfg, np.array([-1.5, 0.5]))
    best = math.inf
    for row in trace:
        best = min(best, row.m_psi)
        assert row.runmin == best
        assert abs(row.m_psi - row.m * row.psi) < 1e-12


def test_descent_never_conflicts_with_either_gradient():
    # kappa = 0 bisector: the update direction has nonnegative dot with both
    # gradients at every step, so each loss is locally nonincreasing.
    problem = rotated_quadratics()
    cfg = ScheduleConfig(eta0=0.05, alpha_step=0.9, horizon=300)
    x = np.array([2.0, -1.0])
    for k in range(cfg.horizon):
        g1 = problem.grad1(x)
        g2 = problem.grad2(x)
        from dflab.combiners import CombinerConfig, select_update

        res = select_update(GradPair(g_pred=g1, g_dec=g2), CombinerConfig(strategy="ours"))
        if res.degenerate:
            break
        assert float(res.g @ g1) >= -1e-9 * np.linalg.norm(res.g) * np.linalg.norm(g1)
        assert float(res.g @ g2) >= -1e-9 * np.linalg.norm(res.g) * np.linalg.norm(g2)
        x = x - cfg.eta(k) * res.g


def test_rate_check_early_exact_branch():
    problem = biquadratic_1d()
    cfg = ScheduleConfig(eta0=0.5, alpha_step=0.75, horizon=100_000)
    trace = run_schedule(problem, cfg, np.array([3.0]))
    res = rate_check(trace)
    assert res.early_exact
    assert res.slope is None
    assert abs(res.bound + 0.25) < 1e-12  # alpha recovered from eta ratio


def test_rate_check_slope_beats_bound_on_shared_quadratic():
    problem = shared_quadratic()
    cfg = ScheduleConfig(eta0=0.05, alpha_step=0.75, horizon=4000)
    trace = run_schedule(problem, cfg, np.array([3.0, -2.0]))
    res = rate_check(trace, alpha_step=0.75)
    assert not res.early_exact
    assert res.bound == -0.25
    assert res.slope <= res.bound  # gradient flow on quadratics beats the bound


def test_rate_check_bound_tracks_alpha():
    for alpha in (0.6, 0.9):
        problem = shared_quadratic()
        cfg = ScheduleConfig(eta0=0.05, alpha_step=alpha, horizon=1200)
        trace = run_schedule(problem, cfg, np.array([1.0, 1.0]))
        res = rate_check(trace)
        assert abs(res.bound + (1.0 - alpha)) < 1e-9
        assert res.slope <= res.bound


def test_rate_check_validation():
    with pytest.raises(ConfigurationError):
        rate_check([])
    problem = rotated_quadratics()
    cfg = ScheduleConfig(eta0=0.2, alpha_step=0.75, horizon=500)
    trace = run_schedule(problem, cfg, np.array([2.0, 2.0]))
    with pytest.raises(ConfigurationError):
        rate_check(trace)  # nonzero runmin and fewer than 1000 rows


def test_telescoping_inequality_holds():
    for problem, start in [
        (shared_quadratic(), np.array([3.0, -2.0])),
        (rotated_quadratics(), np.array([2.0, 2.0])),
    ]:
        cfg = ScheduleConfig(eta0=0.05, alpha_step=0.75, horizon=2000)
        trace = run_schedule(problem, cfg, start)
        lipschitz = problem.lipschitz1 + problem.lipschitz2
        lhs, rhs = telescoping_check(trace, lipschitz)
        assert lhs <= rhs + 1e-9


def test_estimate_lipschitz_lower_bounds_analytic():
    problem = rotated_quadratics()
    lo, hi = np.array([-3.0, -3.0]), np.array([3.0, 3.0])
    l1, l2 = estimate_lipschitz(problem, lo, hi, n_samples=500, seed=1)
    assert l1 <= problem.lipschitz1 + 1e-9
    assert l2 <= problem.lipschitz2 + 1e-9
    assert l1 > 0.5 * problem.lipschitz1  # sampling actually sees the curvature
    assert l2 > 0.5 * problem.lipschitz2


def test_divergence_raises_with_partial_trace():
    problem = shared_quadratic()
    cfg = ScheduleConfig(eta0=1e8, alpha_step=0.75, horizon=100_000)
    with pytest.raises(DivergenceError) as err:
        run_schedule(problem, cfg, np.array([1.0, 1.0]))
    assert len(err.value.trace) >= 1


def test_run_schedule_rejects_nonfinite_start():
    with pytest.raises(ConfigurationError):
        run_schedule(shared_quadratic(), ScheduleConfig(), np.array([np.nan, 0.0]))


def test_write_trace_schema(tmp_path):
    problem = biquadratic_1d()
    cfg = ScheduleConfig(eta0=0.5, alpha_step=0.75, horizon=10)
    trace = run_schedule(problem, cfg, np.array([3.0]))
    path = tmp_path / "trace.csv"
    write_trace(trace, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "k,eta,loss1,loss2,psi,m,m_psi,runmin,certificate"
    assert len(lines) == 1 + len(trace)
    first = lines[1].split(",")
    assert first[0] == "0" and float(first[1]) == 0.5
    # Full-precision round trip.
    assert float(first[2]) == trace[0].loss1


def test_rate_check_result_shape():
    res = RateCheckResult(slope=-0.3, bound=-0.25)
    assert not res.early_exact
