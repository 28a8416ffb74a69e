import math

import numpy as np
import pytest

from llweak.montecarlo import (arctan_errors, estimate_moments, fit_gamma,
                               functional_error, moment_error_curves,
                               moment_error_labels, run_ensemble,
                               run_error_table, t_cdf, t_quantile)
from llweak.problems import get_problem
from llweak.rng import derive_seed
from llweak.sde_model import uniform_grid


# ---------------------------------------------------------------------------
# Student-t
# ---------------------------------------------------------------------------

def test_t_quantile_reference_value():
    # the 0.95 quantile at 99 degrees of freedom, used for K = 100 batches
    assert t_quantile(0.95, 99) == pytest.approx(1.6604, abs=5e-5)


def test_t_quantile_against_scipy():
    ss = pytest.importorskip("scipy.stats")
    for df in (9, 99, 999):
        for p in (0.95, 0.975):
            assert abs(t_quantile(p, df) - ss.t.ppf(p, df)) <= 1e-8


def test_t_cdf_properties():
    assert t_cdf(0.0, 7) == 0.5
    assert t_cdf(1.3, 7) + t_cdf(-1.3, 7) == pytest.approx(1.0, abs=1e-14)
    xs = np.linspace(-4, 4, 33)
    vals = [t_cdf(float(x), 5) for x in xs]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_t_quantile_round_trip():
    for df in (3, 30):
        for p in (0.6, 0.9, 0.99):
            assert t_cdf(t_quantile(p, df), df) == pytest.approx(p, abs=1e-9)


def test_t_quantile_rejects_bad_p():
    with pytest.raises(ValueError):
        t_quantile(0.0, 5)
    with pytest.raises(ValueError):
        t_quantile(1.0, 5)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def test_estimate_moments_constant_ensemble():
    states = np.tile([2.0, -1.0], (50, 1))
    mean, second, var = estimate_moments(states)
    assert np.array_equal(mean, [2.0, -1.0])
    assert np.allclose(var, 0.0, atol=1e-14)
    assert np.allclose(second, np.outer(mean, mean), atol=1e-14)


def test_estimate_moments_two_point_scalar():
    states = np.array([[1.0], [-1.0]])
    mean, second, var = estimate_moments(states)
    assert mean[0] == 0.0
    assert var[0, 0] == 1.0


def test_estimate_moments_rejects_empty():
    with pytest.raises(ValueError):
        estimate_moments(np.zeros((0, 2)))


def test_error_curves_zero_and_offset():
    nodes, d = 6, 2
    mean = np.zeros((nodes, d))
    var = np.tile(np.eye(d), (nodes, 1, 1))
    labels = moment_error_labels(d)
    assert labels == ["mean_1", "mean_2", "var_11", "var_22", "cov_12"]
    curves = moment_error_curves(mean, var, mean.copy(), var.copy())
    assert np.array_equal(curves, np.zeros((5, nodes)))
    shifted = mean.copy()
    shifted[:, 0] += 0.25
    curves = moment_error_curves(shifted, var, mean, var)
    assert np.array_equal(curves[0], np.full(nodes, 0.25))
    assert np.array_equal(curves[1:], np.zeros((4, nodes)))


def test_fit_gamma_exact_half_rate():
    m_list = [2 ** k for k in (8, 10, 12, 14, 16, 18)]
    curves = np.array([np.full(10, 3.0 / math.sqrt(m)) for m in m_list])
    gamma, std, excluded = fit_gamma(m_list, curves)
    assert gamma == pytest.approx(0.5, abs=1e-12)
    assert std == pytest.approx(0.0, abs=1e-12)
    assert excluded == 0


def test_fit_gamma_constant_errors():
    m_list = [2 ** k for k in (8, 10, 12)]
    curves = np.ones((3, 7))
    gamma, std, _ = fit_gamma(m_list, curves)
    assert gamma == pytest.approx(0.0, abs=1e-13)


def test_fit_gamma_excludes_zero_errors():
    m_list = [256, 1024, 4096]
    curves = np.ones((3, 4))
    curves[1, 2] = 0.0
    _, _, excluded = fit_gamma(m_list, curves)
    assert excluded == 1
    with pytest.raises(ValueError):
        fit_gamma([256, 1024], np.zeros((2, 3)))


def test_functional_error_basics():
    est = functional_error(np.full(5, 1.3), exact=1.8, batch_size=11)
    assert est.value == pytest.approx(0.5)
    assert est.half_width == 0.0
    assert est.batches == 5 and est.batch_size == 11
    with pytest.raises(ValueError):
        functional_error(np.array([1.0]), 0.0)


def test_functional_error_interval_width():
    r = np.random.default_rng(1)
    batch = 2.0 + 0.1 * r.standard_normal(100)
    est = functional_error(batch, exact=2.0, alpha=0.10)
    t95 = t_quantile(0.95, 99)
    assert est.half_width == pytest.approx(t95 * est.std_error, rel=1e-12)


def test_arctan_errors_identical_and_bounds():
    h = np.full((5, 2), 1.0)
    assert np.array_equal(arctan_errors(h, h), np.zeros(2))
    # every atan(1 + x^2) value lies in (pi/4, pi/2)
    x = np.linspace(-10, 10, 101)
    vals = np.arctan(1.0 + x * x)
    assert vals.min() > math.pi / 4 - 1e-12
    assert vals.max() < math.pi / 2


# ---------------------------------------------------------------------------
# Ensemble runner
# ---------------------------------------------------------------------------

def test_run_ensemble_thread_invariance_and_rerun():
    p = get_problem("gbm")
    grid = uniform_grid(0.0, 1.0, 0.125)
    a = run_ensemble(p, grid, "llweak", 600, seed=42, threads=1)
    b = run_ensemble(p, grid, "llweak", 600, seed=42, threads=4)
    c = run_ensemble(p, grid, "llweak", 600, seed=42, threads=2)
    for other in (b, c):
        assert np.array_equal(a.mean, other.mean)
        assert np.array_equal(a.second, other.second)
        assert np.array_equal(a.atan_mean, other.atan_mean)
    # covariances stayed PSD within tolerance at every accepted step
    assert a.failure_count == 0 and a.overflow_count == 0


def test_run_ensemble_map_and_general_drivers_agree():
    # same trajectories through the cached-map and relinearizing code paths
    p_map = get_problem("gbm")
    p_gen = get_problem("gbm")
    p_gen.constant_linearization = False
    grid = uniform_grid(0.0, 1.0, 0.25)
    a = run_ensemble(p_map, grid, "llweak", 300, seed=7)
    b = run_ensemble(p_gen, grid, "llweak", 300, seed=7)
    assert np.allclose(a.mean, b.mean, rtol=1e-9, atol=1e-12)
    assert np.allclose(a.second, b.second, rtol=1e-9, atol=1e-12)


def test_run_ensemble_matches_integrate_path():
    # driver trajectories coincide with the library stepping, stream by stream
    from llweak.llweak_core import integrate_path
    from llweak.rng import RngStream

    p = get_problem("example2")
    grid = uniform_grid(0.0, 1.0, 0.25)
    m_traj = 5
    seed = derive_seed(31, 1, 0)
    stats = run_ensemble(p, grid, "llweak", m_traj, seed=seed)
    states = []
    for traj in range(m_traj):
        stream = RngStream(seed, traj)
        noise = np.array([[stream.two_point() for _ in range(p.d)]
                          for _ in range(len(grid) - 1)])
        states.append(integrate_path(p, p.x0, grid, noise))
    mean, second, _ = estimate_moments(np.stack(states))
    assert np.allclose(stats.mean, mean, rtol=1e-12, atol=1e-13)
    assert np.allclose(stats.second, second, rtol=1e-12, atol=1e-13)


def test_run_ensemble_batches_partition_streams():
    p = get_problem("gbm")
    grid = uniform_grid(0.0, 0.5, 0.25)
    whole = run_ensemble(p, grid, "exact", 400, seed=9, batches=1)
    split = run_ensemble(p, grid, "exact", 100, seed=9, batches=4)
    # same 400 streams, same totals; batch means average to the global mean
    assert np.allclose(split.batch_phi.mean(), whole.batch_phi[0], rtol=1e-12)


def test_run_ensemble_validates_inputs():
    p = get_problem("gbm")
    grid = uniform_grid(0.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        run_ensemble(p, grid, "llweak", 0, seed=1)
    with pytest.raises(ValueError):
        run_ensemble(p, grid, "warp", 10, seed=1)
    p2 = get_problem("example2")
    with pytest.raises(ValueError):
        run_ensemble(p2, grid, "exact", 10, seed=1)


def test_sampler_errors_shrink_with_m():
    # exact-sampler errors shrink along the M ladder up to 2^16 in at least
    # 4 of 5 statistics, averaged over 3 seeds (coarse grid keeps this quick)
    p = get_problem("example1")
    grid = uniform_grid(0.0, p.t_end, p.t_end / 67)
    from llweak.montecarlo import exact_moment_curves
    exact_mean, exact_var = exact_moment_curves(p, grid)
    m_list = [2 ** 8, 2 ** 10, 2 ** 12, 2 ** 14, 2 ** 16]
    errs = np.zeros((3, 5, len(m_list)))
    for si, seed in enumerate((101, 202, 303)):
        for col, m in enumerate(m_list):
            st = run_ensemble(p, grid, "exact", m, derive_seed(seed, 3, col))
            curves = moment_error_curves(st.mean, st.var, exact_mean, exact_var)
            errs[si, :, col] = curves.max(axis=1)
    avg = errs.mean(axis=0)
    improved = int(np.sum(avg[:, -1] < avg[:, 0]))
    assert improved >= 4


def test_ensemble_second_moment_matches_propagation():
    # sampled E|z_N|^2 agrees with the sampling-free propagation oracle
    from llweak.llweak_core import moment_propagate

    p = get_problem("example1")
    grid = uniform_grid(0.0, 2.0, 1.0 / 64)
    m = 4096
    stats = run_ensemble(p, grid, "llweak", m, seed=314)
    _, seconds = moment_propagate(p, grid)
    sampled = float(np.trace(stats.second[-1]))
    expected = float(np.trace(seconds[-1]))
    # |z_N|^2 has a standard deviation below its mean here, so this bound
    # is several standard errors wide
    assert abs(sampled - expected) <= 5.0 * expected / math.sqrt(m)


def test_arctan_functional_magnitude_desk_scale():
    # relative atan-functional gap of order 1e-2 at M = 2^12 on the full grid
    p = get_problem("example1")
    grid = uniform_grid(0.0, p.t_end, 1.0 / 64)
    m = 2 ** 12
    sch = run_ensemble(p, grid, "llweak", m, seed=derive_seed(6, 1, 0))
    exa = run_ensemble(p, grid, "exact", m, seed=derive_seed(6, 3, 0))
    r = arctan_errors(exa.atan_mean, sch.atan_mean)
    assert np.all(r > 1e-4)
    assert np.all(r < 0.1)


def test_run_error_table_shapes():
    p = get_problem("example1")
    grid = uniform_grid(0.0, 1.0, 0.125)
    res = run_error_table(p, grid, [64, 256], seed=5)
    assert res.labels == ["mean_1", "mean_2", "var_11", "var_22", "cov_12"]
    assert res.scheme_errors.shape == (5, 2)
    assert res.sampler_errors.shape == (5, 2)
    assert res.atan_rel.shape == (2, 2)
    assert np.all(res.scheme_errors > 0)
    assert np.all(np.isfinite(res.scheme_gamma))


def test_run_error_table_needs_exact_moments():
    p = get_problem("example2")
    grid = uniform_grid(0.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        run_error_table(p, grid, [16], seed=1)
