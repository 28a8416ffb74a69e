import itertools
import math

import numpy as np
import pytest

from llweak.baselines import euler_path, euler_weak_step, romberg_estimate
from llweak.llweak_core import build_augmented, step_moments_expm
from llweak.montecarlo import McEstimate, functional_error, run_ensemble
from llweak.problems import get_problem
from llweak.sde_model import linearize, uniform_grid

from conftest import make_linear_problem, random_linear_problem


def test_euler_step_zero_coefficients():
    p = make_linear_problem(np.zeros((2, 2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))
    z = np.array([1.0, -2.0])
    out = euler_weak_step(p, 0.0, z, 0.5, np.array([1.0, -1.0])[:1])
    assert np.array_equal(out, z)


def test_euler_one_step_moments_by_enumeration(rng):
    p = random_linear_problem(rng, d=2, m=2)
    z = rng.uniform(-1.0, 1.0, 2)
    t, h = 0.3, 0.25
    outcomes = [euler_weak_step(p, t, z, h, np.array(signs, dtype=float))
                for signs in itertools.product((-1.0, 1.0), repeat=2)]
    mean = np.mean(outcomes, axis=0)
    second = np.mean([np.outer(o, o) for o in outcomes], axis=0)
    f = np.asarray(p.drift(t, z))
    g = np.asarray(p.diffusion(t, z))
    expected_mean = z + f * h
    expected_second = (np.outer(expected_mean, expected_mean)
                       + h * sum(np.outer(g[k], g[k]) for k in range(2)))
    assert np.allclose(mean, expected_mean, atol=1e-14)
    assert np.allclose(second, expected_second, atol=1e-13)


def test_euler_and_ll_one_step_means_agree_to_h2():
    # difference is C h^2 with stable C across h
    p = get_problem("example1")
    z = np.array([1.0, 2.0])
    lin = linearize(p, 0.0, z)
    f = np.asarray(p.drift(0.0, z))
    cs = []
    for h in (1.0 / 8, 1.0 / 16, 1.0 / 32):
        sm = step_moments_expm(build_augmented(lin, z), z, h)
        euler_mean = z + f * h
        cs.append(np.linalg.norm(sm.mu - euler_mean) / h ** 2)
    assert max(cs) / min(cs) < 1.5


def test_euler_path_overflow_flagged():
    # alpha = 10 with delta = 0.5 multiplies the norm by ~sqrt(26) per step
    p = get_problem("example1")
    grid = uniform_grid(0.0, 12.5, 0.5)
    noise = np.ones((len(grid) - 1, 2))
    states, overflow_step = euler_path(p, p.x0, grid, noise)
    assert overflow_step is not None
    assert np.all(np.isnan(states[overflow_step:]))
    assert np.all(np.isfinite(states[:overflow_step]))


def test_euler_ensemble_counts_overflow_separately():
    p = get_problem("example1")
    grid = uniform_grid(0.0, 12.5, 0.5)
    stats = run_ensemble(p, grid, "euler", 64, seed=5)
    assert stats.overflow_count == 64
    # nodes before the blow-up keep full ensembles and finite means; later
    # nodes report NaN instead of crashing the harness
    assert stats.alive[0] == 64
    dead_from = int(np.argmin(stats.alive > 0))
    assert dead_from > 0
    assert np.all(np.isfinite(stats.mean[:dead_from]))
    assert np.all(np.isnan(stats.mean[stats.alive == 0]))


def test_romberg_fixed_point():
    a = McEstimate(value=3.0, std_error=0.0, half_width=0.0, batches=2,
                   batch_size=10, delta=0.2, batch_values=np.array([3.0, 3.0]))
    b = McEstimate(value=3.0, std_error=0.0, half_width=0.0, batches=2,
                   batch_size=10, delta=0.1, batch_values=np.array([3.0, 3.0]))
    assert romberg_estimate(a, b).value == pytest.approx(3.0)


def test_romberg_removes_linear_bias():
    exact, c = 1.7, 4.0
    est = {}
    for h in (0.2, 0.1):
        batch_means = np.full(4, exact + c * h)
        est[h] = functional_error(batch_means, exact, delta=h, batch_size=5)
        assert est[h].value == pytest.approx(-c * h)
    combined = romberg_estimate(est[0.2], est[0.1])
    assert combined.value == pytest.approx(0.0, abs=1e-14)
    assert combined.half_width == 0.0


def test_romberg_rejects_bad_ratio():
    a = McEstimate(value=1.0, std_error=0.0, half_width=0.0, batches=2,
                   batch_size=1, delta=0.2)
    b = McEstimate(value=1.0, std_error=0.0, half_width=0.0, batches=2,
                   batch_size=1, delta=0.15)
    with pytest.raises(ValueError):
        romberg_estimate(a, b)
    with pytest.raises(ValueError):
        romberg_estimate(McEstimate(1.0, 0.0, 0.0, 2, 1), b)


def test_euler_table_iv_magnitude_quick():
    # desk-scale check of the reference magnitude at delta = 0.25
    p = get_problem("example2")
    grid = uniform_grid(0.0, 10.0, 0.25)
    stats = run_ensemble(p, grid, "euler", 2000, seed=99, batches=2)
    est = functional_error(stats.batch_phi, p.exact_functional(10.0),
                           delta=0.25, batch_size=2000)
    assert -40.0 < est.value < -25.0
