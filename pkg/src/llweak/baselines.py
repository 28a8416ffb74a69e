"""Weak Euler baseline and Romberg extrapolation.

The Euler step uses the same two-point variates as the main scheme so both
share noise infrastructure; overflowing trajectories are an expected,
reportable outcome on stiff configurations and are counted rather than
propagated into averages (see the ensemble drivers).
"""

import math

import numpy as np

from ._drivers import OVERFLOW_NORM
from .montecarlo import McEstimate, functional_error
from .sde_model import check_grid


def euler_weak_step(problem, t, z, h, eta):
    """One weak Euler step: z + f h + sum_k g_k sqrt(h) eta_k, eta in {-1,+1}^m."""
    if h <= 0:
        raise ValueError("step size must be positive")
    z = np.asarray(z, dtype=np.float64).reshape(problem.d)
    eta = np.asarray(eta, dtype=np.float64).reshape(problem.m)
    g = np.asarray(problem.diffusion(t, z))
    return z + np.asarray(problem.drift(t, z)) * h + math.sqrt(h) * (g.T @ eta)


def euler_path(problem, z0, grid, noise):
    """Weak Euler trajectory over a grid with given +-1 increments.

    ``noise`` has shape (len(grid) - 1, m).  Returns (states, overflow_step):
    when the state norm passes the overflow bound or goes non-finite, the
    remaining rows are NaN and overflow_step is the first bad node index.
    """
    grid = check_grid(grid)
    z = np.asarray(z0, dtype=np.float64).reshape(problem.d)
    noise = np.asarray(noise, dtype=np.float64)
    nsteps = grid.shape[0] - 1
    if noise.shape != (nsteps, problem.m):
        raise ValueError(f"noise must have shape ({nsteps}, {problem.m})")
    out = np.full((nsteps + 1, problem.d), np.nan)
    out[0] = z
    for n in range(nsteps):
        z = euler_weak_step(problem, grid[n], z, grid[n + 1] - grid[n], noise[n])
        if not np.all(np.isfinite(z)) or np.linalg.norm(z) > OVERFLOW_NORM:
            return out, n + 1
        out[n + 1] = z
    return out, None


def romberg_estimate(est_h: McEstimate, est_h2: McEstimate) -> McEstimate:
    """First-order extrapolation of two estimates at stepsizes h and h/2.

    A weak order-1 scheme has bias E + c h, so 2 est(h/2) - est(h) removes the
    linear term.  Combines per-batch values when both estimates carry them and
    rebuilds the Student-t interval from the combined batch errors.
    """
    if est_h.delta is None or est_h2.delta is None:
        raise ValueError("estimates must carry their stepsize")
    if not math.isclose(est_h.delta, 2.0 * est_h2.delta, rel_tol=1e-9):
        raise ValueError(
            f"stepsize ratio must be 2, got {est_h.delta} vs {est_h2.delta}"
        )
    if est_h.batch_values is not None and est_h2.batch_values is not None \
            and est_h.batches == est_h2.batches:
        combined = 2.0 * est_h2.batch_values - est_h.batch_values
        # batch_values hold exact - estimate, so feeding (exact - combined)
        # as "means" with exact 0 reproduces the combined errors.
        est = functional_error(-combined, 0.0, delta=est_h.delta,
                               overflow_count=est_h.overflow_count
                               + est_h2.overflow_count,
                               batch_size=est_h.batch_size)
        return est
    return McEstimate(
        value=2.0 * est_h2.value - est_h.value,
        std_error=math.hypot(2.0 * est_h2.std_error, est_h.std_error),
        half_width=math.hypot(2.0 * est_h2.half_width, est_h.half_width),
        batches=min(est_h.batches, est_h2.batches),
        batch_size=est_h.batch_size,
        overflow_count=est_h.overflow_count + est_h2.overflow_count,
        delta=est_h.delta,
    )
