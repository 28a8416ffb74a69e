"""Monte Carlo ensembles, estimators and error statistics.

The runner simulates trajectory ensembles through the chunked drivers (see
``llweak._drivers``) and reduces them to per-node sample means, second
moments, variances and atan-functional means.  Estimator conventions follow
the benchmark tables this package reproduces:

* sample variance is the population form  v = (1/M) sum zz^T - m m^T;
* per-statistic errors are absolute differences against exact curves,
  maximized over grid nodes; for d = 2 the statistics are the two mean
  components, the two variance diagonals and the covariance;
* the Monte Carlo rate gamma is minus the least-squares slope of log2(error)
  against log2(M), fitted per node and then averaged over nodes;
* functional errors are batched: each of K batches of M trajectories yields
  e_j = exact - batch mean, and the K values give a Student-t confidence
  interval.  The sign convention (exact minus estimate) matches the reference
  convergence table; see the half-width formula in :func:`functional_error`.

Everything is deterministic given (seed, problem, scheme, grid, M, K): stream
ids and counters depend only on trajectory indices, and reductions run in
fixed order regardless of thread count.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _drivers
from ._backend import set_threads
from .llweak_core import StateDependentLinearization, step_maps_for_grid
from .rng import derive_seed
from .sde_model import check_grid

CHUNK_TARGET = 256

PURPOSE_LLWEAK = 1
PURPOSE_EULER = 2
PURPOSE_EXACT = 3
PURPOSE_ROMBERG = 4

PURPOSES = {
    "llweak": PURPOSE_LLWEAK,
    "euler": PURPOSE_EULER,
    "exact": PURPOSE_EXACT,
}


# ---------------------------------------------------------------------------
# Student-t quantiles via the regularized incomplete beta function
# ---------------------------------------------------------------------------

def _betacf(a, b, x):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def reg_inc_beta(a, b, x):
    """Regularized incomplete beta function I_x(a, b) for a, b > 0."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
             + a * math.log(x) + b * math.log1p(-x))
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def t_cdf(t, df):
    """CDF of the Student-t distribution with df degrees of freedom."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if t == 0.0:
        return 0.5
    x = df / (df + t * t)
    tail = 0.5 * reg_inc_beta(0.5 * df, 0.5, x)
    return 1.0 - tail if t > 0 else tail


def t_quantile(p, df, tol=1e-10):
    """Student-t quantile by bisection on the incomplete-beta CDF."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_quantile(1.0 - p, df, tol)
    lo, hi = 0.0, 1.0
    while t_cdf(hi, df) < p:
        hi *= 2.0
        if hi > 1e300:
            raise ValueError("quantile out of range")
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def estimate_moments(states):
    """Sample mean, second moment and variance of an in-memory ensemble.

    ``states`` has shape (M, d) or (M, nodes, d); node axes are preserved.
    Variance is the population estimator (1/M) sum zz^T - m m^T.
    """
    states = np.asarray(states, dtype=np.float64)
    squeeze = states.ndim == 2
    if squeeze:
        states = states[:, None, :]
    if states.ndim != 3 or states.shape[0] < 1:
        raise ValueError("need a nonempty ensemble of shape (M, nodes, d)")
    mean = states.mean(axis=0)
    second = np.einsum("mni,mnj->nij", states, states) / states.shape[0]
    var = second - np.einsum("ni,nj->nij", mean, mean)
    if squeeze:
        return mean[0], second[0], var[0]
    return mean, second, var


def moment_error_labels(d):
    """Statistic labels: mean components, variance diagonals, covariances."""
    labels = [f"mean_{i + 1}" for i in range(d)]
    labels += [f"var_{i + 1}{i + 1}" for i in range(d)]
    labels += [f"cov_{i + 1}{j + 1}" for i in range(d) for j in range(i + 1, d)]
    return labels


def moment_error_curves(mean, var, exact_mean, exact_var):
    """Per-node absolute errors of each tracked statistic, shape (L, nodes)."""
    d = mean.shape[1]
    curves = [np.abs(mean[:, i] - exact_mean[:, i]) for i in range(d)]
    curves += [np.abs(var[:, i, i] - exact_var[:, i, i]) for i in range(d)]
    curves += [np.abs(var[:, i, j] - exact_var[:, i, j])
               for i in range(d) for j in range(i + 1, d)]
    return np.stack(curves)


def fit_gamma(m_list, curves_by_m):
    """Monte Carlo rate estimate from errors at increasing sample counts.

    ``curves_by_m`` stacks the per-node error curves for each M in ``m_list``
    (shape (len(m_list), nodes)).  Per node, gamma is minus the least-squares
    slope of log2(error) vs log2(M) over the points with positive error; the
    initial node is excluded (its error is identically zero).  Returns
    (gamma_mean, gamma_std, excluded_points).
    """
    m_list = np.asarray(m_list, dtype=np.float64)
    curves = np.asarray(curves_by_m, dtype=np.float64)
    if curves.shape[0] != m_list.shape[0]:
        raise ValueError("one error curve per sample count required")
    log_m = np.log2(m_list)
    gammas = []
    excluded = 0
    for node in range(1, curves.shape[1]):
        errs = curves[:, node]
        usable = errs > 0.0
        excluded += int(np.sum(~usable))
        if np.sum(usable) < 2:
            continue
        x = log_m[usable]
        y = np.log2(errs[usable])
        slope = np.polyfit(x, y, 1)[0]
        gammas.append(-slope)
    if not gammas:
        raise ValueError("fewer than 2 usable points at every node")
    gammas = np.asarray(gammas)
    std = float(np.std(gammas, ddof=1)) if gammas.size > 1 else 0.0
    return float(np.mean(gammas)), std, excluded


@dataclass
class McEstimate:
    """Batched Monte Carlo estimate with a Student-t confidence half-width."""

    value: float
    std_error: float
    half_width: float
    batches: int
    batch_size: int
    overflow_count: int = 0
    delta: Optional[float] = None
    batch_values: Optional[np.ndarray] = None


def functional_error(batch_means, exact, alpha=0.10, delta=None, overflow_count=0,
                     batch_size=0):
    """Batched error estimate of a scalar functional.

    ``batch_means`` holds the per-batch sample means of phi(z_N); the batch
    errors are e_j = exact - batch mean (the reference tables' signed
    convention), and the two-sided (1-alpha) interval uses the Student-t
    quantile at 1 - alpha/2 with K-1 degrees of freedom:
    half_width = t_{1-alpha/2, K-1} * sqrt(var_batch / K).
    """
    batch_means = np.asarray(batch_means, dtype=np.float64)
    k = batch_means.shape[0]
    if k < 2:
        raise ValueError("need at least 2 batches")
    errors = float(exact) - batch_means
    value = float(np.mean(errors))
    var_batch = float(np.var(errors, ddof=1))
    std_error = math.sqrt(var_batch / k)
    half = t_quantile(1.0 - 0.5 * alpha, k - 1) * std_error if var_batch > 0 else 0.0
    return McEstimate(value=value, std_error=std_error, half_width=half,
                      batches=k, batch_size=batch_size,
                      overflow_count=int(overflow_count),
                      delta=delta, batch_values=errors)


def arctan_errors(exact_atan_mean, scheme_atan_mean):
    """Relative differences of the atan(1 + x_l^2) functional means.

    Componentwise max over nodes of |(href - hest) / href|; the functional is
    bounded in (pi/4, pi/2) so the denominator never vanishes.
    """
    href = np.asarray(exact_atan_mean)
    hest = np.asarray(scheme_atan_mean)
    if href.shape != hest.shape:
        raise ValueError("functional means must share the grid")
    return np.max(np.abs((href - hest) / href), axis=0)


# ---------------------------------------------------------------------------
# Ensemble runner
# ---------------------------------------------------------------------------

@dataclass
class EnsembleStats:
    """Reduced statistics of one simulated ensemble."""

    grid: np.ndarray
    mean: np.ndarray        # (nodes, d)
    second: np.ndarray      # (nodes, d, d)
    var: np.ndarray         # (nodes, d, d)
    atan_mean: np.ndarray   # (nodes, d)
    alive: np.ndarray       # (nodes,)
    overflow_count: int
    failure_count: int
    batches: int
    batch_size: int
    batch_phi: np.ndarray   # (K,) per-batch means of |z_N|^2 over alive paths
    batch_alive: np.ndarray  # (K,)


def _chunk_plan(batches, batch_size):
    starts = []
    ends = []
    owner = []
    per_batch = max(1, math.ceil(batch_size / CHUNK_TARGET))
    base = batch_size // per_batch
    rem = batch_size % per_batch
    for j in range(batches):
        pos = j * batch_size
        for i in range(per_batch):
            size = base + (1 if i < rem else 0)
            if size == 0:
                continue
            starts.append(pos)
            ends.append(pos + size)
            owner.append(j)
            pos += size
    return (np.asarray(starts, dtype=np.int64), np.asarray(ends, dtype=np.int64),
            np.asarray(owner, dtype=np.int64))


def _ll_driver_args(problem, grid):
    """Pick the cached-map or general driver for the scheme ensemble."""
    if problem.constant_linearization:
        try:
            maps = step_maps_for_grid(problem, grid)
        except StateDependentLinearization:
            maps = None
        if maps is not None:
            phis = np.stack([mp.Phi for mp in maps])
            psis = np.stack([mp.psi for mp in maps])
            gs = np.stack([mp.G for mp in maps])
            fs = np.stack([mp.F for mp in maps])
            cs = np.stack([mp.c for mp in maps])
            return "map", (phis, psis, gs, fs, cs)
    return "general", None


def _get_driver(problem, kind):
    cache = problem._cache
    if kind not in cache:
        if kind == "ll":
            cache[kind] = _drivers.make_ll_ensemble(
                problem.drift, problem.diffusion, problem.jac_x, problem.jac_t)
        elif kind == "euler":
            cache[kind] = _drivers.make_euler_ensemble(problem.drift, problem.diffusion)
        elif kind == "exact":
            if problem.exact_sampler is None:
                raise ValueError(f"problem {problem.name!r} has no exact sampler")
            cache[kind] = _drivers.make_exact_ensemble(problem.exact_sampler, problem.m)
        else:
            raise ValueError(f"unknown driver kind {kind!r}")
    return cache[kind]


def run_ensemble(problem, grid, scheme, samples, seed, batches=1, threads=None):
    """Simulate an ensemble and reduce it to per-node statistics.

    ``scheme`` is one of ``llweak``, ``euler``, ``exact``; ``samples`` is the
    per-batch trajectory count M and ``batches`` the batch count K (total
    M*K trajectories).  ``seed`` is the run seed; trajectory i of batch j uses
    stream j*M + i.
    """
    grid = check_grid(grid, problem.t0)
    if samples < 1 or batches < 1:
        raise ValueError("samples and batches must be >= 1")
    if threads is not None:
        set_threads(threads)
    starts, ends, owner = _chunk_plan(batches, samples)
    nchunks = starts.shape[0]
    nodes = grid.shape[0]
    d = problem.d
    sum_z = np.zeros((nchunks, nodes, d))
    sum_zz = np.zeros((nchunks, nodes, d, d))
    sum_atan = np.zeros((nchunks, nodes, d))
    alive = np.zeros((nchunks, nodes), dtype=np.int64)
    overflow = np.zeros(nchunks, dtype=np.int64)
    failed = np.zeros(nchunks, dtype=np.int64)
    seed = int(seed)

    if scheme == "llweak":
        mode, map_args = _ll_driver_args(problem, grid)
        if mode == "map":
            phis, psis, gs, fs, cs = map_args
            _drivers.ll_map_ensemble(phis, psis, gs, fs, cs, problem.x0,
                                     nodes - 1, seed, starts, ends,
                                     sum_z, sum_zz, sum_atan, alive, overflow, failed)
        else:
            _get_driver(problem, "ll")(problem.x0, grid, seed, starts, ends,
                                       sum_z, sum_zz, sum_atan, alive, overflow, failed)
    elif scheme == "euler":
        _get_driver(problem, "euler")(problem.x0, grid, seed, starts, ends,
                                      sum_z, sum_zz, sum_atan, alive, overflow, failed)
    elif scheme == "exact":
        _get_driver(problem, "exact")(problem.x0, grid, seed, starts, ends,
                                      sum_z, sum_zz, sum_atan, alive, overflow, failed)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")

    tot_z = sum_z.sum(axis=0)
    tot_zz = sum_zz.sum(axis=0)
    tot_atan = sum_atan.sum(axis=0)
    tot_alive = alive.sum(axis=0)
    # a node whose ensemble fully overflowed reports NaN statistics rather
    # than aborting: overflow is an expected, countable outcome
    denom = np.where(tot_alive > 0, tot_alive, 1).astype(np.float64)
    nan_mask = tot_alive == 0
    mean = tot_z / denom[:, None]
    second = tot_zz / denom[:, None, None]
    atan_mean = tot_atan / denom[:, None]
    mean[nan_mask] = np.nan
    second[nan_mask] = np.nan
    atan_mean[nan_mask] = np.nan
    var = second - np.einsum("ni,nj->nij", mean, mean)

    batch_phi = np.zeros(batches)
    batch_alive = np.zeros(batches, dtype=np.int64)
    for c in range(nchunks):
        j = owner[c]
        batch_phi[j] += np.trace(sum_zz[c, -1])
        batch_alive[j] += alive[c, -1]
    batch_phi = np.where(batch_alive > 0, batch_phi / np.maximum(batch_alive, 1),
                         np.nan)

    return EnsembleStats(grid=grid, mean=mean, second=second, var=var,
                         atan_mean=atan_mean, alive=tot_alive,
                         overflow_count=int(overflow.sum()),
                         failure_count=int(failed.sum()),
                         batches=batches, batch_size=samples,
                         batch_phi=batch_phi, batch_alive=batch_alive)


# ---------------------------------------------------------------------------
# Experiments behind the CLI tables
# ---------------------------------------------------------------------------

def exact_moment_curves(problem, grid):
    """Exact (mean, variance) curves on the grid; None without closed form."""
    if problem.exact_moments is None:
        return None
    d = problem.d
    mean = np.empty((grid.shape[0], d))
    var = np.empty((grid.shape[0], d, d))
    for n, t in enumerate(grid):
        m, s = problem.exact_moments(float(t) - problem.t0)
        mean[n] = m
        var[n] = s - np.outer(m, m)
    return mean, var


@dataclass
class ErrorTableResult:
    """Tables I-III analogue: errors vs M, rate fits and atan functionals."""

    problem: str
    grid: np.ndarray
    m_list: list
    labels: list                 # statistic labels (length L)
    scheme_errors: np.ndarray    # (L, len(m_list)) max-over-nodes errors, scheme
    sampler_errors: np.ndarray   # (L, len(m_list)) same for the exact sampler
    scheme_gamma: np.ndarray     # (L, 2) mean and std of the rate fit
    sampler_gamma: np.ndarray    # (L, 2)
    atan_rel: np.ndarray         # (d, len(m_list)) relative functional errors
    overflow: dict = field(default_factory=dict)


def run_error_table(problem, grid, m_list, seed, threads=None):
    """Scheme-vs-exact error statistics for each ensemble size in m_list."""
    exact = exact_moment_curves(problem, grid)
    if exact is None:
        raise ValueError(f"problem {problem.name!r} has no exact moments")
    exact_mean, exact_var = exact
    labels = moment_error_labels(problem.d)
    nolabels = len(labels)
    scheme_curves = []
    sampler_curves = []
    scheme_err = np.empty((nolabels, len(m_list)))
    sampler_err = np.empty((nolabels, len(m_list)))
    atan_rel = np.empty((problem.d, len(m_list)))
    overflow = {}
    for col, m in enumerate(m_list):
        sch = run_ensemble(problem, grid, "llweak", m,
                           derive_seed(seed, PURPOSE_LLWEAK, col), threads=threads)
        exa = run_ensemble(problem, grid, "exact", m,
                           derive_seed(seed, PURPOSE_EXACT, col), threads=threads)
        sc = moment_error_curves(sch.mean, sch.var, exact_mean, exact_var)
        ec = moment_error_curves(exa.mean, exa.var, exact_mean, exact_var)
        scheme_curves.append(sc)
        sampler_curves.append(ec)
        scheme_err[:, col] = sc.max(axis=1)
        sampler_err[:, col] = ec.max(axis=1)
        atan_rel[:, col] = arctan_errors(exa.atan_mean, sch.atan_mean)
        overflow[m] = (sch.overflow_count + sch.failure_count, exa.overflow_count)
    scheme_gamma = np.empty((nolabels, 2))
    sampler_gamma = np.empty((nolabels, 2))
    for li in range(nolabels):
        if len(m_list) >= 2:
            gm, gs, _ = fit_gamma(m_list, [c[li] for c in scheme_curves])
            scheme_gamma[li] = (gm, gs)
            gm, gs, _ = fit_gamma(m_list, [c[li] for c in sampler_curves])
            sampler_gamma[li] = (gm, gs)
        else:
            scheme_gamma[li] = (np.nan, np.nan)
            sampler_gamma[li] = (np.nan, np.nan)
    return ErrorTableResult(problem=problem.name, grid=grid, m_list=list(m_list),
                            labels=labels, scheme_errors=scheme_err,
                            sampler_errors=sampler_err, scheme_gamma=scheme_gamma,
                            sampler_gamma=sampler_gamma, atan_rel=atan_rel,
                            overflow=overflow)


def run_functional(problem, grid, scheme, samples, batches, seed, threads=None,
                   delta=None):
    """Batched terminal-functional error of one scheme on one grid."""
    if problem.exact_functional is None:
        raise ValueError(f"problem {problem.name!r} has no exact functional")
    exact = problem.exact_functional(float(grid[-1]) - problem.t0)
    stats = run_ensemble(problem, grid, scheme, samples, seed,
                         batches=batches, threads=threads)
    return functional_error(stats.batch_phi, exact, delta=delta,
                            overflow_count=stats.overflow_count + stats.failure_count,
                            batch_size=samples)


def run_convergence(problem, deltas, schemes, samples, batches, seed, threads=None):
    """Table IV analogue: per scheme and stepsize, the batched mean error.

    ``euler-romberg`` rows combine two independent Euler runs at delta and
    delta/2 by first-order extrapolation of the per-batch errors.
    """
    from .baselines import romberg_estimate
    from .sde_model import uniform_grid

    rows = []
    for di, delta in enumerate(deltas):
        grid = uniform_grid(problem.t0, problem.t_end, delta)
        for scheme in schemes:
            if scheme == "llweak":
                est = run_functional(problem, grid, "llweak", samples, batches,
                                     derive_seed(seed, PURPOSE_LLWEAK, 100 + di),
                                     threads=threads, delta=delta)
            elif scheme == "euler":
                est = run_functional(problem, grid, "euler", samples, batches,
                                     derive_seed(seed, PURPOSE_EULER, 100 + di),
                                     threads=threads, delta=delta)
            elif scheme == "euler-romberg":
                half = uniform_grid(problem.t0, problem.t_end, 0.5 * delta)
                coarse = run_functional(problem, grid, "euler", samples, batches,
                                        derive_seed(seed, PURPOSE_ROMBERG, 100 + di),
                                        threads=threads, delta=delta)
                fine = run_functional(problem, half, "euler", samples, batches,
                                      derive_seed(seed, PURPOSE_ROMBERG, 200 + di),
                                      threads=threads, delta=0.5 * delta)
                est = romberg_estimate(coarse, fine)
            else:
                raise ValueError(f"unknown scheme {scheme!r} for convergence")
            rows.append((scheme, float(delta), est))
    return rows
