"""Chunked ensemble drivers for the Monte Carlo layer.

Trajectories are split into contiguous index chunks; each chunk accumulates
its own per-node sums sequentially in trajectory order, chunks run in
parallel, and the reduction over chunks happens afterwards in chunk order.
Results are therefore bit-identical for any thread count.

Every trajectory owns the RNG stream equal to its global index; step n of a
d-draw-per-step scheme consumes counters n*d .. n*d+d-1.  A trajectory whose
state norm exceeds the overflow bound (or goes non-finite) stops contributing
from that node on and is counted in ``overflow``; a covariance factorization
failure counts in ``failed``.

Accumulated per node: sum of states, sum of state outer products, sum of
atan(1 + x_l^2) per component, and the count of alive trajectories.
"""

import math

import numpy as np

from ._backend import jit, prange
from .linalg import _psd_sqrt_kernel, expm
from .llweak_core import _build_augmented_kernel, _moments_from_exp
from .rng import gaussian, two_point

OVERFLOW_NORM = 1e12


@jit(cache=True)
def _accumulate(c, node, z, sum_z, sum_zz, sum_atan, alive):
    d = z.shape[0]
    for i in range(d):
        sum_z[c, node, i] += z[i]
        sum_atan[c, node, i] += math.atan(1.0 + z[i] * z[i])
        for j in range(d):
            sum_zz[c, node, i, j] += z[i] * z[j]
    alive[c, node] += 1


@jit(cache=True)
def _blew_up(z):
    nrm2 = 0.0
    for i in range(z.shape[0]):
        if not np.isfinite(z[i]):
            return True
        nrm2 += z[i] * z[i]
    return nrm2 > OVERFLOW_NORM * OVERFLOW_NORM


@jit(cache=True, parallel=True)
def ll_map_ensemble(phis, psis, gs, fs, cs, x0, nsteps, seed, starts, ends,
                    sum_z, sum_zz, sum_atan, alive, overflow, failed):
    """Scheme ensemble when the per-step moment maps are precomputed.

    phis (N,d,d), psis (N,d), gs (N,d*d,d*d), fs (N,d*d,d), cs (N,d*d) are the
    affine step maps; per trajectory-step this costs a few small mat-vecs plus
    one symmetric eigendecomposition for the covariance root.
    """
    d = x0.shape[0]
    dd = d * d
    for c in prange(starts.shape[0]):
        for traj in range(starts[c], ends[c]):
            z = x0.copy()
            _accumulate(c, 0, z, sum_z, sum_zz, sum_atan, alive)
            for n in range(nsteps):
                mu = phis[n] @ z + psis[n]
                vs = np.empty(dd)
                for j in range(d):
                    for i in range(d):
                        vs[j * d + i] = z[i] * z[j]
                vsig = gs[n] @ vs + fs[n] @ z + cs[n]
                cov = np.empty((d, d))
                for i in range(d):
                    for j in range(d):
                        cov[i, j] = (0.5 * (vsig[j * d + i] + vsig[i * d + j])
                                     - mu[i] * mu[j])
                root, _, ok = _psd_sqrt_kernel(cov)
                if not ok:
                    failed[c] += 1
                    break
                zn = mu.copy()
                base = n * d
                for j in range(d):
                    e = two_point(seed, traj, base + j)
                    for i in range(d):
                        zn[i] += root[i, j] * e
                z = zn
                if _blew_up(z):
                    overflow[c] += 1
                    break
                _accumulate(c, n + 1, z, sum_z, sum_zz, sum_atan, alive)


def make_ll_ensemble(drift, diffusion, jac_x, jac_t):
    """Driver for the general scheme: relinearize and exponentiate per step."""

    @jit(parallel=True)
    def run(x0, grid, seed, starts, ends,
            sum_z, sum_zz, sum_atan, alive, overflow, failed):
        d = x0.shape[0]
        nsteps = grid.shape[0] - 1
        for c in prange(starts.shape[0]):
            for traj in range(starts[c], ends[c]):
                z = x0.copy()
                _accumulate(c, 0, z, sum_z, sum_zz, sum_atan, alive)
                for n in range(nsteps):
                    t = grid[n]
                    h = grid[n + 1] - grid[n]
                    bmat = jac_x(t, z)
                    b1 = jac_t(t, z)
                    m1 = bmat.shape[0]
                    values = np.empty((m1, d))
                    values[0] = drift(t, z)
                    values[1:] = diffusion(t, z)
                    b0 = np.empty((m1, d))
                    for k in range(m1):
                        for i in range(d):
                            acc = values[k, i]
                            for j in range(d):
                                acc -= bmat[k, i, j] * z[j]
                            b0[k, i] = acc
                    bigm, u = _build_augmented_kernel(bmat, b0, b1, values, z)
                    ew = expm(bigm * h) @ u
                    mu, _, cov = _moments_from_exp(ew, z)
                    root, _, ok = _psd_sqrt_kernel(cov)
                    if not ok:
                        failed[c] += 1
                        break
                    zn = mu.copy()
                    base = n * d
                    for j in range(d):
                        e = two_point(seed, traj, base + j)
                        for i in range(d):
                            zn[i] += root[i, j] * e
                    z = zn
                    if _blew_up(z):
                        overflow[c] += 1
                        break
                    _accumulate(c, n + 1, z, sum_z, sum_zz, sum_atan, alive)

    return run


def make_euler_ensemble(drift, diffusion):
    """Driver for the weak Euler scheme with two-point increments."""

    @jit(parallel=True)
    def run(x0, grid, seed, starts, ends,
            sum_z, sum_zz, sum_atan, alive, overflow, failed):
        d = x0.shape[0]
        nsteps = grid.shape[0] - 1
        for c in prange(starts.shape[0]):
            for traj in range(starts[c], ends[c]):
                z = x0.copy()
                _accumulate(c, 0, z, sum_z, sum_zz, sum_atan, alive)
                for n in range(nsteps):
                    t = grid[n]
                    h = grid[n + 1] - grid[n]
                    sh = math.sqrt(h)
                    f = drift(t, z)
                    g = diffusion(t, z)
                    m = g.shape[0]
                    zn = np.empty(d)
                    for i in range(d):
                        zn[i] = z[i] + f[i] * h
                    base = n * m
                    for k in range(m):
                        e = two_point(seed, traj, base + k)
                        for i in range(d):
                            zn[i] += g[k, i] * sh * e
                    z = zn
                    if _blew_up(z):
                        overflow[c] += 1
                        break
                    _accumulate(c, n + 1, z, sum_z, sum_zz, sum_atan, alive)

    return run


def make_exact_ensemble(sampler, m):
    """Driver sampling a closed-form solution on cumulative Wiener sums."""

    @jit(parallel=True)
    def run(x0, grid, seed, starts, ends,
            sum_z, sum_zz, sum_atan, alive, overflow, failed):
        nsteps = grid.shape[0] - 1
        t0 = grid[0]
        for c in prange(starts.shape[0]):
            for traj in range(starts[c], ends[c]):
                _accumulate(c, 0, x0, sum_z, sum_zz, sum_atan, alive)
                w = np.zeros(m)
                for n in range(nsteps):
                    sh = math.sqrt(grid[n + 1] - grid[n])
                    base = n * m
                    for k in range(m):
                        w[k] += sh * gaussian(seed, traj, base + k)
                    x = sampler(w, grid[n + 1] - t0)
                    _accumulate(c, n + 1, x, sum_z, sum_zz, sum_atan, alive)

    return run
