"""Weak order-1 local linearization scheme.

One integration step freezes the linearization at (tau_n, z_n), computes the
conditional mean mu and second moment sigma of the resulting linear SDE at
tau_n+1, and draws

    z_{n+1} = mu + sqrt(sigma - mu mu^T) eta,      eta in {-1, +1}^d,

which matches the linear model's first two conditional moments exactly.

The moments come from a single exponential of an augmented matrix of order
d^2 + 2d + 7 (``build_augmented`` / ``step_moments_expm``).  An independent
classical RK4 integration of the coupled moment ODEs (``step_moments_ode``)
serves as the defining oracle for the Kronecker block placement: with
column-stacking vec, the quadratic noise block is kron(B_k, B_k), which is
what reproduces vec(B_k sigma B_k^T) on symmetric sigma.

For problems whose linearization does not depend on the anchor state (linear
SDEs) the map z -> (mu, vec sigma) is exactly affine in (z, vec zz^T); it is
probed once per step from the exponential path (:func:`build_step_map`) and
then reused for every trajectory, and it powers the sampling-free expectation
propagation of :func:`moment_propagate`.
"""

from dataclasses import dataclass

import numpy as np

from ._backend import jit
from .linalg import _psd_sqrt_kernel, expm, kron, kron_sum, unvec, vec
from .sde_model import LinearizationData, check_grid, linearize


class StepFailure(RuntimeError):
    """A step's covariance was not PSD within tolerance; the trajectory aborts."""

    def __init__(self, step_index, min_eigenvalue):
        self.step_index = int(step_index)
        self.min_eigenvalue = float(min_eigenvalue)
        super().__init__(
            f"covariance factorization failed at step {self.step_index}: "
            f"min eigenvalue {self.min_eigenvalue:.6e}"
        )


class StateDependentLinearization(ValueError):
    """Raised when a state-independent linearization is required but absent."""


def augmented_dim(d):
    return d * d + 2 * d + 7


@jit(cache=True)
def _build_augmented_kernel(B, b0, b1, values, z):
    """Assemble the augmented generator M and initial vector u.

    Block sizes along rows/columns: d^2, d+2, d+2, 1, 1, 1.  The top block row
    carries the vectorized second-moment dynamics; the two middle blocks
    replicate the mean dynamics (the second one shifted so its product with
    time lands in the first); the scalar tail generates 1, s, s^2.
    """
    m1 = B.shape[0]
    d = B.shape[1]
    m = m1 - 1
    dd = d * d
    dim = dd + 2 * d + 7
    o2 = dd
    o3 = dd + d + 2
    o4 = dd + 2 * d + 4
    o5 = o4 + 1
    o6 = o5 + 1

    bigm = np.zeros((dim, dim))

    # second-moment generator: B0 (+) B0 + sum_k Bk (x) Bk
    amat = kron_sum(np.ascontiguousarray(B[0]), np.ascontiguousarray(B[0]))
    for k in range(1, m + 1):
        bk = np.ascontiguousarray(B[k])
        amat += kron(bk, bk)
    bigm[:dd, :dd] = amat

    # beta blocks built from the affine parts of the diffusions
    beta1 = np.zeros((d, d))
    beta2 = np.zeros((d, d))
    beta3 = np.zeros((d, d))
    for k in range(1, m + 1):
        for i in range(d):
            for j in range(d):
                beta1[i, j] += b0[k, i] * b0[k, j]
                beta2[i, j] += b0[k, i] * b1[k, j] + b1[k, i] * b0[k, j]
                beta3[i, j] += b1[k, i] * b1[k, j]
    b00 = b0[0].copy().reshape(d, 1)
    b01 = b1[0].copy().reshape(d, 1)
    beta4 = kron_sum(b00, b00)
    beta5 = kron_sum(b01, b01)
    for k in range(1, m + 1):
        bk = np.ascontiguousarray(B[k])
        bk0 = b0[k].copy().reshape(d, 1)
        bk1 = b1[k].copy().reshape(d, 1)
        beta4 += kron(bk0, bk) + kron(bk, bk0)
        beta5 += kron(bk1, bk) + kron(bk, bk1)

    bigm[:dd, o2:o2 + d] = beta5
    bigm[:dd, o3:o3 + d] = beta4
    bigm[:dd, o4] = vec(beta3)
    bigm[:dd, o5] = vec(beta2) + beta5 @ z
    bigm[:dd, o6] = vec(beta1) + beta4 @ z

    # mean-dynamics block C, duplicated on the two middle diagonal slots
    cmat = np.zeros((d + 2, d + 2))
    cmat[:d, :d] = B[0]
    cmat[:d, d] = b1[0]
    cmat[:d, d + 1] = values[0]          # exact f(tau, z) = B0 z + b0[0]
    cmat[d, d + 1] = 1.0
    bigm[o2:o3, o2:o3] = cmat
    bigm[o3:o4, o3:o4] = cmat
    for i in range(d + 2):
        bigm[o2 + i, o3 + i] = 1.0

    bigm[o4, o5] = 2.0
    bigm[o5, o6] = 1.0

    u = np.zeros(dim)
    u[:dd] = vec(np.outer(z, z))
    u[o4 - 1] = 1.0
    u[dim - 1] = 1.0
    return bigm, u


@jit(cache=True)
def _moments_from_exp(ew, z):
    """Extract (mu, sigma, cov) from w = expm(M h) @ u; sigma/cov symmetrized."""
    d = z.shape[0]
    dd = d * d
    o3 = dd + d + 2
    mu = z + ew[o3:o3 + d]
    sigma = unvec(ew[:dd].copy(), d)
    sigma = 0.5 * (sigma + sigma.T)
    cov = sigma - np.outer(mu, mu)
    cov = 0.5 * (cov + cov.T)
    return mu, sigma, cov


@dataclass
class AugmentedSystem:
    """Augmented generator M, initial vector u, and the two selectors."""

    M: np.ndarray
    u: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    d: int
    m: int


@dataclass
class StepMoments:
    """Conditional moments of one step and the covariance square root."""

    mu: np.ndarray
    sigma: np.ndarray
    cov: np.ndarray
    sqrt_cov: np.ndarray


def build_augmented(lin: LinearizationData, z) -> AugmentedSystem:
    """Augmented system for one step anchored at z (order d^2 + 2d + 7)."""
    z = np.asarray(z, dtype=np.float64).reshape(lin.d)
    bigm, u = _build_augmented_kernel(lin.B, lin.b0, lin.b1, lin.values, z)
    d = lin.d
    dd = d * d
    dim = augmented_dim(d)
    l1 = np.zeros((dd, dim))
    l1[:, :dd] = np.eye(dd)
    l2 = np.zeros((d, dim))
    l2[:, dd + d + 2:dd + 2 * d + 2] = np.eye(d)
    return AugmentedSystem(M=bigm, u=u, L1=l1, L2=l2, d=d, m=lin.m)


def _sqrt_or_fail(cov, step_index=0):
    root, min_eig, ok = _psd_sqrt_kernel(cov)
    if not ok:
        raise StepFailure(step_index, min_eig)
    return root


def step_moments_expm(aug: AugmentedSystem, z, h, step_index=0) -> StepMoments:
    """Step moments via one matrix exponential: mu = z + L2 e^{Mh} u etc."""
    if h < 0:
        raise ValueError("step size must be nonnegative")
    z = np.asarray(z, dtype=np.float64).reshape(aug.d)
    ew = expm(aug.M * float(h)) @ aug.u
    mu, sigma, cov = _moments_from_exp(ew, z)
    return StepMoments(mu=mu, sigma=sigma, cov=cov,
                       sqrt_cov=_sqrt_or_fail(cov, step_index))


def _moment_rhs(lin, s, mu, sigma):
    """Right-hand sides of the coupled moment ODEs at local time s in [0, h]."""
    b = lin.b0 + lin.b1 * s
    b0 = b[0]
    dmu = lin.B[0] @ mu + b0
    dsig = sigma @ lin.B[0].T + lin.B[0] @ sigma
    dsig += np.outer(mu, b0) + np.outer(b0, mu)
    for k in range(1, lin.m + 1):
        bk = lin.B[k]
        bkv = b[k]
        bmu = bk @ mu
        dsig += bk @ sigma @ bk.T
        dsig += np.outer(bmu, bkv) + np.outer(bkv, bmu)
        dsig += np.outer(bkv, bkv)
    return dmu, dsig


def step_moments_ode(lin: LinearizationData, z, h, substeps=64) -> StepMoments:
    """Independent oracle: classical RK4 on the moment ODEs, no Kronecker, no expm."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    z = np.asarray(z, dtype=np.float64).reshape(lin.d)
    mu = z.copy()
    sigma = np.outer(z, z)
    dt = float(h) / substeps
    s = 0.0
    for _ in range(substeps):
        k1m, k1s = _moment_rhs(lin, s, mu, sigma)
        k2m, k2s = _moment_rhs(lin, s + 0.5 * dt, mu + 0.5 * dt * k1m, sigma + 0.5 * dt * k1s)
        k3m, k3s = _moment_rhs(lin, s + 0.5 * dt, mu + 0.5 * dt * k2m, sigma + 0.5 * dt * k2s)
        k4m, k4s = _moment_rhs(lin, s + dt, mu + dt * k3m, sigma + dt * k3s)
        mu = mu + (dt / 6.0) * (k1m + 2.0 * k2m + 2.0 * k3m + k4m)
        sigma = sigma + (dt / 6.0) * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)
        s += dt
    sigma = 0.5 * (sigma + sigma.T)
    cov = sigma - np.outer(mu, mu)
    cov = 0.5 * (cov + cov.T)
    return StepMoments(mu=mu, sigma=sigma, cov=cov, sqrt_cov=_sqrt_or_fail(cov))


def ll_step(sm: StepMoments, eta):
    """One stochastic update from precomputed step moments."""
    eta = np.asarray(eta, dtype=np.float64)
    return sm.mu + sm.sqrt_cov @ eta


def integrate_path(problem, z0, grid, noise):
    """Iterate linearize -> augmented expm -> update over the grid.

    ``noise`` has shape (len(grid) - 1, d) with entries +-1.  Returns all
    states, shape (len(grid), d).  A covariance failure aborts with
    :class:`StepFailure` carrying the step index and offending eigenvalue.
    """
    grid = check_grid(grid)
    z0 = np.asarray(z0, dtype=np.float64).reshape(problem.d)
    noise = np.asarray(noise, dtype=np.float64)
    nsteps = grid.shape[0] - 1
    if noise.shape != (nsteps, problem.d):
        raise ValueError(f"noise must have shape ({nsteps}, {problem.d})")
    out = np.empty((nsteps + 1, problem.d))
    out[0] = z0
    z = z0
    for n in range(nsteps):
        lin = linearize(problem, grid[n], z)
        aug = build_augmented(lin, z)
        sm = step_moments_expm(aug, z, grid[n + 1] - grid[n], step_index=n)
        z = ll_step(sm, noise[n])
        if not np.all(np.isfinite(z)):
            raise StepFailure(n, float("nan"))
        out[n + 1] = z
    return out


# ---------------------------------------------------------------------------
# Affine per-step moment maps for state-independent linearizations
# ---------------------------------------------------------------------------

@dataclass
class StepMap:
    """Exact affine map of one step: mu = Phi z + psi, vec sigma = G vec(zz^T) + F z + c."""

    Phi: np.ndarray   # (d, d)
    psi: np.ndarray   # (d,)
    G: np.ndarray     # (d*d, d*d), action defined on symmetric arguments
    F: np.ndarray     # (d*d, d)
    c: np.ndarray     # (d*d,)


def _assert_state_independent(problem, tau, probes, rtol=1e-9):
    ref = linearize(problem, tau, probes[0])
    scale = max(1.0, float(np.max(np.abs(ref.B))), float(np.max(np.abs(ref.b0))))
    for z in probes[1:]:
        lin = linearize(problem, tau, z)
        if (np.max(np.abs(lin.B - ref.B)) > rtol * scale
                or np.max(np.abs(lin.b0 - ref.b0)) > rtol * scale
                or np.max(np.abs(lin.b1 - ref.b1)) > rtol * scale):
            raise StateDependentLinearization(
                f"problem {problem.name!r} has a state-dependent linearization "
                f"at t = {tau}; the affine step map does not exist"
            )
    return ref


def _probe_moments(problem, tau, z, h):
    lin = linearize(problem, tau, z)
    aug = build_augmented(lin, z)
    sm = step_moments_expm(aug, z, h)
    return sm.mu, vec(sm.sigma)


def build_step_map(problem, tau, h) -> StepMap:
    """Probe the expm path at a few anchors to recover the exact affine step map.

    Requires the linearization at time tau to be independent of the anchor
    state (verified on the probe anchors); raises
    :class:`StateDependentLinearization` otherwise.
    """
    d = problem.d
    probes = [np.zeros(d)]
    probes += [np.eye(d)[i] for i in range(d)]
    probes.append(0.25 * np.arange(1, d + 1) + 1.0)
    _assert_state_independent(problem, tau, probes)

    psi, c = _probe_moments(problem, tau, np.zeros(d), h)
    phi = np.empty((d, d))
    fmat = np.empty((d * d, d))
    gmat = np.empty((d * d, d * d))
    mu_e = []
    sig_e = []
    for i in range(d):
        mu, sig = _probe_moments(problem, tau, np.eye(d)[i], h)
        mu_e.append(mu)
        sig_e.append(sig)
        phi[:, i] = mu - psi
    for i in range(d):
        _, sig2 = _probe_moments(problem, tau, 2.0 * np.eye(d)[i], h)
        gdiag = 0.5 * (sig2 - 2.0 * sig_e[i] + c)
        gmat[:, i * d + i] = gdiag
        fmat[:, i] = sig_e[i] - c - gdiag
    for i in range(d):
        for j in range(i + 1, d):
            zij = np.eye(d)[i] + np.eye(d)[j]
            _, sigij = _probe_moments(problem, tau, zij, h)
            gsym = sigij - sig_e[i] - sig_e[j] + c
            gmat[:, j * d + i] = 0.5 * gsym
            gmat[:, i * d + j] = 0.5 * gsym
    return StepMap(Phi=phi, psi=psi, G=gmat, F=fmat, c=c)


def step_maps_for_grid(problem, grid):
    """One StepMap per grid interval; shared when steps are uniform and the
    linearization is time-invariant."""
    grid = check_grid(grid)
    steps = np.diff(grid)
    uniform = np.allclose(steps, steps[0], rtol=1e-12, atol=0.0)
    autonomous = False
    if uniform and len(grid) > 2:
        a = linearize(problem, grid[0], problem.x0)
        b = linearize(problem, grid[1], problem.x0)
        autonomous = (np.allclose(a.B, b.B, rtol=1e-12, atol=1e-14)
                      and np.allclose(a.b0, b.b0, rtol=1e-12, atol=1e-14)
                      and np.allclose(a.b1, b.b1, rtol=1e-12, atol=1e-14))
    if uniform and (autonomous or len(grid) == 2):
        one = build_step_map(problem, grid[0], steps[0])
        return [one] * (len(grid) - 1)
    return [build_step_map(problem, grid[n], steps[n]) for n in range(len(grid) - 1)]


def moment_propagate(problem, grid):
    """Expected mean and second moment of the scheme's iterates, sampling-free.

    Chains the exact affine per-step maps: E z_{n+1} = Phi E z_n + psi and
    E vec(z z^T) advances by (G, F, c), valid because eta has mean zero and
    unit covariance.  Only available for state-independent linearizations.
    """
    grid = check_grid(grid, problem.t0)
    maps = step_maps_for_grid(problem, grid)
    d = problem.d
    n_nodes = len(grid)
    means = np.empty((n_nodes, d))
    seconds = np.empty((n_nodes, d, d))
    mean = problem.x0.copy()
    second = np.outer(mean, mean)
    means[0] = mean
    seconds[0] = second
    for n, mp in enumerate(maps):
        vs = mp.G @ vec(second) + mp.F @ mean + mp.c
        mean = mp.Phi @ mean + mp.psi
        second = unvec(vs, d)
        second = 0.5 * (second + second.T)
        means[n + 1] = mean
        seconds[n + 1] = second
    return means, seconds
