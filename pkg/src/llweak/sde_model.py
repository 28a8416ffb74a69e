"""Problem definitions and per-step linearization.

An :class:`SdeProblem` bundles the coefficient functions of

    dX = f(t, X) dt + sum_k g_k(t, X) dW_k,        X in R^d, k = 1..m,

together with optional closed-form ground truth.  Index 0 always denotes the
drift (f plays the role of a zeroth diffusion against dW_0 = dt), so Jacobian
stacks have m+1 slabs with the drift first.

Coefficient functions must be re-entrant and, when the numba backend is
active, numba-compiled so the ensemble drivers can call them from inside
kernels.  :func:`linearize` freezes the first-order Taylor expansion of every
coefficient at an anchor (tau, z): for each k,

    g_k(s, x)  ~=  B_k x + b0_k + b1_k (s - tau),

with B_k the spatial Jacobian, b0_k = g_k(tau, z) - B_k z and b1_k the time
derivative at the anchor.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._backend import jit

_FD_STEP = float(np.cbrt(np.finfo(np.float64).eps))


def make_fd_jacobians(drift, diffusion, d, m):
    """Central finite-difference Jacobians for problems without analytic ones.

    Steps are cbrt(machine eps) * max(1, |component|) per differentiated
    variable.  Returns ``(jac_x, jac_t)`` with the same stacked signatures as
    analytic Jacobians: slab 0 is the drift.  The wrappers are compiled only
    when the coefficient functions themselves are backend kernels; plain
    Python coefficients get plain Python wrappers.
    """
    if hasattr(drift, "py_func") and hasattr(diffusion, "py_func"):
        wrap = jit(cache=False)
    else:
        def wrap(fn):
            return fn

    @wrap
    def jac_x(t, x):
        d_ = x.shape[0]
        out = np.empty((m + 1, d_, d_))
        for j in range(d_):
            hj = _FD_STEP * max(1.0, abs(x[j]))
            xp = x.copy()
            xm = x.copy()
            xp[j] += hj
            xm[j] -= hj
            span = xp[j] - xm[j]
            fp = drift(t, xp)
            fm = drift(t, xm)
            gp = diffusion(t, xp)
            gm = diffusion(t, xm)
            for i in range(d_):
                out[0, i, j] = (fp[i] - fm[i]) / span
                for k in range(m):
                    out[k + 1, i, j] = (gp[k, i] - gm[k, i]) / span
        return out

    @wrap
    def jac_t(t, x):
        d_ = x.shape[0]
        out = np.empty((m + 1, d_))
        ht = _FD_STEP * max(1.0, abs(t))
        span = (t + ht) - (t - ht)
        fp = drift(t + ht, x)
        fm = drift(t - ht, x)
        gp = diffusion(t + ht, x)
        gm = diffusion(t - ht, x)
        for i in range(d_):
            out[0, i] = (fp[i] - fm[i]) / span
            for k in range(m):
                out[k + 1, i] = (gp[k, i] - gm[k, i]) / span
        return out

    return jac_x, jac_t


@dataclass
class SdeProblem:
    """Immutable-by-convention SDE description.

    drift(t, x) returns the d-vector f; diffusion(t, x) returns an (m, d)
    array whose row k-1 is g_k.  jac_x(t, x) -> (m+1, d, d) and
    jac_t(t, x) -> (m+1, d) stack the drift derivative first; when omitted
    they are filled with central finite differences.

    exact_moments(t) -> (mean, second_moment); exact_functional(t) -> E|X_t|^2;
    exact_sampler(w, t) -> X_t given the m Wiener values at t.  All optional.
    ``constant_linearization`` marks problems whose linearization does not
    depend on the anchor state (linear SDEs), enabling the cached step map.
    """

    name: str
    d: int
    m: int
    t0: float
    t_end: float
    x0: np.ndarray
    drift: Callable
    diffusion: Callable
    jac_x: Optional[Callable] = None
    jac_t: Optional[Callable] = None
    exact_moments: Optional[Callable] = None
    exact_functional: Optional[Callable] = None
    exact_sampler: Optional[Callable] = None
    constant_linearization: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.d < 1 or self.m < 1:
            raise ValueError("problem needs d >= 1 and m >= 1")
        if not self.t0 < self.t_end:
            raise ValueError("problem needs t0 < t_end")
        self.x0 = np.asarray(self.x0, dtype=np.float64).reshape(self.d)
        if self.jac_x is None or self.jac_t is None:
            fd_x, fd_t = make_fd_jacobians(self.drift, self.diffusion, self.d, self.m)
            if self.jac_x is None:
                self.jac_x = fd_x
            if self.jac_t is None:
                self.jac_t = fd_t


@dataclass
class LinearizationData:
    """Frozen per-step linear SDE coefficients, drift stored at index 0.

    ``values[k] == B[k] @ z + b0[k]`` holds by construction at the anchor;
    downstream code uses the exact coefficient values where the sum appears
    (it is sharper than re-adding the two rounded parts).
    """

    B: np.ndarray      # (m+1, d, d)
    b0: np.ndarray     # (m+1, d)
    b1: np.ndarray     # (m+1, d)
    values: np.ndarray  # (m+1, d) coefficient values at the anchor
    tau: float
    z: np.ndarray      # (d,)

    @property
    def d(self):
        return self.B.shape[1]

    @property
    def m(self):
        return self.B.shape[0] - 1


def linearize(problem, tau, z):
    """First-order Taylor data of all coefficients at the anchor (tau, z)."""
    z = np.asarray(z, dtype=np.float64).reshape(problem.d)
    if not np.all(np.isfinite(z)) or not math.isfinite(tau):
        raise ValueError("linearize: non-finite anchor")
    B = np.asarray(problem.jac_x(tau, z), dtype=np.float64)
    b1 = np.asarray(problem.jac_t(tau, z), dtype=np.float64)
    values = np.empty((problem.m + 1, problem.d))
    values[0] = problem.drift(tau, z)
    values[1:] = problem.diffusion(tau, z)
    for arr in (B, b1, values):
        if not np.all(np.isfinite(arr)):
            raise ValueError("linearize: coefficient evaluation is non-finite")
    b0 = values - B @ z
    return LinearizationData(B=B, b0=b0, b1=b1, values=values, tau=float(tau), z=z.copy())


def uniform_grid(t0, t_end, delta):
    """Uniform time grid from t0 to t_end with step delta.

    delta must divide the span to within 1e-9 relative; endpoints are exact.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    span = t_end - t0
    n = int(round(span / delta))
    if n < 1 or abs(n * delta - span) > 1e-9 * max(1.0, abs(span)):
        raise ValueError(f"delta {delta} does not divide [{t0}, {t_end}]")
    return np.linspace(t0, t_end, n + 1)


def check_grid(grid, t0=None):
    """Validate a simulation grid: 1-d, strictly increasing, anchored at t0."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.shape[0] < 2:
        raise ValueError("grid must be a 1-d array with at least two nodes")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if t0 is not None and abs(grid[0] - t0) > 1e-12 * max(1.0, abs(t0)):
        raise ValueError("grid must start at the problem's t0")
    return grid
