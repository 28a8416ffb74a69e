"""Shared fixtures and independent oracles for the test suite."""

import numpy as np
import pytest

from llweak.sde_model import SdeProblem


def taylor_expm(a, terms=60):
    """Scaled Taylor-series matrix exponential with compensated summation.

    Independent of the package's Pade implementation: scale by 2**-k until
    the Frobenius norm is below 0.5, sum the series with Kahan compensation,
    then square k times.
    """
    a = np.asarray(a, dtype=np.float64)
    k = 0
    while np.linalg.norm(a) >= 0.5:
        a = a / 2.0
        k += 1
    n = a.shape[0]
    total = np.eye(n)
    comp = np.zeros_like(total)
    term = np.eye(n)
    for i in range(1, terms + 1):
        term = term @ a / i
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
    for _ in range(k):
        total = total @ total
    return total


def random_orthogonal(n, rng):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def make_linear_problem(bmats, c0, c1, x0=None, t_end=1.0, name="linear"):
    """Linear test problem g_k(t, x) = B_k x + c0_k + c1_k t with analytic data.

    Coefficients are plain Python callables (fine for the library-level paths;
    the ensemble drivers are not used on these).
    """
    bmats = np.asarray(bmats, dtype=np.float64)
    c0 = np.asarray(c0, dtype=np.float64)
    c1 = np.asarray(c1, dtype=np.float64)
    m1, d, _ = bmats.shape
    if x0 is None:
        x0 = np.zeros(d)
    return SdeProblem(
        name=name, d=d, m=m1 - 1, t0=0.0, t_end=t_end, x0=x0,
        drift=lambda t, x: bmats[0] @ x + c0[0] + c1[0] * t,
        diffusion=lambda t, x: bmats[1:] @ x + c0[1:] + c1[1:] * t,
        jac_x=lambda t, x: bmats.copy(),
        jac_t=lambda t, x: c1.copy(),
        constant_linearization=True,
    )


def random_linear_problem(rng, d=None, m=None, with_offset=True):
    d = int(rng.integers(1, 4)) if d is None else d
    m = int(rng.integers(1, 3)) if m is None else m
    bmats = rng.uniform(-1.0, 1.0, (m + 1, d, d))
    if with_offset:
        c0 = rng.uniform(-1.0, 1.0, (m + 1, d))
        c1 = rng.uniform(-1.0, 1.0, (m + 1, d))
    else:
        c0 = np.zeros((m + 1, d))
        c1 = np.zeros((m + 1, d))
    return make_linear_problem(bmats, c0, c1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
