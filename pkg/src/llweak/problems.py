"""Bundled benchmark problems with closed-form ground truth.

Registry names: ``example1`` (bilinear oscillatory system, two multiplicative
noises, exact solution and exact first/second moments), ``example2``
(nonautonomous trigonometric diffusion with E|X_t|^2 known in closed form),
``gbm`` (scalar linear test equation) and ``scalar-stability`` (mean-square
stable scalar case a = -2, b = 1).
"""

import math

import numpy as np

from ._backend import jit
from .linalg import expm, unvec, vec
from .sde_model import SdeProblem

# ---------------------------------------------------------------------------
# example1: dX = alpha J X dt + rho1 J X dW1 + rho2 X dW2,  J = [[0,1],[-1,0]]
# ---------------------------------------------------------------------------

EX1_ALPHA = 10.0
EX1_RHO1 = 0.1
EX1_RHO2 = 2.0 * EX1_RHO1
EX1_X0 = (1.0, 2.0)
EX1_T_END = 12.5625


@jit(cache=True)
def _ex1_drift(t, x):
    return EX1_ALPHA * np.array([x[1], -x[0]])


@jit(cache=True)
def _ex1_diffusion(t, x):
    out = np.empty((2, 2))
    out[0, 0] = EX1_RHO1 * x[1]
    out[0, 1] = -EX1_RHO1 * x[0]
    out[1, 0] = EX1_RHO2 * x[0]
    out[1, 1] = EX1_RHO2 * x[1]
    return out


@jit(cache=True)
def _ex1_jac_x(t, x):
    out = np.zeros((3, 2, 2))
    out[0, 0, 1] = EX1_ALPHA
    out[0, 1, 0] = -EX1_ALPHA
    out[1, 0, 1] = EX1_RHO1
    out[1, 1, 0] = -EX1_RHO1
    out[2, 0, 0] = EX1_RHO2
    out[2, 1, 1] = EX1_RHO2
    return out


@jit(cache=True)
def _ex1_jac_t(t, x):
    return np.zeros((3, 2))


@jit(cache=True)
def example1_exact_sample(w1, w2, t):
    """State at time t given the two Wiener values, from the closed form.

    The generator matrices commute (all are a*I + b*J), so the solution is a
    scalar exponential times a rotation:
    c = (rho1^2 - rho2^2) t / 2 + rho2 w2,  theta = alpha t + rho1 w1.
    """
    c = 0.5 * (EX1_RHO1 ** 2 - EX1_RHO2 ** 2) * t + EX1_RHO2 * w2
    theta = EX1_ALPHA * t + EX1_RHO1 * w1
    scale = math.exp(c)
    ct = math.cos(theta)
    st = math.sin(theta)
    x1, x2 = EX1_X0
    return np.array([scale * (ct * x1 + st * x2), scale * (-st * x1 + ct * x2)])


@jit(cache=True)
def _ex1_sampler(w, t):
    return example1_exact_sample(w[0], w[1], t)


def _ex1_moment_system():
    """The 8x8 generator of (second moment, const, mean-offset) for example1.

    Block layout: vec of the second moment (4), a constant scalar, then the
    3-vector whose first two entries carry the mean offset m_t - X0.
    """
    a, r1, r2 = EX1_ALPHA, EX1_RHO1, EX1_RHO2
    A = np.array([
        [r2 ** 2, a, a, r1 ** 2],
        [-a, r2 ** 2, -r1 ** 2, a],
        [-a, -r1 ** 2, r2 ** 2, a],
        [r1 ** 2, -a, -a, r2 ** 2],
    ])
    x1, x2 = EX1_X0
    C = np.array([
        [0.0, a, a * x2],
        [-a, 0.0, -a * x1],
        [0.0, 0.0, 0.0],
    ])
    H = np.zeros((8, 8))
    H[:4, :4] = A
    H[5:, 5:] = C
    x0 = np.array(EX1_X0)
    u0 = np.zeros(8)
    u0[:4] = vec(np.outer(x0, x0))
    u0[4] = 1.0
    u0[7] = 1.0
    L1 = np.zeros((4, 8))
    L1[:, :4] = np.eye(4)
    L2 = np.zeros((2, 8))
    L2[:, 5:7] = np.eye(2)
    return H, u0, L1, L2


def example1_exact_moments(t):
    """Exact (mean, variance) of the example1 state at time t."""
    H, u0, L1, L2 = _ex1_moment_system()
    w = expm(H * float(t)) @ u0
    mean = np.array(EX1_X0) + L2 @ w
    second = unvec(L1 @ w, 2)
    variance = second - np.outer(mean, mean)
    return mean, 0.5 * (variance + variance.T)


def _ex1_mean_second(t):
    mean, variance = example1_exact_moments(t)
    return mean, variance + np.outer(mean, mean)


def make_example1():
    return SdeProblem(
        name="example1",
        d=2,
        m=2,
        t0=0.0,
        t_end=EX1_T_END,
        x0=np.array(EX1_X0),
        drift=_ex1_drift,
        diffusion=_ex1_diffusion,
        jac_x=_ex1_jac_x,
        jac_t=_ex1_jac_t,
        exact_moments=_ex1_mean_second,
        exact_functional=lambda t: 5.0 * math.exp((EX1_RHO1 ** 2 + EX1_RHO2 ** 2) * t),
        exact_sampler=_ex1_sampler,
        constant_linearization=True,
    )


# ---------------------------------------------------------------------------
# example2: rotation drift with time-damped trigonometric diffusion
# ---------------------------------------------------------------------------

EX2_X0 = (1.0, 1.0)
EX2_T_END = 10.0


@jit(cache=True)
def _ex2_drift(t, x):
    return np.array([-x[1], x[0]])


@jit(cache=True)
def _ex2_diffusion(t, x):
    w = 1.0 / math.sqrt(1.0 + t)
    s = math.sin(x[0] + x[1])
    c = math.cos(x[0] + x[1])
    out = np.empty((2, 2))
    out[0, 0] = 0.0
    out[0, 1] = s * w
    out[1, 0] = c * w
    out[1, 1] = 0.0
    return out


@jit(cache=True)
def _ex2_jac_x(t, x):
    w = 1.0 / math.sqrt(1.0 + t)
    s = math.sin(x[0] + x[1])
    c = math.cos(x[0] + x[1])
    out = np.zeros((3, 2, 2))
    out[0, 0, 1] = -1.0
    out[0, 1, 0] = 1.0
    out[1, 1, 0] = c * w
    out[1, 1, 1] = c * w
    out[2, 0, 0] = -s * w
    out[2, 0, 1] = -s * w
    return out


@jit(cache=True)
def _ex2_jac_t(t, x):
    dw = -0.5 / (1.0 + t) ** 1.5
    s = math.sin(x[0] + x[1])
    c = math.cos(x[0] + x[1])
    out = np.zeros((3, 2))
    out[1, 1] = s * dw
    out[2, 0] = c * dw
    return out


def example2_exact_functional(t):
    """E|X_t|^2 for example2: |x0|^2 + log(1 + t)."""
    return float(np.dot(EX2_X0, EX2_X0)) + math.log1p(t)


def make_example2():
    return SdeProblem(
        name="example2",
        d=2,
        m=2,
        t0=0.0,
        t_end=EX2_T_END,
        x0=np.array(EX2_X0),
        drift=_ex2_drift,
        diffusion=_ex2_diffusion,
        jac_x=_ex2_jac_x,
        jac_t=_ex2_jac_t,
        exact_functional=example2_exact_functional,
        constant_linearization=False,
    )


# ---------------------------------------------------------------------------
# scalar linear test equations: dX = a X dt + b X dW
# ---------------------------------------------------------------------------

def make_gbm(a=0.5, b=0.3, x0=1.0, t_end=1.0, name="gbm"):
    """Scalar linear SDE with closed-form moments and exact sampler."""
    a = float(a)
    b = float(b)
    x0 = float(x0)

    @jit(cache=False)
    def drift(t, x):
        return a * x

    @jit(cache=False)
    def diffusion(t, x):
        out = np.empty((1, 1))
        out[0, 0] = b * x[0]
        return out

    @jit(cache=False)
    def jac_x(t, x):
        out = np.empty((2, 1, 1))
        out[0, 0, 0] = a
        out[1, 0, 0] = b
        return out

    @jit(cache=False)
    def jac_t(t, x):
        return np.zeros((2, 1))

    @jit(cache=False)
    def sampler(w, t):
        return np.array([x0 * math.exp((a - 0.5 * b * b) * t + b * w[0])])

    def exact_moments(t):
        mean = np.array([x0 * math.exp(a * t)])
        second = np.array([[x0 * x0 * math.exp((2.0 * a + b * b) * t)]])
        return mean, second

    return SdeProblem(
        name=name,
        d=1,
        m=1,
        t0=0.0,
        t_end=float(t_end),
        x0=np.array([x0]),
        drift=drift,
        diffusion=diffusion,
        jac_x=jac_x,
        jac_t=jac_t,
        exact_moments=exact_moments,
        exact_functional=lambda t: x0 * x0 * math.exp((2.0 * a + b * b) * t),
        exact_sampler=sampler,
        constant_linearization=True,
    )


def make_scalar_stability():
    return make_gbm(a=-2.0, b=1.0, x0=1.0, t_end=20.0, name="scalar-stability")


REGISTRY = {
    "example1": make_example1,
    "example2": make_example2,
    "gbm": make_gbm,
    "scalar-stability": make_scalar_stability,
}


def get_problem(name):
    """Instantiate a bundled problem by registry name."""
    try:
        factory = REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(REGISTRY))
        raise KeyError(f"unknown problem {name!r}; known problems: {known}") from None
    return factory()
