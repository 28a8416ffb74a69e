"""Self-contained dense linear-algebra kernels.

Kronecker algebra, column-stacking vectorization, a Pade matrix exponential
with scaling and squaring, and a symmetric PSD square root.  Everything here
is a pure function on float64 arrays and is safe to call concurrently; the
hot entry points are numba kernels with a pure-numpy fallback (see
``llweak._backend``).

Conventions: ``vec`` stacks columns, so ``vec(A X B) == kron(B.T, A) @ vec(X)``
and the quadratic noise term ``B @ S @ B.T`` acting on a symmetric ``S``
vectorizes as ``kron(B, B)``.
"""

import numpy as np

from ._backend import jit


class NonPsdMatrixError(ValueError):
    """Raised when a matrix that must be PSD has a genuinely negative eigenvalue."""

    def __init__(self, min_eigenvalue, tolerance):
        self.min_eigenvalue = float(min_eigenvalue)
        self.tolerance = float(tolerance)
        super().__init__(
            f"matrix is not positive semidefinite: min eigenvalue "
            f"{self.min_eigenvalue:.6e} < -{self.tolerance:.6e}"
        )


@jit(cache=True)
def kron(a, b):
    """Kronecker product of 2-d arrays: block (i, j) of the result is a[i, j] * b."""
    p, r = a.shape
    q, s = b.shape
    if p * q * r * s > 2 ** 31:
        raise ValueError("kron: result dimensions overflow addressable size")
    out = np.empty((p * q, r * s))
    for i in range(p):
        for j in range(r):
            aij = a[i, j]
            for k in range(q):
                for l in range(s):
                    out[i * q + k, j * s + l] = aij * b[k, l]
    return out


@jit(cache=True)
def kron_sum(a, b):
    """Kronecker sum.

    For square inputs (p, p), (q, q): ``kron(a, I_q) + kron(I_p, b)``.
    For column vectors (d, 1), (d, 1): ``kron(x, I_d) + kron(I_d, y)``, a
    (d*d, d) matrix -- the shape the augmented-system blocks require.
    """
    if a.shape[0] == a.shape[1] and b.shape[0] == b.shape[1]:
        p = a.shape[0]
        q = b.shape[0]
        return kron(a, np.eye(q)) + kron(np.eye(p), b)
    if a.shape[1] == 1 and b.shape[1] == 1 and a.shape[0] == b.shape[0]:
        d = a.shape[0]
        return kron(a, np.eye(d)) + kron(np.eye(d), b)
    raise ValueError("kron_sum: arguments must be both square or both d x 1 vectors")


@jit(cache=True)
def vec(a):
    """Column-stacking vectorization: returns a 1-d array of length rows*cols."""
    return a.T.copy().reshape(a.shape[0] * a.shape[1])


@jit(cache=True)
def unvec(v, d):
    """Inverse of :func:`vec` for square matrices; requires len(v) == d*d."""
    if v.shape[0] != d * d:
        raise ValueError("unvec: vector length must equal d*d")
    out = np.empty((d, d))
    for j in range(d):
        for i in range(d):
            out[i, j] = v[j * d + i]
    return out


@jit(cache=True)
def _one_norm(a):
    n = a.shape[1]
    best = 0.0
    for j in range(n):
        s = 0.0
        for i in range(a.shape[0]):
            s += abs(a[i, j])
        if s > best:
            best = s
    return best


@jit(cache=True)
def expm(a):
    """Matrix exponential, degree-13 Pade approximant with scaling and squaring.

    Scaling brings the 1-norm below theta_13 = 5.3719...; the approximant is
    then squared back.  Relative accuracy is at rounding level for the norms
    exercised here (validated to 1e-11 Frobenius against a scaled Taylor
    oracle in the tests).
    """
    if a.shape[0] != a.shape[1]:
        raise ValueError("expm: matrix must be square")
    if not np.all(np.isfinite(a)):
        raise ValueError("expm: non-finite entries")
    a = np.ascontiguousarray(a)
    n = a.shape[0]
    theta13 = 5.371920351148152
    eta = _one_norm(a)
    if eta == 0.0:
        return np.eye(n)
    s = 0
    if eta > theta13:
        s = int(np.ceil(np.log2(eta / theta13)))
        a = a * 2.0 ** (-s)
    b0 = 64764752532480000.0
    b1 = 32382376266240000.0
    b2 = 7771770303897600.0
    b3 = 1187353796428800.0
    b4 = 129060195264000.0
    b5 = 10559470521600.0
    b6 = 670442572800.0
    b7 = 33522128640.0
    b8 = 1323241920.0
    b9 = 40840800.0
    b10 = 960960.0
    b11 = 16380.0
    b12 = 182.0
    b13 = 1.0
    ident = np.eye(n)
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a2 @ a4
    u = a @ (a6 @ (b13 * a6 + b11 * a4 + b9 * a2)
             + b7 * a6 + b5 * a4 + b3 * a2 + b1 * ident)
    v = (a6 @ (b12 * a6 + b10 * a4 + b8 * a2)
         + b6 * a6 + b4 * a4 + b2 * a2 + b0 * ident)
    r = np.ascontiguousarray(np.linalg.solve(v - u, v + u))
    for _ in range(s):
        r = r @ r
    return r


@jit(cache=True)
def _psd_sqrt_kernel(s):
    """Symmetric PSD square root via eigendecomposition.

    Returns ``(root, min_eig, ok)``.  Eigenvalues in [-tol, 0) with
    tol = 1e-8 * max(1, trace) are clamped to zero; anything below -tol sets
    ok to False (non-PSD input, the caller turns this into a failure).
    """
    n = s.shape[0]
    tr = 0.0
    for i in range(n):
        tr += s[i, i]
    tol = 1e-8 * max(1.0, tr)
    w, q = np.linalg.eigh(s)
    min_eig = w[0]
    ok = min_eig >= -tol
    for i in range(n):
        if w[i] < 0.0:
            w[i] = 0.0
    root = (q * np.sqrt(w)) @ q.T
    root = 0.5 * (root + root.T)
    return root, min_eig, ok


def psd_sqrt(s):
    """Symmetric PSD square root R of a symmetric matrix, with R @ R.T == s.

    Small negative eigenvalues (within 1e-8 * max(1, trace)) are clamped to
    zero; a genuinely negative eigenvalue raises :class:`NonPsdMatrixError`.
    """
    s = np.ascontiguousarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("psd_sqrt: matrix must be square")
    root, min_eig, ok = _psd_sqrt_kernel(s)
    if not ok:
        raise NonPsdMatrixError(min_eig, 1e-8 * max(1.0, float(np.trace(s))))
    return root
