"""Kernel backend selection.

Hot kernels throughout the package are written in numba-compatible numpy
style and decorated with :func:`jit`.  The backend is chosen once, at import
time, from the environment variable ``LLWEAK_BACKEND``:

* ``auto`` (default): use numba when it is importable, else pure numpy;
* ``numba``: require numba, raise if it cannot be imported;
* ``numpy``: run the same source undecorated (pure-numpy fallback).

Under the numpy backend :func:`jit` is a no-op decorator, so every kernel is
the plain Python/numpy function itself.  ``fn.py_func`` is populated in both
modes so tests can always reach the undecorated source.
"""

import os

_CHOICE = os.environ.get("LLWEAK_BACKEND", "auto").strip().lower()
if _CHOICE not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"LLWEAK_BACKEND must be 'auto', 'numba' or 'numpy', got {_CHOICE!r}"
    )

NUMBA_ENABLED = False
if _CHOICE in ("auto", "numba"):
    try:
        import numba

        NUMBA_ENABLED = True
    except ImportError:
        if _CHOICE == "numba":
            raise
        numba = None
else:
    numba = None

BACKEND = "numba" if NUMBA_ENABLED else "numpy"


def jit(**options):
    """Return the kernel decorator for the active backend.

    Accepts numba ``njit`` keyword options (``cache``, ``parallel``, ...);
    they are ignored under the numpy backend.
    """
    if NUMBA_ENABLED:
        return numba.njit(**options)

    def passthrough(fn):
        fn.py_func = fn
        return fn

    return passthrough


def prange(*args):
    """range() stand-in used inside parallel kernels."""
    return range(*args)


if NUMBA_ENABLED:
    prange = numba.prange


def max_threads():
    """Upper bound on worker threads the active backend can use."""
    if NUMBA_ENABLED:
        return numba.config.NUMBA_NUM_THREADS
    return 1


def set_threads(n):
    """Set the worker-thread count, clamped to the backend's limit.

    Returns the effective count.  The numpy backend is single-threaded and
    always returns 1; thread count never affects results either way.
    """
    n = max(1, int(n))
    if NUMBA_ENABLED:
        n = min(n, numba.config.NUMBA_NUM_THREADS)
        numba.set_num_threads(n)
        return n
    return 1
