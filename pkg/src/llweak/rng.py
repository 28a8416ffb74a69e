"""Counter-based random variates for reproducible parallel Monte Carlo.

Every draw is a pure function of ``(seed, stream, counter)``: trajectories own
a stream (their global index), each step consumes a fixed block of counters.
Simulations are therefore bit-reproducible for any chunking or thread count,
and batches compose independently of execution order.

The 64-bit mixer is a three-round splitmix64-style finalizer hash.  It has two
definitions with identical output: uint64 arithmetic for the numba backend and
masked Python integers for the numpy backend (numpy 2.x warns on scalar uint64
overflow, plain ints do not).  The parity is pinned by golden values in tests.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._backend import NUMBA_ENABLED, jit

_MASK64 = 0xFFFFFFFFFFFFFFFF
_C1 = 0x9E3779B97F4A7C15
_C2 = 0xD1B54A32D192ED03
_C3 = 0x8CB92BA72F3D8DD7
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def _counter_hash_ints(seed, stream, counter):
    """Mask-and-shift reference mixer on unbounded Python ints."""
    z = (seed + _C1) & _MASK64
    for salt in ((stream + _C2) & _MASK64, (counter + _C3) & _MASK64):
        z ^= salt
        z = ((z ^ (z >> 30)) * _M1) & _MASK64
        z = ((z ^ (z >> 27)) * _M2) & _MASK64
        z ^= z >> 31
    return z


if NUMBA_ENABLED:
    _U64_C1 = np.uint64(_C1)
    _U64_C2 = np.uint64(_C2)
    _U64_C3 = np.uint64(_C3)
    _U64_M1 = np.uint64(_M1)
    _U64_M2 = np.uint64(_M2)
    _U30 = np.uint64(30)
    _U27 = np.uint64(27)
    _U31 = np.uint64(31)
    _U11 = np.uint64(11)

    @jit(cache=True)
    def _hash_u01(seed, stream, counter):
        z = np.uint64(seed) + _U64_C1
        for salt in (np.uint64(stream) + _U64_C2, np.uint64(counter) + _U64_C3):
            z ^= salt
            z = (z ^ (z >> _U30)) * _U64_M1
            z = (z ^ (z >> _U27)) * _U64_M2
            z ^= z >> _U31
        return (float(z >> _U11) + 0.5) * 1.1102230246251565e-16

else:

    def _hash_u01(seed, stream, counter):
        z = _counter_hash_ints(seed, stream, counter)
        return ((z >> 11) + 0.5) * 1.1102230246251565e-16

    _hash_u01.py_func = _hash_u01


@jit(cache=True)
def uniform01(seed, stream, counter):
    """Uniform draw in the open interval (0, 1)."""
    return _hash_u01(seed, stream, counter)


@jit(cache=True)
def two_point(seed, stream, counter):
    """Two-point variate: +1.0 or -1.0, each with probability 1/2."""
    if _hash_u01(seed, stream, counter) < 0.5:
        return -1.0
    return 1.0


@jit(cache=True)
def norminv(p):
    """Inverse standard-normal CDF (Wichura's AS 241, double precision)."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
                    + 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r
                  + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r
                + 1.3314166789178437745e2) * r + 3.3871328727963666080e0)
        den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
                    + 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r
                  + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r
                + 4.2313330701600911252e1) * r + 1.0)
        return q * num / den
    if q < 0.0:
        r = p
    else:
        r = 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r = r - 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
                    + 2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r
                  + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r
                + 4.63033784615654529590e0) * r + 1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
                    + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
                  + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r
                + 2.05319162663775882187e0) * r + 1.0)
    else:
        r = r - 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
                  + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r
                + 5.46378491116411436990e0) * r + 6.65790464350110377720e0)
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
                    + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
                  + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
                + 5.99832206555887937690e-1) * r + 1.0)
    x = num / den
    if q < 0.0:
        return -x
    return x


@jit(cache=True)
def gaussian(seed, stream, counter):
    """Standard normal draw via inverse-CDF transform of one counter draw."""
    return norminv(_hash_u01(seed, stream, counter))


def counter_hash(seed, stream, counter):
    """Raw 64-bit hash of (seed, stream, counter), as a Python int."""
    return _counter_hash_ints(int(seed), int(stream), int(counter))


def derive_seed(master_seed, purpose, index=0):
    """Derive an independent sub-seed for one run of an experiment.

    ``purpose`` is a small integer tagging the kind of run (scheme, sampler,
    ...), ``index`` enumerates runs within the experiment.  The result is kept
    below 2**63 so it passes safely through int64 kernel arguments.
    """
    if not 0 <= int(master_seed) < 2 ** 63:
        raise ValueError("seed must satisfy 0 <= seed < 2**63")
    return counter_hash(master_seed, purpose, index) & (2 ** 63 - 1)


@dataclass
class RngStream:
    """Stateful view of one counter-based stream.

    Draws advance the counter by one; the underlying generator stays a pure
    function of (seed, stream, counter).
    """

    seed: int
    stream: int = 0
    counter: int = field(default=0)

    def uniform(self):
        u = uniform01(self.seed, self.stream, self.counter)
        self.counter += 1
        return u

    def two_point(self):
        v = two_point(self.seed, self.stream, self.counter)
        self.counter += 1
        return v

    def gaussian(self):
        g = gaussian(self.seed, self.stream, self.counter)
        self.counter += 1
        return g

    def two_point_vector(self, n):
        return np.array([self.two_point() for _ in range(n)])
