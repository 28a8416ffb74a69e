"""Weak local linearization integration for SDEs with multiplicative noise.

Public surface: linear-algebra kernels (:mod:`llweak.linalg`), problem
definitions and linearization (:mod:`llweak.sde_model`, :mod:`llweak.problems`),
the scheme itself (:mod:`llweak.llweak_core`), the weak Euler baseline
(:mod:`llweak.baselines`), Monte Carlo estimators and experiments
(:mod:`llweak.montecarlo`), and the ``llweak`` CLI (:mod:`llweak.cli`).

Set ``LLWEAK_BACKEND=numpy`` to run the pure-numpy kernel fallback instead of
the numba JIT (``llweak bench`` compares the two).
"""

from ._backend import BACKEND, NUMBA_ENABLED
from .baselines import euler_path, euler_weak_step, romberg_estimate
from .linalg import NonPsdMatrixError, expm, kron, kron_sum, psd_sqrt, unvec, vec
from .llweak_core import (AugmentedSystem, StateDependentLinearization,
                          StepFailure, StepMap, StepMoments, build_augmented,
                          build_step_map, integrate_path, ll_step,
                          moment_propagate, step_moments_expm, step_moments_ode)
from .montecarlo import (EnsembleStats, McEstimate, arctan_errors,
                         estimate_moments, fit_gamma, functional_error,
                         run_convergence, run_ensemble, run_error_table,
                         run_functional, t_cdf, t_quantile)
from .problems import (REGISTRY, example1_exact_moments, example1_exact_sample,
                       example2_exact_functional, get_problem)
from .rng import RngStream, derive_seed, gaussian, norminv, two_point, uniform01
from .sde_model import (LinearizationData, SdeProblem, linearize,
                        make_fd_jacobians, uniform_grid)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "NUMBA_ENABLED", "__version__",
    "kron", "kron_sum", "vec", "unvec", "expm", "psd_sqrt", "NonPsdMatrixError",
    "SdeProblem", "LinearizationData", "linearize", "make_fd_jacobians",
    "uniform_grid",
    "AugmentedSystem", "StepMoments", "StepMap", "StepFailure",
    "StateDependentLinearization", "build_augmented", "step_moments_expm",
    "step_moments_ode", "ll_step", "integrate_path", "build_step_map",
    "moment_propagate",
    "euler_weak_step", "euler_path", "romberg_estimate",
    "REGISTRY", "get_problem", "example1_exact_sample", "example1_exact_moments",
    "example2_exact_functional",
    "RngStream", "derive_seed", "uniform01", "two_point", "gaussian", "norminv",
    "McEstimate", "EnsembleStats", "estimate_moments", "fit_gamma",
    "functional_error", "arctan_errors", "t_cdf", "t_quantile", "run_ensemble",
    "run_error_table", "run_functional", "run_convergence",
]
