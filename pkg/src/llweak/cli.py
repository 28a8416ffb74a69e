"""Experiment runner CLI.

Subcommands
-----------
moments      exact / propagated / Monte Carlo moment curves on a grid
error-table  scheme-vs-exact error statistics versus ensemble size
convergence  batched terminal-functional errors versus stepsize
simulate     individual trajectories as CSV
bench        timing comparison of the numba and numpy kernel backends

Output is CSV (UTF-8, comma separator, header row, floats with 17 significant
digits so values round-trip exactly).  ``--emit-plots`` writes SVG charts next
to the CSV.  A JSON config file can predefine any flag; explicit flags win.

Exit codes: 0 success, 2 usage, 3 configuration/unsupported problem,
4 numerical failure, 5 I/O.  Failures print one JSON line
``{"category": ..., "message": ...}`` to stderr.
"""

import argparse
import json
import math
import os
import subprocess
import sys
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import montecarlo as mc
from . import svg
from ._backend import BACKEND, NUMBA_ENABLED, max_threads
from .baselines import euler_path
from .llweak_core import (StateDependentLinearization, StepFailure,
                          integrate_path, moment_propagate)
from .problems import REGISTRY, get_problem
from .rng import RngStream, derive_seed
from .sde_model import uniform_grid

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_NUMERICAL = 4
EXIT_IO = 5


class CliError(Exception):
    def __init__(self, category, message, code):
        self.category = category
        self.code = code
        super().__init__(message)


def _usage_error(msg):
    return CliError("usage", msg, EXIT_USAGE)


def _config_error(msg):
    return CliError("config", msg, EXIT_CONFIG)


SCHEMES = ("llweak", "euler", "euler-romberg", "exact")


@dataclass
class ExperimentConfig:
    """Resolved run configuration; mirrors the CLI flags."""

    command: str
    problem: str = "example1"
    scheme: str = "llweak"
    delta: tuple = (1.0 / 64,)
    t_end: Optional[float] = None
    samples: tuple = (4096,)
    batches: int = 1
    seed: int = 12345
    threads: Optional[int] = None
    out: Optional[str] = None
    emit_plots: bool = False

    def validate(self):
        if self.problem not in REGISTRY:
            known = ", ".join(sorted(REGISTRY))
            raise _config_error(f"unknown problem {self.problem!r} (known: {known})")
        if self.command not in ("bench", "bench-worker"):
            for s in self.scheme.split(","):
                if s not in SCHEMES:
                    raise _usage_error(f"unknown scheme {s!r} (choose from {SCHEMES})")
        if any(d <= 0 for d in self.delta):
            raise _usage_error("delta values must be positive")
        if any(m < 0 for m in self.samples):
            raise _usage_error("sample counts must be nonnegative")
        if self.batches < 1:
            raise _usage_error("batches must be >= 1")
        if not 0 <= self.seed < 2 ** 63:
            raise _usage_error("seed must satisfy 0 <= seed < 2**63")
        if self.emit_plots and not self.out:
            raise CliError("io", "--emit-plots needs --out to place the SVG files",
                           EXIT_IO)
        return self


def _parse_floats(text):
    try:
        return tuple(float(part) for part in str(text).split(","))
    except ValueError:
        raise _usage_error(f"expected comma-separated numbers, got {text!r}")


def _parse_ints(text):
    try:
        return tuple(int(part) for part in str(text).split(","))
    except ValueError:
        raise _usage_error(f"expected comma-separated integers, got {text!r}")


def _resolve_threads(threads):
    if threads is not None:
        return threads
    env = os.environ.get("LLWEAK_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise _usage_error(f"LLWEAK_THREADS must be an integer, got {env!r}")
    return max_threads()


def build_config(args):
    """Merge config-file values and CLI flags (flags win) into a config."""
    file_values = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                file_values = json.load(fh)
        except OSError as exc:
            raise CliError("io", f"cannot read config file: {exc}", EXIT_IO)
        except json.JSONDecodeError as exc:
            raise _config_error(f"config file is not valid JSON: {exc}")
        if not isinstance(file_values, dict):
            raise _config_error("config file must hold a JSON object")

    def pick(name, default):
        flag = getattr(args, name.replace("-", "_"), None)
        if flag is not None:
            return flag
        if name in file_values:
            return file_values[name]
        return default

    cfg = ExperimentConfig(
        command=args.command,
        problem=str(pick("problem", "example1")),
        scheme=str(pick("scheme", "llweak")),
        delta=_parse_floats(pick("delta", "0.015625")),
        t_end=(lambda v: None if v is None else float(v))(pick("t_end", None)),
        samples=_parse_ints(pick("samples", "4096")),
        batches=int(pick("batches", 1)),
        seed=int(pick("seed", 12345)),
        threads=(lambda v: None if v is None else int(v))(pick("threads", None)),
        out=pick("out", None),
        emit_plots=bool(pick("emit_plots", False)),
    )
    cfg.threads = _resolve_threads(cfg.threads)
    return cfg.validate()


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def write_csv(header, rows, out):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    text = "\n".join(lines) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    try:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliError("io", f"cannot write {out}: {exc}", EXIT_IO)


def _plot_stem(out):
    stem, _ = os.path.splitext(out)
    return stem


def _single(values, what):
    if len(values) != 1:
        raise _usage_error(f"{what} takes a single value here, got {values}")
    return values[0]


def _problem_grid(cfg):
    problem = get_problem(cfg.problem)
    t_end = cfg.t_end if cfg.t_end is not None else problem.t_end
    delta = _single(cfg.delta, "--delta")
    try:
        grid = uniform_grid(problem.t0, t_end, delta)
    except ValueError as exc:
        raise _usage_error(str(exc))
    return problem, grid


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_moments(cfg):
    problem, grid = _problem_grid(cfg)
    samples = _single(cfg.samples, "--samples")
    scheme = cfg.scheme
    if scheme not in ("llweak", "euler", "exact"):
        raise _config_error(f"moments does not support scheme {scheme!r}")

    exact = mc.exact_moment_curves(problem, grid)
    propagated = None
    if problem.constant_linearization:
        try:
            means, seconds = moment_propagate(problem, grid)
            pvar = seconds - np.einsum("ni,nj->nij", means, means)
            propagated = (means, pvar)
        except StateDependentLinearization:
            propagated = None
    if exact is None and propagated is None:
        raise _config_error(
            f"problem {cfg.problem!r} has neither exact moments nor a "
            f"state-independent linearization to propagate"
        )

    stats = None
    if samples >= 1:
        stats = mc.run_ensemble(problem, grid, scheme, samples,
                                derive_seed(cfg.seed, mc.PURPOSES[scheme], 0),
                                threads=cfg.threads)

    d = problem.d
    header = ["t"]
    groups = []
    if exact is not None:
        header += [f"exact_mean_{i + 1}" for i in range(d)]
        header += [f"exact_var_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
        groups.append(exact)
    if propagated is not None:
        header += [f"prop_mean_{i + 1}" for i in range(d)]
        header += [f"prop_var_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
        groups.append(propagated)
    if stats is not None:
        header += [f"mc_mean_{i + 1}" for i in range(d)]
        header += [f"mc_var_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
        header += ["mc_alive"]

    rows = []
    for n, t in enumerate(grid):
        row = [t]
        for mean, var in groups:
            row += list(mean[n]) + list(var[n].reshape(-1))
        if stats is not None:
            row += list(stats.mean[n]) + list(stats.var[n].reshape(-1))
            row.append(int(stats.alive[n]))
        rows.append(row)
    write_csv(header, rows, cfg.out)

    if cfg.emit_plots:
        stem = _plot_stem(cfg.out)
        series = []
        for i in range(d):
            if exact is not None:
                series.append((f"exact mean {i + 1}", grid, exact[0][:, i]))
            if stats is not None:
                series.append((f"mc mean {i + 1}", grid, stats.mean[:, i]))
            elif propagated is not None:
                series.append((f"prop mean {i + 1}", grid, propagated[0][:, i]))
        svg.line_chart(stem + "_mean.svg", series, title=f"{cfg.problem} mean",
                       xlabel="t", ylabel="mean")
        series = []
        for i in range(d):
            if exact is not None:
                series.append((f"exact var {i + 1}{i + 1}", grid, exact[1][:, i, i]))
            if stats is not None:
                series.append((f"mc var {i + 1}{i + 1}", grid, stats.var[:, i, i]))
            elif propagated is not None:
                series.append((f"prop var {i + 1}{i + 1}", grid, propagated[1][:, i, i]))
        svg.line_chart(stem + "_var.svg", series, title=f"{cfg.problem} variance",
                       xlabel="t", ylabel="variance")
    return EXIT_OK


def cmd_error_table(cfg):
    problem, grid = _problem_grid(cfg)
    m_list = list(cfg.samples)
    if any(m < 1 for m in m_list):
        raise _usage_error("error-table sample counts must be >= 1")
    try:
        result = mc.run_error_table(problem, grid, m_list, cfg.seed,
                                    threads=cfg.threads)
    except ValueError as exc:
        raise _config_error(str(exc))

    header = ["statistic"] + [f"M_{m}" for m in m_list] + ["gamma", "gamma_std"]
    rows = []
    for li, label in enumerate(result.labels):
        rows.append([f"e_hat_{label}"] + list(result.scheme_errors[li])
                    + [result.scheme_gamma[li, 0], result.scheme_gamma[li, 1]])
    for li, label in enumerate(result.labels):
        rows.append([f"e_bar_{label}"] + list(result.sampler_errors[li])
                    + [result.sampler_gamma[li, 0], result.sampler_gamma[li, 1]])
    for i in range(problem.d):
        rows.append([f"r_{i + 1}"] + list(result.atan_rel[i]) + [None, None])
    write_csv(header, rows, cfg.out)

    if cfg.emit_plots:
        stem = _plot_stem(cfg.out)
        series = [(f"e_hat {label}", m_list, result.scheme_errors[li])
                  for li, label in enumerate(result.labels)]
        svg.line_chart(stem + "_errors.svg", series, title=f"{cfg.problem} errors vs M",
                       xlabel="M", ylabel="max error", logx=True, logy=True)
    return EXIT_OK


def cmd_convergence(cfg):
    problem = get_problem(cfg.problem)
    if cfg.t_end is not None:
        problem.t_end = float(cfg.t_end)
    samples = _single(cfg.samples, "--samples")
    if samples < 1:
        raise _usage_error("convergence needs --samples >= 1")
    schemes = cfg.scheme.split(",")
    for s in schemes:
        if s == "exact":
            raise _config_error("convergence compares integrators; 'exact' is not one")
    try:
        rows_data = mc.run_convergence(problem, list(cfg.delta), schemes, samples,
                                       cfg.batches, cfg.seed, threads=cfg.threads)
    except ValueError as exc:
        raise _config_error(str(exc))

    header = ["scheme", "delta", "e_hat", "half_width", "std_error",
              "batches", "batch_size", "overflow_count"]
    rows = [[scheme, delta, est.value, est.half_width, est.std_error,
             est.batches, est.batch_size, est.overflow_count]
            for scheme, delta, est in rows_data]
    write_csv(header, rows, cfg.out)

    if cfg.emit_plots:
        stem = _plot_stem(cfg.out)
        series = []
        for s in schemes:
            ds = [delta for scheme, delta, _ in rows_data if scheme == s]
            es = [abs(est.value) for scheme, _, est in rows_data if scheme == s]
            series.append((s, ds, es))
        svg.line_chart(stem + "_convergence.svg", series,
                       title=f"{cfg.problem} |e| vs delta", xlabel="delta",
                       ylabel="|e_hat|", logx=True, logy=True)
    return EXIT_OK


def cmd_simulate(cfg):
    problem, grid = _problem_grid(cfg)
    samples = _single(cfg.samples, "--samples")
    if samples < 1:
        raise _usage_error("simulate needs --samples >= 1")
    scheme = cfg.scheme
    if scheme not in ("llweak", "euler", "exact"):
        raise _config_error(f"simulate does not support scheme {scheme!r}")
    nsteps = grid.shape[0] - 1

    header = ["trajectory", "t"] + [f"x_{i + 1}" for i in range(problem.d)]
    rows = []
    run_seed = derive_seed(cfg.seed, mc.PURPOSES[scheme], 0)
    for traj in range(samples):
        if scheme == "llweak":
            stream = RngStream(run_seed, traj)
            noise = np.array([[stream.two_point() for _ in range(problem.d)]
                              for _ in range(nsteps)])
            states = integrate_path(problem, problem.x0, grid, noise)
        elif scheme == "euler":
            stream = RngStream(run_seed, traj)
            noise = np.array([[stream.two_point() for _ in range(problem.m)]
                              for _ in range(nsteps)])
            states, _ = euler_path(problem, problem.x0, grid, noise)
        else:
            if problem.exact_sampler is None:
                raise _config_error(f"problem {cfg.problem!r} has no exact sampler")
            stream = RngStream(run_seed, traj)
            states = np.empty((nsteps + 1, problem.d))
            states[0] = problem.x0
            w = np.zeros(problem.m)
            for n in range(nsteps):
                sh = math.sqrt(grid[n + 1] - grid[n])
                for k in range(problem.m):
                    w[k] += sh * stream.gaussian()
                states[n + 1] = problem.exact_sampler(w, grid[n + 1] - grid[0])
        for n, t in enumerate(grid):
            rows.append([traj, t] + list(states[n]))
    write_csv(header, rows, cfg.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Backend benchmark
# ---------------------------------------------------------------------------

_BENCH_WORKLOADS = ("example2-llweak", "example1-llweak", "example2-euler")


def _bench_workload(workload, samples):
    if workload == "example2-llweak":
        problem = get_problem("example2")
        grid = uniform_grid(0.0, 10.0, 0.25)
        scheme = "llweak"
    elif workload == "example1-llweak":
        problem = get_problem("example1")
        grid = uniform_grid(0.0, problem.t_end, 1.0 / 64)
        scheme = "llweak"
    else:
        problem = get_problem("example2")
        grid = uniform_grid(0.0, 10.0, 0.25)
        scheme = "euler"
    mc.run_ensemble(problem, grid, scheme, max(2, samples // 8), seed=1)  # warmup
    t0 = time.perf_counter()
    stats = mc.run_ensemble(problem, grid, scheme, samples, seed=1)
    elapsed = time.perf_counter() - t0
    steps = samples * (grid.shape[0] - 1)
    return elapsed, steps, float(stats.mean[-1, 0])


def cmd_bench_worker(cfg):
    workload = cfg.scheme  # repurposed carrier, set by cmd_bench
    samples = _single(cfg.samples, "--samples")
    elapsed, steps, checksum = _bench_workload(workload, samples)
    print(json.dumps({"backend": BACKEND, "workload": workload,
                      "seconds": elapsed, "steps": steps, "checksum": checksum}))
    return EXIT_OK


def cmd_bench(cfg):
    samples = min(_single(cfg.samples, "--samples"), 2048)
    results = []
    for backend in ("numba", "numpy"):
        if backend == "numba" and not NUMBA_ENABLED:
            continue
        for workload in _BENCH_WORKLOADS:
            n = samples if backend == "numba" else max(2, samples // 32)
            env = dict(os.environ, LLWEAK_BACKEND=backend)
            proc = subprocess.run(
                [sys.executable, "-m", "llweak.cli", "bench-worker",
                 "--scheme", workload, "--samples", str(n),
                 "--seed", str(cfg.seed)],
                capture_output=True, text=True, env=env)
            if proc.returncode != 0:
                raise CliError("numerical",
                               f"bench worker failed for {backend}/{workload}: "
                               f"{proc.stderr.strip()[-500:]}", EXIT_NUMERICAL)
            results.append(json.loads(proc.stdout.strip().splitlines()[-1]))

    header = ["backend", "workload", "steps", "seconds", "us_per_step", "checksum"]
    rows = []
    for r in results:
        rows.append([r["backend"], r["workload"], r["steps"], r["seconds"],
                     1e6 * r["seconds"] / r["steps"], r["checksum"]])
    write_csv(header, rows, cfg.out)
    if cfg.out is not None:
        by = {}
        for r in results:
            by.setdefault(r["workload"], {})[r["backend"]] = 1e6 * r["seconds"] / r["steps"]
        for workload, t in sorted(by.items()):
            if "numba" in t and "numpy" in t:
                print(f"{workload}: numba {t['numba']:.2f} us/step, "
                      f"numpy {t['numpy']:.2f} us/step, "
                      f"speedup {t['numpy'] / t['numba']:.1f}x")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _add_common(parser):
    parser.add_argument("--problem", help="registry name of the problem")
    parser.add_argument("--scheme", help="llweak | euler | euler-romberg | exact")
    parser.add_argument("--delta", help="stepsize, or comma list for convergence")
    parser.add_argument("--t-end", dest="t_end", help="override the problem horizon")
    parser.add_argument("--samples", help="trajectories per batch, or comma list "
                                          "of ensemble sizes for error-table")
    parser.add_argument("--batches", type=int, help="batch count K")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--threads", type=int, help="worker threads "
                                                    "(default: LLWEAK_THREADS or all cores)")
    parser.add_argument("--out", help="CSV output path (default: stdout)")
    parser.add_argument("--config", help="JSON file with default flag values")
    parser.add_argument("--emit-plots", dest="emit_plots", action="store_true",
                        default=None, help="write SVG charts next to the CSV")


def make_parser():
    parser = argparse.ArgumentParser(
        prog="llweak",
        description="Weak local linearization SDE integrator and benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("moments", "exact / propagated / Monte Carlo moment curves"),
        ("error-table", "errors and convergence rates versus ensemble size"),
        ("convergence", "functional errors versus stepsize"),
        ("simulate", "emit individual trajectories"),
        ("bench", "compare the numba and numpy kernel backends"),
        ("bench-worker", "timing worker used internally by bench"),
    ):
        p = sub.add_parser(name, help=doc)
        _add_common(p)
    return parser


_COMMANDS = {
    "moments": cmd_moments,
    "error-table": cmd_error_table,
    "convergence": cmd_convergence,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "bench-worker": cmd_bench_worker,
}


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_config(args)
        return _COMMANDS[args.command](cfg)
    except CliError as exc:
        print(json.dumps({"category": exc.category, "message": str(exc)}),
              file=sys.stderr)
        return exc.code
    except (StepFailure, RuntimeError) as exc:
        print(json.dumps({"category": "numerical", "message": str(exc)}),
              file=sys.stderr)
        return EXIT_NUMERICAL
    except KeyError as exc:
        print(json.dumps({"category": "config", "message": str(exc)}),
              file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
