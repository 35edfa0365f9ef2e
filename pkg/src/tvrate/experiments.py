"""Monte Carlo rate experiments for trend filtering with a misspecified penalty order.

Each cell ``(n, r)`` draws ``y_i = f*(i/n) + σ ε_i`` from its own seed, fits the
estimator along a λ grid and keeps the λ with the smallest error against the
truth (oracle tuning).  Cells are independent, so they may run in any order or
concurrently; results are sorted by ``(n, r)`` afterwards.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import NumericalError, ParameterError
from .oracle import (
    OracleSpec,
    approx_error_sq,
    build_oracle,
    delta_schedule,
    design_points,
    lambda_schedule,
    lemma2_constant,
)
from .pwpoly import PiecewisePolynomial, Polynomial, TruncatedPowerTerm, from_truncated_powers
from .solver import TrendFilterProblem, solve
from .tv import tv_continuous

GENERATOR_ID = "splitmix64-boxmuller-v1"
TRUTHS = ("step3", "ramp3")
CSV_COLUMNS = ("truth", "k", "ell", "n", "replicate", "seed", "lambda", "mse", "oracle_bound")

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def make_truth(name: str) -> tuple[PiecewisePolynomial, int]:
    """Named truth on ``[0, 1]`` and its smoothness order.

    ``step3`` is ``3 * 1(x >= 0.5)`` (order 1), ``ramp3`` is ``3 (x - 0.5)_+``
    (order 2).
    """
    if name == "step3":
        return from_truncated_powers((0.0, 1.0), Polynomial(), [TruncatedPowerTerm(0.5, 0, 3.0)]), 1
    if name == "ramp3":
        return from_truncated_powers((0.0, 1.0), Polynomial(), [TruncatedPowerTerm(0.5, 1, 3.0)]), 2
    raise ParameterError(f"unknown truth {name!r}; known: {', '.join(TRUTHS)}")


# ---------------------------------------------------------------- noise

def _mix64(z: np.ndarray) -> np.ndarray:
    # SplitMix64 output function on uint64 arrays (wrapping arithmetic)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def mix64(x: int) -> int:
    """SplitMix64 finaliser of one 64-bit integer."""
    return int(_mix64(np.array([x & _MASK], dtype=np.uint64))[0])


def cell_seed(base_seed: int, n: int, r: int) -> int:
    """``base_seed XOR mix64((n << 32) | r)``."""
    if n < 0 or r < 0 or n >= 1 << 32 or r >= 1 << 32:
        raise ParameterError("n and r must fit in 32 bits")
    return (base_seed & _MASK) ^ mix64((n << 32) | r)


def standard_normals(seed: int, count: int) -> np.ndarray:
    """``count`` standard normals from a SplitMix64 counter stream and Box-Muller.

    Word ``j`` of the stream is ``mix64(seed + (j + 1) * 0x9E3779B97F4A7C15)``.
    Words ``2i`` and ``2i + 1`` give uniforms ``u1 = (w >> 11 + 1) / 2^53`` in
    ``(0, 1]`` and ``u2 = (w >> 11) / 2^53``; pair ``i`` yields
    ``sqrt(-2 ln u1) cos(2π u2)`` then ``sqrt(-2 ln u1) sin(2π u2)``.
    """
    if count < 0:
        raise ParameterError("count must be nonnegative")
    pairs = (count + 1) // 2
    j = np.arange(1, 2 * pairs + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        words = _mix64(np.uint64(seed & _MASK) + j * np.uint64(_GOLDEN))
    top = (words >> np.uint64(11)).astype(np.float64)
    u1 = (top[0::2] + 1.0) * 2.0**-53
    u2 = top[1::2] * 2.0**-53
    radius = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(2.0 * math.pi * u2)
    z[1::2] = radius * np.sin(2.0 * math.pi * u2)
    return z[:count]


def generate_data(truth: PiecewisePolynomial, n: int, sigma: float, seed: int) -> np.ndarray:
    """``y_i = truth(i/n) + σ z_i`` with ``z`` from :func:`standard_normals`."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if not sigma >= 0.0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    f = truth(design_points(n))
    if sigma == 0.0:
        return f
    return f + sigma * standard_normals(seed, n)


# ---------------------------------------------------------------- config / records

@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo grid.

    ``lambda_grid`` is ``"schedule"`` (``lambda_points`` log-spaced multipliers
    over ``[1/lambda_span, lambda_span]``) or an explicit list of multipliers.
    Either way the multipliers scale ``lambda_schedule(n, k, ell, P_ell, C)``
    with ``C = lambda_C``, so the grid follows n.
    """

    truth_name: str = "step3"
    penalty_order: int = 2
    n_grid: tuple[int, ...] = (256, 512, 1024, 2048, 4096, 8192)
    replicates: int = 40
    sigma: float = 1.0
    base_seed: int = 20240501
    lambda_grid: str | tuple[float, ...] = "schedule"
    lambda_points: int = 30
    lambda_span: float = 100.0
    lambda_C: float = 1.0
    output_path: str = "results.csv"
    # only used when truth_name == "custom"
    custom_truth: PiecewisePolynomial | None = field(default=None, compare=False, repr=False)
    custom_ell: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        if self.truth_name == "custom":
            if self.custom_truth is None or self.custom_ell is None:
                raise ParameterError("custom truth needs custom_truth and custom_ell")
        elif self.truth_name not in TRUTHS:
            raise ParameterError(f"unknown truth {self.truth_name!r}")
        if not self.n_grid:
            raise ParameterError("n_grid is empty")
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ParameterError("n_grid must be strictly increasing")
        if self.n_grid[0] <= self.penalty_order + 1:
            raise ParameterError(f"every n must exceed k + 1 = {self.penalty_order + 1}")
        if self.replicates < 1:
            raise ParameterError("replicates must be >= 1")
        if not self.sigma >= 0.0:
            raise ParameterError("sigma must be >= 0")
        if not 0 <= self.base_seed < 1 << 64:
            raise ParameterError("base_seed must be a 64-bit unsigned integer")
        if isinstance(self.lambda_grid, str):
            if self.lambda_grid != "schedule":
                raise ParameterError(f"lambda_grid must be 'schedule' or a list, got {self.lambda_grid!r}")
            if self.lambda_points < 1 or not self.lambda_span >= 1.0:
                raise ParameterError("need lambda_points >= 1 and lambda_span >= 1")
        else:
            grid = tuple(float(v) for v in self.lambda_grid)
            if not grid or any(not v > 0.0 for v in grid):
                raise ParameterError("lambda_grid multipliers must be positive")
            object.__setattr__(self, "lambda_grid", grid)
        if not self.lambda_C > 0.0:
            raise ParameterError("lambda_C must be positive")
        truth, ell = self.truth()
        if not self.penalty_order > ell:
            raise ParameterError(f"experiments need k > ell, got k={self.penalty_order}, ell={ell}")

    def truth(self) -> tuple[PiecewisePolynomial, int]:
        if self.truth_name == "custom":
            return self.custom_truth, int(self.custom_ell)
        return make_truth(self.truth_name)

    @property
    def ell(self) -> int:
        return self.truth()[1]

    def multipliers(self) -> np.ndarray:
        if isinstance(self.lambda_grid, str):
            s = self.lambda_span
            return np.logspace(math.log10(1.0 / s), math.log10(s), self.lambda_points)
        return np.asarray(self.lambda_grid, dtype=float)

    def lambda_values(self, n: int) -> np.ndarray:
        truth, ell = self.truth()
        p_l = tv_continuous(truth, ell).total
        return lambda_schedule(n, self.penalty_order, ell, p_l, self.lambda_C) * self.multipliers()

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("custom_truth")
        d["n_grid"] = list(self.n_grid)
        if not isinstance(self.lambda_grid, str):
            d["lambda_grid"] = list(self.lambda_grid)
        return d


@dataclass(frozen=True)
class ReplicateResult:
    n: int
    replicate_index: int
    seed: int
    chosen_lambda: float
    mse: float
    oracle_bound: float


@dataclass(frozen=True)
class RateEstimate:
    slope: float
    intercept: float
    slope_se: float
    n_points: int


@dataclass
class ExperimentRun:
    config: ExperimentConfig
    results: list[ReplicateResult]
    failures: list[tuple[int, int, str]]
    wall_time: float

    def summary(self) -> dict:
        out = {
            "config": self.config.echo(),
            "generator": GENERATOR_ID,
            "cells": len(self.results) + len(self.failures),
            "failures": len(self.failures),
            "failed_cells": [{"n": n, "replicate": r, "error": msg} for n, r, msg in self.failures],
            "wall_time_s": self.wall_time,
        }
        if len({r.n for r in self.results}) >= 3:
            est = estimate_rate(self.results)
            out["rate"] = asdict(est)
        return out


# ---------------------------------------------------------------- fitting

def fit_oracle_lambda(y, truth, k: int, lambda_grid, tol: float = 1e-8) -> tuple[float, float]:
    """λ from ``lambda_grid`` minimising ``||θ̂_λ - f*||²_n``, and that minimum.

    ``truth`` is a :class:`PiecewisePolynomial` or its values at the design
    points.  The grid is swept from the largest λ down with warm starts.
    Values whose solve does not converge are skipped.
    """
    y = np.asarray(y, dtype=float)
    lams = np.asarray(lambda_grid, dtype=float).ravel()
    if lams.size == 0:
        raise ParameterError("lambda grid is empty")
    n = y.size
    f = truth(design_points(n)) if isinstance(truth, PiecewisePolynomial) else np.asarray(truth, float)
    if f.shape != y.shape:
        raise ParameterError("truth values and y differ in length")
    best_lam, best_mse = math.nan, math.inf
    warm = None
    for lam in sorted(lams, reverse=True):
        fit = solve(TrendFilterProblem(y, k, lam), tol=tol, warm=warm, method="active_set", exact_kkt=False)
        if not fit.converged:
            warm = None
            continue
        warm = fit
        mse = float(np.mean((fit.theta - f) ** 2))
        if mse < best_mse:
            best_lam, best_mse = float(lam), mse
    if math.isnan(best_lam):
        raise NumericalError("solver failed to converge at every lambda of the grid")
    return best_lam, best_mse


def oracle_bound(truth: PiecewisePolynomial, n: int, k: int, ell: int, C: float | None = None) -> float:
    """``||f* - f_{δ,k}||²_n + λ_n P_k(f_{δ,k})`` at the scheduled δ and λ_n.

    ``C`` defaults to the explicit constant ``2 C_{k,k-ell}`` of the penalty
    bound.
    """
    delta = delta_schedule(n, k, ell)
    spec = OracleSpec(truth, ell, k, delta)
    f_d = build_oracle(spec)
    p_l = tv_continuous(truth, ell).total
    C = lemma2_constant(k, ell) if C is None else C
    lam_n = lambda_schedule(n, k, ell, p_l, C)
    return approx_error_sq(truth, f_d, n) + lam_n * tv_continuous(f_d, k).total


def _run_cell(config: ExperimentConfig, truth, f_values: dict, lambdas: dict, bounds: dict, n: int, r: int):
    seed = cell_seed(config.base_seed, n, r)
    y = generate_data(truth, n, config.sigma, seed)
    lam, mse = fit_oracle_lambda(y, f_values[n], config.penalty_order, lambdas[n])
    return ReplicateResult(n, r, seed, lam, mse, bounds[n])


def _thread_count(threads: int | None) -> int:
    if threads is None:
        raw = os.environ.get("TVRATE_THREADS", "0")
        try:
            threads = int(raw)
        except ValueError as exc:
            raise ParameterError(f"TVRATE_THREADS must be an integer, got {raw!r}") from exc
    if threads < 0:
        raise ParameterError("thread count must be >= 0")
    return threads or (os.cpu_count() or 1)


def execute(config: ExperimentConfig, threads: int | None = None, cells=None) -> ExperimentRun:
    """Run every ``(n, r)`` cell (or just ``cells``) and collect results and failures.

    ``threads`` caps concurrency; ``None`` reads ``TVRATE_THREADS`` (0 = one per CPU).
    """
    t0 = time.perf_counter()
    truth, ell = config.truth()
    k = config.penalty_order
    if cells is None:
        cells = [(n, r) for n in config.n_grid for r in range(config.replicates)]
    ns = sorted({n for n, _ in cells})
    f_values = {n: truth(design_points(n)) for n in ns}
    lambdas = {n: config.lambda_values(n) for n in ns}
    bounds = {n: oracle_bound(truth, n, k, ell) for n in ns}

    def job(cell):
        n, r = cell
        try:
            return _run_cell(config, truth, f_values, lambdas, bounds, n, r)
        except (NumericalError, np.linalg.LinAlgError) as exc:
            return (n, r, f"{type(exc).__name__}: {exc}")

    workers = _thread_count(threads)
    if workers == 1:
        outcomes = [job(c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(job, cells))
    results = sorted((o for o in outcomes if isinstance(o, ReplicateResult)), key=lambda o: (o.n, o.replicate_index))
    failures = sorted(o for o in outcomes if not isinstance(o, ReplicateResult))
    return ExperimentRun(config, results, failures, time.perf_counter() - t0)


def run_experiment(config: ExperimentConfig, threads: int | None = None) -> list[ReplicateResult]:
    """Results of every cell that succeeded, sorted by ``(n, r)``; see :func:`execute`."""
    return execute(config, threads).results


def estimate_rate(results) -> RateEstimate:
    """OLS of ``log(mean mse at n)`` on ``log n``, with the usual slope standard error."""
    by_n: dict[int, list[float]] = {}
    for res in results:
        by_n.setdefault(int(res.n), []).append(float(res.mse))
    if len(by_n) < 3:
        raise ParameterError(f"need at least 3 distinct n, got {len(by_n)}")
    ns = sorted(by_n)
    means = np.array([np.mean(by_n[n]) for n in ns])
    if np.any(means <= 0.0):
        raise ParameterError("mean mse must be positive to take logs")
    x = np.log(np.array(ns, dtype=float))
    yv = np.log(means)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (yv - yv.mean()) / sxx)
    intercept = float(yv.mean() - slope * x.mean())
    resid = yv - (intercept + slope * x)
    m = len(ns)
    se = math.sqrt(float(resid @ resid) / (m - 2) / sxx) if m > 2 else 0.0
    return RateEstimate(slope, intercept, se, m)


# ---------------------------------------------------------------- output

def results_csv(config: ExperimentConfig, results) -> str:
    """CSV text with a header row; floats use shortest round-trip ``repr``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    ell = config.ell
    for res in results:
        w.writerow(
            [
                config.truth_name,
                config.penalty_order,
                ell,
                res.n,
                res.replicate_index,
                res.seed,
                repr(float(res.chosen_lambda)),
                repr(float(res.mse)),
                repr(float(res.oracle_bound)),
            ]
        )
    return buf.getvalue()


def read_results_csv(path) -> list[ReplicateResult]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        ReplicateResult(
            int(r["n"]), int(r["replicate"]), int(r["seed"]), float(r["lambda"]), float(r["mse"]), float(r["oracle_bound"])
        )
        for r in rows
    ]


def write_outputs(run: ExperimentRun, csv_path, summary_path=None) -> None:
    with open(csv_path, "w", newline="") as fh:
        fh.write(results_csv(run.config, run.results))
    if summary_path is not None:
        with open(summary_path, "w") as fh:
            json.dump(run.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
