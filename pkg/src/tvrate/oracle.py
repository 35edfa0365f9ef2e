"""Convolution oracles ``f_{delta,k}``, their error/penalty bounds, and rate formulas."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .kernel import construct_kernel, convolve, derivative_bound, scale_kernel
from .pwpoly import PiecewisePolynomial
from .tv import tv_continuous


@dataclass(frozen=True)
class OracleSpec:
    truth: PiecewisePolynomial
    true_order: int
    penalty_order: int
    bandwidth: float

    def __post_init__(self):
        if self.true_order < 1 or self.penalty_order < 1:
            raise ParameterError("orders must be >= 1")
        if not self.bandwidth > 0.0:
            raise ParameterError("bandwidth must be positive")


class RateMethod(str, enum.Enum):
    CORRECT_SPEC = "correct_spec"
    SIMON2021 = "simon2021"
    THIS_PAPER = "this_paper"


@dataclass(frozen=True)
class RateFormulaResult:
    method: RateMethod
    exponent: float

    def __post_init__(self):
        if not -1.0 < self.exponent < 0.0:
            raise ParameterError(f"rate exponent {self.exponent} outside (-1, 0)")


def build_oracle(spec: OracleSpec) -> PiecewisePolynomial:
    """``f* convolved with the order-k kernel at bandwidth delta``."""
    H = construct_kernel(spec.penalty_order)
    return convolve(spec.truth, scale_kernel(H, spec.bandwidth))


def design_points(n: int) -> np.ndarray:
    """Equispaced design ``x_i = i/n``, ``i = 1..n``."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    return np.arange(1, n + 1, dtype=float) / n


def approx_error_sq(truth: PiecewisePolynomial, oracle: PiecewisePolynomial, n: int) -> float:
    """``||truth - oracle||_n^2`` on the design grid."""
    x = design_points(n)
    d = truth(x) - oracle(x)
    return float(np.mean(d * d))


def penalty_bound(spec: OracleSpec) -> float:
    """``2 C_{k,k-l} P_l(f*) / delta^(k-l)``, the bound on ``P_k(f_{delta,k})``."""
    k, l = spec.penalty_order, spec.true_order
    if not k > l:
        raise ParameterError(f"penalty bound needs k > l, got k={k}, l={l}")
    p_l = tv_continuous(spec.truth, l).total
    if math.isinf(p_l):
        return math.inf
    C = derivative_bound(construct_kernel(k), k - l)
    return 2.0 * C * p_l / spec.bandwidth ** (k - l)


def lemma2_constant(k: int, l: int) -> float:
    """The constant ``C`` of the penalty bound, instantiated as ``2 C_{k,k-l}``."""
    if not k > l >= 1:
        raise ParameterError(f"need k > l >= 1, got k={k}, l={l}")
    return 2.0 * derivative_bound(construct_kernel(k), k - l)


def _check_misspecified(n: int, k: int, l: int):
    if n < 2:
        raise ParameterError(f"n must be >= 2, got {n}")
    if not k > l >= 1:
        raise ParameterError(f"schedule needs k > l >= 1, got k={k}, l={l}")


def delta_exponent(k: int, l: int) -> float:
    return -2.0 * k / (4.0 * k * l - 1.0)


def delta_schedule(n: int, k: int, l: int) -> float:
    """Bandwidth ``n^(-2k/(4kl-1))`` that balances approximation error and penalty."""
    _check_misspecified(n, k, l)
    return float(n) ** delta_exponent(k, l)


def lambda_n_exponent(k: int, l: int) -> float:
    return -2.0 * k * (k + l - 1) / (4.0 * k * l - 1.0)


def lambda_p_exponent(k: int) -> float:
    return (1.0 / k - 2.0) / (1.0 / k + 2.0)


def lambda_schedule(n: int, k: int, l: int, p_l: float, C: float) -> float:
    """``n^(-2k(k+l-1)/(4kl-1)) * (C * p_l)^((1/k-2)/(1/k+2))``."""
    _check_misspecified(n, k, l)
    if not p_l > 0.0 or not C > 0.0:
        raise ParameterError(f"need positive p_l and C, got p_l={p_l}, C={C}")
    return float(n) ** lambda_n_exponent(k, l) * (C * p_l) ** lambda_p_exponent(k)


def theoretical_rate(method, k: int, l: int) -> RateFormulaResult:
    """MSE exponent for penalty order ``k`` and true smoothness ``l``.

    ``correct_spec`` applies when ``k <= l``; the other two need ``k > l``.
    """
    method = RateMethod(method)
    if k < 1 or l < 1:
        raise ParameterError("orders must be >= 1")
    if method is RateMethod.CORRECT_SPEC:
        if k > l:
            raise ParameterError("correct-specification rate needs k <= l")
        return RateFormulaResult(method, -2.0 * k / (2.0 * k + 1.0))
    if not k > l:
        raise ParameterError(f"{method.value} rate needs k > l")
    if method is RateMethod.SIMON2021:
        if l == 1:
            return RateFormulaResult(method, -2.0 * k / (4.0 * k - 1.0))
        return RateFormulaResult(method, -2.0 * k / (3.0 * k - l + 1.0))
    return RateFormulaResult(method, -2.0 * k * (2.0 * l - 1.0) / (4.0 * k * l - 1.0))


def balance_terms(n: int, k: int, l: int, delta: float | None = None) -> tuple[float, float]:
    """The two sides of the MSE bound at ``delta``: approximation and penalty terms."""
    d = delta_schedule(n, k, l) if delta is None else delta
    approx = d ** (2 * l - 1)
    pen = d ** (-2.0 * (k - l) / (2 * k + 1)) * float(n) ** (-2.0 * k / (2 * k + 1))
    return approx, pen


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def lemma_sweep(truth: PiecewisePolynomial, l: int, k: int, deltas, n: int = 65536) -> dict:
    """Approximation error and measured/bounded penalty along a bandwidth sweep."""
    rows = []
    for d in deltas:
        spec = OracleSpec(truth, l, k, float(d))
        f_d = build_oracle(spec)
        rows.append(
            {
                "delta": float(d),
                "approx_error_sq": approx_error_sq(truth, f_d, n),
                "penalty": tv_continuous(f_d, k).total,
                "penalty_bound": penalty_bound(spec),
            }
        )
    ds = [r["delta"] for r in rows]
    return {
        "rows": rows,
        "approx_slope": loglog_slope(ds, [r["approx_error_sq"] for r in rows]),
        "penalty_slope": loglog_slope(ds, [r["penalty"] for r in rows]),
        "approx_target": 2 * l - 1,
        "penalty_target": -(k - l),
        "bound_holds": all(r["penalty"] <= r["penalty_bound"] for r in rows),
    }
