"""kth-order total variation: exact for piecewise polynomials, and its grid version."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParameterError
from .pwpoly import PiecewisePolynomial, Polynomial, integrate_abs

JUMP_ABS_TOL = 1e-12
JUMP_REL_TOL = 1e-9


@dataclass(frozen=True)
class TVReport:
    order: int
    jump_part: float
    smooth_part: float
    total: float
    # set when a derivative below order k-1 jumps, making the variation infinite
    offending_breakpoint: float | None = None
    offending_derivative: int | None = None

    @property
    def finite(self) -> bool:
        return math.isfinite(self.total)


def _magnitude(p: Polynomial, width: float) -> float:
    # cheap bound on sup |p| over [0, width]
    return float(sum(abs(c) * width**m for m, c in enumerate(p.coeffs)))


def _jump(f: PiecewisePolynomial, i: int, order: int) -> float:
    left = f.one_sided(i, "left", order)
    right = f.one_sided(i, "right", order)
    jump = right - left
    cells = f.cells()
    scale = max(
        _magnitude(f.pieces[c].deriv(order), cells[c][1] - cells[c][0]) for c in (i, i + 1)
    )
    tol = JUMP_ABS_TOL + JUMP_REL_TOL * scale
    return 0.0 if abs(jump) <= tol else jump


def tv_continuous(f: PiecewisePolynomial, k: int) -> TVReport:
    """``P_k(f)``: jumps of ``f^(k-1)`` plus ``∫|f^(k)|`` over the pieces.

    A jump in any lower derivative ``f^(j)``, ``j < k-1``, makes the
    variation infinite; the first such breakpoint is reported.
    """
    if k < 1:
        raise ParameterError(f"order must be >= 1, got {k}")
    for i, b in enumerate(f.breakpoints):
        for j in range(k - 1):
            if _jump(f, i, j) != 0.0:
                return TVReport(k, math.inf, 0.0, math.inf, b, j)
    jump_part = float(sum(abs(_jump(f, i, k - 1)) for i in range(len(f.breakpoints))))
    smooth_part = 0.0
    for p, (left, right) in zip(f.pieces, f.cells()):
        dk = p.deriv(k)
        if not dk.is_zero:
            smooth_part += integrate_abs(dk, 0.0, right - left)
    return TVReport(k, jump_part, smooth_part, jump_part + smooth_part)


def tv_discrete(theta, k: int) -> float:
    """``n^(k-1) * sum |Δ^k θ|``, the grid analogue of ``P_k`` at spacing ``1/n``."""
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    if n <= k:
        raise ParameterError(f"need more than k={k} values, got {n}")
    return float(n ** (k - 1) * np.abs(np.diff(theta, n=k)).sum())


def piecewise_constant_project(f: PiecewisePolynomial, partition) -> PiecewisePolynomial:
    """Piecewise-constant function equal to the cell averages of ``f``.

    ``partition`` lists the cut points; the domain endpoints may be included
    or left out.  Cell integrals of the result match those of ``f`` exactly.
    """
    pts = sorted(float(p) for p in partition)
    if not pts:
        raise ParameterError("empty partition")
    lo, hi = f.domain
    if pts[0] < lo or pts[-1] > hi:
        raise DomainError("partition extends beyond the domain")
    cuts = [p for p in pts if lo < p < hi]
    cuts = [c for i, c in enumerate(cuts) if i == 0 or c > cuts[i - 1]]
    edges = [lo] + cuts + [hi]
    values = [f.integral(a, b) / (b - a) for a, b in zip(edges[:-1], edges[1:])]
    return PiecewisePolynomial((lo, hi), tuple(cuts), tuple(Polynomial.constant(v) for v in values))
