"""Compactly supported higher-order kernels and exact convolution with them.

The order-k kernel is ``(1 - u^2)^k * sum_m a_m u^(2m)`` on ``[-1, 1]`` with
``ceil(k/2)`` even coefficients fixed by the moment conditions.  The
``(1 - u^2)^k`` factor makes every derivative below order k vanish at the
support edges, so convolving a piecewise polynomial with it leaves no jumps in
those derivatives at ``d +- delta``.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ParameterError
from .pwpoly import PiecewisePolynomial, Polynomial, _merge_points, integrate_abs, real_roots

MAX_ORDER = 8


def bump_moments(q: int, m_max: int) -> list[float]:
    """``I(q, m) = ∫_{-1}^{1} (1-u^2)^q u^(2m) du`` for ``m = 0..m_max``.

    Uses ``I(q, m) = I(q-1, m) - I(q-1, m+1)`` from ``I(0, m) = 2/(2m+1)``.
    """
    row = [2.0 / (2 * m + 1) for m in range(m_max + q + 1)]
    for _ in range(q):
        row = [row[m] - row[m + 1] for m in range(len(row) - 1)]
    return row[: m_max + 1]


def _exact_bump_moments(q: int, m_max: int) -> list[Fraction]:
    row = [Fraction(2, 2 * m + 1) for m in range(m_max + q + 1)]
    for _ in range(q):
        row = [row[m] - row[m + 1] for m in range(len(row) - 1)]
    return row[: m_max + 1]


def _solve_exact(A, b) -> list[Fraction]:
    # Gauss-Jordan over the rationals; the Hankel moment matrix is positive definite
    n = len(b)
    M = [list(row) + [b[i]] for i, row in enumerate(A)]
    for c in range(n):
        p = next(r for r in range(c, n) if M[r][c] != 0)
        M[c], M[p] = M[p], M[c]
        for r in range(n):
            if r != c and M[r][c] != 0:
                f = M[r][c] / M[c][c]
                M[r] = [x - f * y for x, y in zip(M[r], M[c])]
    return [M[i][n] / M[i][i] for i in range(n)]


@dataclass(frozen=True)
class HigherOrderKernel:
    order: int
    smoothness_exponent: int
    poly: Polynomial
    moments: tuple[float, ...] = field(default=())
    deriv_bounds: tuple[float, ...] = field(default=())

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        out = np.where(np.abs(u) <= 1.0, self.poly(u), 0.0)
        return float(out) if out.ndim == 0 else out

    @property
    def abs_moment(self) -> float:
        """``∫ |u|^k H_k(u) du``; a diagnostic only."""
        k = self.order
        half = (Polynomial.monomial(k) * self.poly).antideriv()
        return 2.0 * float(half(1.0) - half(0.0))

    @property
    def l1_norm(self) -> float:
        return integrate_abs(self.poly, -1.0, 1.0)


@lru_cache(maxsize=None)
def construct_kernel(k: int) -> HigherOrderKernel:
    """Order-``k`` kernel on ``[-1, 1]`` for ``1 <= k <= 8``.

    ``∫ H = 1`` and ``∫ u^j H = 0`` for ``1 <= j < k``; odd moments vanish
    by symmetry, the ``ceil(k/2)`` even ones are solved for.
    """
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= MAX_ORDER:
        raise ParameterError(f"kernel order must be an integer in [1, {MAX_ORDER}], got {k!r}")
    k = int(k)
    q = k
    M = (k + 1) // 2
    # the moment system is rational, so solve it and expand the product exactly
    I = _exact_bump_moments(q, 2 * M - 2)
    a = _solve_exact([[I[j + m] for m in range(M)] for j in range(M)], [Fraction(int(j == 0)) for j in range(M)])
    coeffs = [Fraction(0)] * (2 * q + 2 * M - 1)
    for i in range(q + 1):
        for m in range(M):
            coeffs[2 * (i + m)] += (-1) ** i * math.comb(q, i) * a[m]
    poly = Polynomial([float(c) for c in coeffs])
    H = HigherOrderKernel(k, q, poly)
    moments = tuple(kernel_moment(H, j) for j in range(k + 1))
    bounds = tuple(derivative_bound(H, l) for l in range(k))
    return HigherOrderKernel(k, q, poly, moments, bounds)


def _unit_integral(p: Polynomial, j: int) -> float:
    # ∫_{-1}^{1} u^j p(u) du with a correctly rounded sum over the even powers
    return math.fsum(2.0 * c / (i + j + 1) for i, c in enumerate(p.coeffs) if (i + j) % 2 == 0)


def kernel_moment(H: HigherOrderKernel, j: int) -> float:
    """``∫_{-1}^{1} u^j H(u) du`` by exact polynomial integration."""
    if j < 0:
        raise ParameterError("moment index must be nonnegative")
    return _unit_integral(H.poly, j)


def derivative_bound(H: HigherOrderKernel, l: int) -> float:
    """``sup_{[-1,1]} |H^(l)|`` from critical points and the two endpoints."""
    if not 0 <= l <= H.order - 1:
        raise ParameterError(f"derivative order must be in [0, {H.order - 1}], got {l}")
    D = H.poly.deriv(l)
    pts = [-1.0, 1.0]
    if D.degree >= 1:
        pts += real_roots(D.deriv(), -1.0, 1.0)
    return float(max(abs(D(u)) for u in pts))


@dataclass(frozen=True)
class ScaledKernel:
    """``H_delta(t) = H(t / delta) / delta`` supported on ``[-delta, delta]``."""

    base: HigherOrderKernel
    bandwidth: float

    def __post_init__(self):
        if not self.bandwidth > 0.0:
            raise ParameterError(f"bandwidth must be positive, got {self.bandwidth}")

    @property
    def poly(self) -> Polynomial:
        return self.base.poly.scale(1.0 / self.bandwidth) * (1.0 / self.bandwidth)

    def __call__(self, t):
        return np.asarray(self.base(np.asarray(t, dtype=float) / self.bandwidth)) / self.bandwidth

    def mass(self) -> float:
        # substitute u = t/delta so the integral is done on O(1) coefficients
        return _unit_integral(self.base.poly, 0)


def scale_kernel(H: HigherOrderKernel, delta: float) -> ScaledKernel:
    return ScaledKernel(H, float(delta))


def _moment_antiderivs(H: HigherOrderKernel, a_max: int) -> list[Polynomial]:
    return [(Polynomial.monomial(j) * H.poly).antideriv() for j in range(a_max + 1)]


def convolve(f: PiecewisePolynomial, Hd: ScaledKernel) -> PiecewisePolynomial:
    """Exact ``(f * H_delta)(x) = ∫ f(x - t) H_delta(t) dt`` as a piecewise polynomial.

    Outside its domain ``f`` is continued by the polynomials of its first and
    last pieces.  New breakpoints sit at ``d +- delta`` for every breakpoint
    ``d`` of ``f`` (clipped to the domain).

    Everything is computed in the scaled variables ``u = t/delta`` and
    ``v = (x - s)/delta`` (``s`` the output cell's left end), where all
    quantities are O(1), then mapped back to the local variable ``x - s``.
    """
    if not isinstance(Hd, ScaledKernel):
        raise ParameterError("convolve needs a ScaledKernel")
    delta = Hd.bandwidth
    H = Hd.base
    lo, hi = f.domain
    src_lo = [-math.inf] + list(f.breakpoints)
    src_hi = list(f.breakpoints) + [math.inf]
    origins = f.lefts

    cand = [b + s * delta for b in f.breakpoints for s in (-1.0, 1.0)]
    bps = [b for b in _merge_points(cand) if lo < b < hi]
    lefts = [lo] + bps
    rights = bps + [hi]

    G = _moment_antiderivs(H, f.max_degree())
    pieces = []
    for s, e in zip(lefts, rights):
        xm = 0.5 * (s + e)
        acc = Polynomial()
        for i, p in enumerate(f.pieces):
            if p.is_zero:
                continue
            # u-interval of kernel mass that lands on source piece i
            if not (xm - src_hi[i]) / delta < 1.0 or not (xm - src_lo[i]) / delta > -1.0:
                continue
            upper_lin = (xm - src_lo[i]) / delta < 1.0
            lower_lin = (xm - src_hi[i]) / delta > -1.0
            q = p.shift(s - origins[i])
            for a, qa in enumerate(q.coeffs):
                if qa == 0.0:
                    continue
                ca = qa * delta**a
                for j in range(a + 1):
                    if upper_lin:
                        up = G[j].shift((s - src_lo[i]) / delta)
                    else:
                        up = Polynomial.constant(G[j](1.0))
                    if lower_lin:
                        dn = G[j].shift((s - src_hi[i]) / delta)
                    else:
                        dn = Polynomial.constant(G[j](-1.0))
                    coef = ca * math.comb(a, j) * (-1.0) ** j
                    acc = acc + Polynomial.monomial(a - j, coef) * (up - dn)
        pieces.append(acc.scale(1.0 / delta))
    return PiecewisePolynomial((lo, hi), tuple(bps), tuple(pieces))
