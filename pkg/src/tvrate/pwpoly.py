"""Piecewise polynomials on a closed interval.

Each piece is stored in the *local* variable ``x - left``, where ``left`` is the
left end of its cell (the domain's lower end for the first cell).  Keeping
pieces local is what keeps narrow cells well conditioned: a degree-9 piece on a
cell of width 0.01 sitting at x = 0.5 has O(1) local coefficients but
coefficients near 1e16 in the global monomial basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import DomainError, ParameterError

MERGE_TOL = 1e-12
ROOT_TOL = 1e-13


def _trim(coeffs) -> tuple[float, ...]:
    c = [float(v) for v in coeffs]
    while c and c[-1] == 0.0:
        c.pop()
    return tuple(c)


@dataclass(frozen=True)
class Polynomial:
    """Real polynomial with ascending coefficients.

    The zero polynomial has an empty coefficient tuple and ``degree == -1``
    (standing in for minus infinity).
    """

    coeffs: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _trim(self.coeffs))

    @classmethod
    def constant(cls, c: float) -> "Polynomial":
        return cls((c,))

    @classmethod
    def monomial(cls, m: int, c: float = 1.0) -> "Polynomial":
        return cls((0.0,) * m + (c,))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_zero(self) -> bool:
        return not self.coeffs

    def __call__(self, x):
        if self.is_zero:
            return np.zeros_like(np.asarray(x, dtype=float)) if np.ndim(x) else 0.0
        return npoly.polyval(x, self.coeffs)

    def __add__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(other)
        return Polynomial(npoly.polyadd(self._arr(), other._arr()))

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(tuple(-c for c in self.coeffs))

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, Polynomial):
            if self.is_zero or other.is_zero:
                return Polynomial()
            return Polynomial(npoly.polymul(self.coeffs, other.coeffs))
        return Polynomial(tuple(float(other) * c for c in self.coeffs))

    __rmul__ = __mul__

    def _arr(self):
        return np.asarray(self.coeffs if self.coeffs else (0.0,), dtype=float)

    def deriv(self, m: int = 1) -> "Polynomial":
        if m == 0:
            return self
        if self.degree < m:
            return Polynomial()
        return Polynomial(npoly.polyder(self.coeffs, m))

    def antideriv(self) -> "Polynomial":
        """Antiderivative vanishing at zero."""
        if self.is_zero:
            return Polynomial()
        return Polynomial(npoly.polyint(self.coeffs))

    def shift(self, h: float) -> "Polynomial":
        """Return ``q`` with ``q(t) = p(t + h)``."""
        if h == 0.0 or self.degree <= 0:
            return self
        c = self.coeffs
        d = len(c)
        out = [0.0] * d
        for i in range(d):
            if c[i] == 0.0:
                continue
            hp = 1.0
            for j in range(i, -1, -1):
                out[j] += c[i] * math.comb(i, j) * hp
                hp *= h
        return Polynomial(out)

    def scale(self, s: float) -> "Polynomial":
        """Return ``q`` with ``q(t) = p(s * t)``."""
        return Polynomial(tuple(c * s**i for i, c in enumerate(self.coeffs)))

    def compose_affine(self, a: float, b: float) -> "Polynomial":
        """Return ``q`` with ``q(t) = p(a + b*t)``."""
        return self.shift(a).scale(b)


def real_roots(p: Polynomial, a: float, b: float, tol: float = ROOT_TOL) -> list[float]:
    """Real roots of ``p`` in ``[a, b]``, sorted, each located to width ``tol``.

    The roots of ``p'`` split ``[a, b]`` into intervals on which ``p`` is
    monotone, so each holds at most one root, found by bisection.  The
    derivative roots come from the same routine, one degree lower.
    """
    if p.is_zero:
        raise ParameterError("zero polynomial has no isolated roots")
    if p.degree == 0:
        return []
    if p.degree == 1:
        r = -p.coeffs[0] / p.coeffs[1]
        return [r] if a <= r <= b else []
    crit = real_roots(p.deriv(), a, b, tol)
    knots = [a] + [c for c in crit if a < c < b] + [b]
    roots: list[float] = []
    for lo, hi in zip(knots[:-1], knots[1:]):
        flo, fhi = p(lo), p(hi)
        if flo == 0.0:
            roots.append(lo)
            continue
        if fhi == 0.0 or flo * fhi > 0.0:
            continue
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            fm = p(mid)
            if fm == 0.0:
                lo = hi = mid
                break
            if (fm > 0.0) == (flo > 0.0):
                lo, flo = mid, fm
            else:
                hi = mid
        roots.append(0.5 * (lo + hi))
    if p(b) == 0.0:
        roots.append(b)
    out: list[float] = []
    for r in sorted(roots):
        if not out or r - out[-1] > tol:
            out.append(r)
    return out


def integrate_abs(p: Polynomial, a: float, b: float) -> float:
    """Exact ``∫_a^b |p(t)| dt`` up to root-isolation tolerance."""
    if not a < b:
        raise ParameterError(f"need a < b, got a={a}, b={b}")
    if p.is_zero:
        return 0.0
    P = p.antideriv()
    pts = [a] + [r for r in real_roots(p, a, b) if a < r < b] + [b]
    return float(sum(abs(P(hi) - P(lo)) for lo, hi in zip(pts[:-1], pts[1:])))


@dataclass(frozen=True)
class TruncatedPowerTerm:
    """``weight * (x - knot)**degree * 1(x >= knot)``."""

    knot: float
    degree: int
    weight: float = 1.0

    def __post_init__(self):
        if self.degree < 0:
            raise ParameterError("truncated power degree must be >= 0")


def _merge_points(points: Iterable[float], tol: float = MERGE_TOL) -> list[float]:
    out: list[float] = []
    for p in sorted(points):
        if not out or p - out[-1] > tol:
            out.append(float(p))
    return out


@dataclass(frozen=True)
class PiecewisePolynomial:
    """Piecewise polynomial on ``domain`` with right-continuous cells.

    ``pieces[i]`` is a polynomial in ``x - lefts[i]``.
    """

    domain: tuple[float, float]
    breakpoints: tuple[float, ...]
    pieces: tuple[Polynomial, ...]

    def __post_init__(self):
        lo, hi = (float(v) for v in self.domain)
        if not lo < hi:
            raise DomainError(f"empty domain {self.domain}")
        bps = tuple(float(b) for b in self.breakpoints)
        if any(not lo < b < hi for b in bps):
            raise DomainError("breakpoints must lie strictly inside the domain")
        if any(b2 <= b1 for b1, b2 in zip(bps[:-1], bps[1:])):
            raise ParameterError("breakpoints must be strictly increasing")
        if len(self.pieces) != len(bps) + 1:
            raise ParameterError("need exactly one piece per cell")
        object.__setattr__(self, "domain", (lo, hi))
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "pieces", tuple(self.pieces))

    # construction helpers

    @classmethod
    def from_global(cls, domain, breakpoints, pieces: Sequence[Polynomial]):
        """Build from pieces written in the global variable ``x``."""
        lefts = (float(domain[0]),) + tuple(float(b) for b in breakpoints)
        local = [p.shift(left) for p, left in zip(pieces, lefts)]
        return cls(tuple(domain), tuple(breakpoints), tuple(local))

    @classmethod
    def polynomial(cls, domain, p: Polynomial) -> "PiecewisePolynomial":
        return cls.from_global(domain, (), (p,))

    @classmethod
    def zero(cls, domain) -> "PiecewisePolynomial":
        return cls(tuple(domain), (), (Polynomial(),))

    # geometry

    @property
    def lefts(self) -> tuple[float, ...]:
        return (self.domain[0],) + self.breakpoints

    @property
    def rights(self) -> tuple[float, ...]:
        return self.breakpoints + (self.domain[1],)

    @property
    def n_pieces(self) -> int:
        return len(self.pieces)

    def cells(self):
        return list(zip(self.lefts, self.rights))

    def cell_index(self, x):
        return np.searchsorted(np.asarray(self.breakpoints), x, side="right")

    def global_piece(self, i: int) -> Polynomial:
        return self.pieces[i].shift(-self.lefts[i])

    def piece_at(self, i: int, origin: float) -> Polynomial:
        """Piece ``i`` re-expressed in the variable ``x - origin``."""
        return self.pieces[i].shift(origin - self.lefts[i])

    # evaluation

    def __call__(self, x, extend: bool = False):
        xa = np.asarray(x, dtype=float)
        if not extend and xa.size and (xa.min() < self.domain[0] or xa.max() > self.domain[1]):
            raise DomainError(f"x outside domain {self.domain}")
        idx = self.cell_index(xa)
        if xa.ndim == 0:
            i = int(idx)
            return float(self.pieces[i](float(xa) - self.lefts[i]))
        out = np.empty_like(xa)
        lefts = self.lefts
        for i in np.unique(idx):
            m = idx == i
            out[m] = self.pieces[i](xa[m] - lefts[i])
        return out

    def one_sided(self, i: int, side: str, order: int = 0) -> float:
        """Limit of the ``order``-th derivative at breakpoint ``i`` from one side."""
        if side == "left":
            p = self.pieces[i].deriv(order)
            return float(p(self.breakpoints[i] - self.lefts[i]))
        return float(self.pieces[i + 1].deriv(order)(0.0))

    def integral(self, a: float | None = None, b: float | None = None) -> float:
        """Exact integral over ``[a, b]`` (default: whole domain)."""
        lo, hi = self.domain
        a = lo if a is None else a
        b = hi if b is None else b
        if a < lo or b > hi:
            raise DomainError("integration limits outside domain")
        total = 0.0
        for i, (left, right) in enumerate(self.cells()):
            s, e = max(a, left), min(b, right)
            if e > s:
                P = self.pieces[i].antideriv()
                total += P(e - left) - P(s - left)
        return float(total)

    def __mul__(self, c: float) -> "PiecewisePolynomial":
        return PiecewisePolynomial(self.domain, self.breakpoints, tuple(p * c for p in self.pieces))

    __rmul__ = __mul__

    def __add__(self, other: "PiecewisePolynomial") -> "PiecewisePolynomial":
        return linear_combine([(1.0, self), (1.0, other)])

    def __sub__(self, other: "PiecewisePolynomial") -> "PiecewisePolynomial":
        return linear_combine([(1.0, self), (-1.0, other)])

    def max_degree(self) -> int:
        return max(p.degree for p in self.pieces)

    def simplify(self, tol: float = 0.0) -> "PiecewisePolynomial":
        """Drop breakpoints whose neighbouring pieces coincide (coefficientwise within ``tol``)."""
        bps: list[float] = []
        pieces = [self.pieces[0]]
        left = self.domain[0]
        for i, b in enumerate(self.breakpoints):
            nxt = self.pieces[i + 1].shift(left - b)
            diff = pieces[-1] - nxt
            if all(abs(c) <= tol for c in diff.coeffs):
                continue
            bps.append(b)
            pieces.append(self.pieces[i + 1])
            left = b
        return PiecewisePolynomial(self.domain, tuple(bps), tuple(pieces))


def evaluate(f: PiecewisePolynomial, x: float) -> float:
    """Value of ``f`` at ``x``; breakpoints take the right piece's value."""
    return f(float(x))


def derivative(f: PiecewisePolynomial, m: int = 1) -> PiecewisePolynomial:
    """Piecewise ``m``-th derivative on the same breakpoints (jumps ignored)."""
    if m < 0:
        raise ParameterError("derivative order must be nonnegative")
    return PiecewisePolynomial(f.domain, f.breakpoints, tuple(p.deriv(m) for p in f.pieces))


def from_truncated_powers(domain, base: Polynomial, terms: Sequence[TruncatedPowerTerm]) -> PiecewisePolynomial:
    """``base(x) + sum_j w_j (x - d_j)^m_j 1(x >= d_j)`` as an explicit piecewise polynomial."""
    lo, hi = float(domain[0]), float(domain[1])
    for t in terms:
        if not lo < t.knot < hi:
            raise DomainError(f"knot {t.knot} not inside domain ({lo}, {hi})")
    bps = _merge_points(t.knot for t in terms)
    lefts = [lo] + bps
    pieces = []
    for left in lefts:
        p = base.shift(left)
        for t in terms:
            # the merged knot equals the smallest knot of its cluster
            if t.knot <= left + MERGE_TOL:
                p = p + Polynomial.monomial(t.degree, t.weight).shift(left - t.knot)
        pieces.append(p)
    return PiecewisePolynomial((lo, hi), tuple(bps), tuple(pieces))


def linear_combine(fs: Sequence[tuple[float, PiecewisePolynomial]], domain=None) -> PiecewisePolynomial:
    """Pointwise ``sum_i w_i f_i`` on the union of breakpoints.

    Breakpoints within ``MERGE_TOL`` of each other are merged; the sliver
    between them takes the piece from the right.
    """
    fs = list(fs)
    if not fs:
        if domain is None:
            raise ParameterError("domain required for an empty combination")
        return PiecewisePolynomial.zero(domain)
    dom = fs[0][1].domain if domain is None else (float(domain[0]), float(domain[1]))
    for _, f in fs:
        if f.domain != dom:
            raise DomainError(f"domain mismatch: {f.domain} vs {dom}")
    bps = _merge_points(b for _, f in fs for b in f.breakpoints)
    lefts = [dom[0]] + bps
    rights = bps + [dom[1]]
    pieces = []
    for left, right in zip(lefts, rights):
        probe = 0.5 * (left + right)
        acc = Polynomial()
        for w, f in fs:
            i = int(f.cell_index(probe))
            acc = acc + f.piece_at(i, left) * w
        pieces.append(acc)
    return PiecewisePolynomial(dom, tuple(bps), tuple(pieces))
