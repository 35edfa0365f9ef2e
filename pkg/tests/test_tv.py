import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from tvrate.errors import DomainError, ParameterError
from tvrate.experiments import make_truth
from tvrate.pwpoly import PiecewisePolynomial, Polynomial, TruncatedPowerTerm, from_truncated_powers
from tvrate.tv import piecewise_constant_project, tv_continuous, tv_discrete

UNIT = (0.0, 1.0)


def step(d=0.5, h=3.0):
    return from_truncated_powers(UNIT, Polynomial(), [TruncatedPowerTerm(d, 0, h)])


def ramp(d=0.5, h=3.0):
    return from_truncated_powers(UNIT, Polynomial(), [TruncatedPowerTerm(d, 1, h)])


@st.composite
def piecewise_linear(draw, continuous=False):
    m = draw(st.integers(0, 5))
    cuts = sorted(set(draw(st.lists(st.floats(0.05, 0.95), min_size=m, max_size=m))))
    cuts = [c for i, c in enumerate(cuts) if i == 0 or c - cuts[i - 1] > 1e-3]
    val = st.floats(-3, 3, allow_nan=False, allow_subnormal=False)
    pieces = []
    for i in range(len(cuts) + 1):
        slope = draw(val)
        if continuous and pieces:
            c = cuts[i - 1]
            pieces.append(Polynomial([pieces[-1](c) - slope * c, slope]))
        else:
            pieces.append(Polynomial([draw(val), slope]))
    return PiecewisePolynomial.from_global(UNIT, cuts, pieces)


def grid_variation(f, order, m=2001):
    # brute-force sup over a fine partition; each closed cell is sampled so both one-sided limits appear
    g = np.concatenate(
        [f.global_piece(i).deriv(order)(np.linspace(a, b, m)) for i, (a, b) in enumerate(f.cells())]
    )
    return float(np.abs(np.diff(g)).sum())


def test_step_has_unit_order_variation_three():
    r = tv_continuous(step(), 1)
    assert r.total == pytest.approx(3.0)
    assert r.jump_part == pytest.approx(3.0) and r.smooth_part == 0.0


def test_ramp_has_second_order_variation_three():
    r = tv_continuous(ramp(), 2)
    assert r.total == pytest.approx(3.0)
    assert r.finite


def test_step_is_infinite_at_order_two():
    r = tv_continuous(step(), 2)
    assert math.isinf(r.total) and not r.finite
    assert r.offending_breakpoint == pytest.approx(0.5)
    assert r.offending_derivative == 0


def test_report_parts_add_up():
    f = PiecewisePolynomial.from_global(UNIT, [0.3], [Polynomial([0.0, 1.0, 2.0]), Polynomial([1.0, -1.0])])
    r = tv_continuous(f, 1)
    assert r.total == r.jump_part + r.smooth_part
    assert r.jump_part >= 0 and r.smooth_part >= 0


def test_smooth_part_is_integral_of_abs_derivative():
    f = PiecewisePolynomial.polynomial(UNIT, Polynomial([0.0, -1.0, 0.0, 4.0]))
    ref, _ = quad(lambda x: abs(-1.0 + 12.0 * x**2), 0, 1, points=[1 / math.sqrt(12)])
    assert tv_continuous(f, 1).total == pytest.approx(ref, rel=1e-12)


def test_order_zero_rejected():
    with pytest.raises(ParameterError):
        tv_continuous(step(), 0)


@pytest.mark.parametrize(
    "theta,k,expected",
    [([0, 0, 3, 3, 3], 1, 3.0), ([0, 1, 2, 3], 2, 0.0), ([0, 0, 1, 2], 2, 4.0)],
)
def test_tv_discrete_examples(theta, k, expected):
    assert tv_discrete(theta, k) == pytest.approx(expected, abs=1e-15)


def test_tv_discrete_too_short():
    with pytest.raises(ParameterError):
        tv_discrete([1.0, 2.0], 2)


@pytest.mark.parametrize("name,k", [("step3", 1), ("ramp3", 2), ("ramp3", 1)])
def test_discrete_variation_tracks_continuous(name, k):
    f, _ = make_truth(name)
    n = 4096
    x = np.arange(1, n + 1) / n
    cont = tv_continuous(f, k).total
    assert abs(tv_discrete(f(x), k) - cont) <= 0.05 * cont


def test_projection_fixes_constants():
    f = PiecewisePolynomial.polynomial(UNIT, Polynomial.constant(2.5))
    g = piecewise_constant_project(f, [0.1, 0.4, 0.8])
    assert np.allclose(g(np.linspace(0, 1, 101)), 2.5, atol=1e-15)


def test_projection_of_identity_gives_cell_means():
    f = PiecewisePolynomial.polynomial(UNIT, Polynomial([0.0, 1.0]))
    g = piecewise_constant_project(f, [0.5])
    assert g(0.2) == pytest.approx(0.25) and g(0.8) == pytest.approx(0.75)


def test_projection_of_ramp_matches_quadrature():
    f = ramp()
    edges = [0.0, 0.25, 0.5, 0.75, 1.0]
    g = piecewise_constant_project(f, edges[1:-1])
    for a, b in zip(edges[:-1], edges[1:]):
        mean = quad(lambda x: 3 * max(x - 0.5, 0.0), a, b)[0] / (b - a)
        assert g((a + b) / 2) == pytest.approx(mean, abs=1e-14)
    # exact values 0, 0, 3/8, 9/8
    assert [g(t) for t in (0.1, 0.4, 0.6, 0.9)] == pytest.approx([0, 0, 0.375, 1.125], abs=1e-14)


def test_projection_accepts_domain_endpoints():
    f = ramp()
    a = piecewise_constant_project(f, [0.0, 0.5, 1.0])
    b = piecewise_constant_project(f, [0.5])
    assert a.breakpoints == b.breakpoints
    assert a(0.7) == pytest.approx(b(0.7))


def test_projection_errors():
    with pytest.raises(ParameterError):
        piecewise_constant_project(ramp(), [])
    with pytest.raises(DomainError):
        piecewise_constant_project(ramp(), [0.5, 1.5])


@given(piecewise_linear())
def test_tv_matches_brute_force_partition(f):
    assert tv_continuous(f, 1).total == pytest.approx(grid_variation(f, 0), rel=1e-6, abs=1e-9)


@given(piecewise_linear(continuous=True))
def test_second_order_tv_matches_slope_jumps(f):
    r = tv_continuous(f, 2)
    slopes = [f.global_piece(i).deriv()(0.0) for i in range(f.n_pieces)]
    assert r.total == pytest.approx(float(np.abs(np.diff(slopes)).sum()), rel=1e-9, abs=1e-9)


@settings(max_examples=200)
@given(piecewise_linear(), st.lists(st.floats(0.01, 0.99), min_size=1, max_size=8))
def test_projection_contracts_variation(f, partition):
    g = piecewise_constant_project(f, partition)
    assert tv_continuous(g, 1).total <= tv_continuous(f, 1).total + 1e-10
    for a, b in g.cells():
        assert g.integral(a, b) == pytest.approx(f.integral(a, b), abs=1e-12)


@given(piecewise_linear(), st.one_of(st.just(0.0), st.floats(1e-3, 10), st.floats(-10, -1e-3)), st.integers(1, 3))
def test_tv_is_absolutely_homogeneous(f, c, k):
    base = tv_continuous(f, k).total
    scaled = tv_continuous(f * c, k).total
    if math.isinf(base):
        assert math.isinf(scaled) or c == 0.0
    else:
        assert scaled == pytest.approx(abs(c) * base, rel=1e-10, abs=1e-10)


@given(st.lists(st.floats(-5, 5, allow_nan=False, allow_subnormal=False), min_size=1, max_size=6), st.integers(1, 7))
def test_low_degree_polynomials_have_zero_variation(cs, extra):
    p = Polynomial(cs)
    k = max(p.degree, 0) + extra
    assert tv_continuous(PiecewisePolynomial.polynomial(UNIT, p), k).total == 0.0
