import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tvrate.errors import ParameterError
from tvrate.experiments import make_truth
from tvrate.kernel import construct_kernel
from tvrate.oracle import (
    OracleSpec,
    RateFormulaResult,
    RateMethod,
    approx_error_sq,
    balance_terms,
    build_oracle,
    delta_schedule,
    design_points,
    lambda_schedule,
    lemma2_constant,
    lemma_sweep,
    loglog_slope,
    penalty_bound,
    theoretical_rate,
)
from tvrate.pwpoly import PiecewisePolynomial, Polynomial
from tvrate.tv import tv_continuous

UNIT = (0.0, 1.0)
DELTAS = (0.2, 0.1, 0.05, 0.025, 0.0125)


def grid_sup(p, l, m=400001):
    u = np.linspace(-1, 1, m)
    return float(np.max(np.abs(p.deriv(l)(u))))


def test_step_oracle_is_exact_outside_window():
    truth, _ = make_truth("step3")
    f = build_oracle(OracleSpec(truth, 1, 2, 0.1))
    x = np.linspace(0, 1, 1001)
    out = np.abs(x - 0.5) > 0.1 + 1e-12
    assert np.allclose(f(x[out]), truth(x[out]), atol=1e-12)
    inside = f(np.linspace(0.41, 0.59, 50))
    assert np.all(np.diff(inside) > 0)


def test_linear_truth_is_reproduced():
    truth = PiecewisePolynomial.polynomial(UNIT, Polynomial([0.7, -1.3]))
    for d in (0.03, 0.1, 0.2):
        f = build_oracle(OracleSpec(truth, 1, 2, d))
        x = np.linspace(d, 1 - d, 500)
        assert np.max(np.abs(f(x) - truth(x))) <= 1e-12


def test_ramp_oracle_has_finite_third_order_variation():
    truth, _ = make_truth("ramp3")
    f = build_oracle(OracleSpec(truth, 2, 3, 0.05))
    assert tv_continuous(f, 3).finite


def test_oracle_spec_validation():
    truth, _ = make_truth("step3")
    with pytest.raises(ParameterError):
        OracleSpec(truth, 1, 2, 0.0)
    with pytest.raises(ParameterError):
        OracleSpec(truth, 0, 2, 0.1)


def test_design_points():
    assert design_points(4).tolist() == [0.25, 0.5, 0.75, 1.0]
    with pytest.raises(ParameterError):
        design_points(0)


def test_approx_error_zero_for_identical_functions():
    truth, _ = make_truth("ramp3")
    assert approx_error_sq(truth, truth, 1000) == 0.0


def test_approx_error_support_bound():
    truth, _ = make_truth("step3")
    for d in (0.2, 0.1, 0.05):
        f = build_oracle(OracleSpec(truth, 1, 2, d))
        x = design_points(4096)
        window = np.mean(np.abs(x - 0.5) <= d)
        sup = float(np.max(np.abs(truth(x) - f(x))))
        assert approx_error_sq(truth, f, 4096) <= window * sup**2 + 1e-15
        assert sup <= 3.0 * construct_kernel(2).l1_norm + 1e-12


def test_approx_error_against_direct_sum():
    truth, _ = make_truth("ramp3")
    f = build_oracle(OracleSpec(truth, 2, 3, 0.1))
    n = 777
    ref = math.fsum((truth((i + 1) / n) - f((i + 1) / n)) ** 2 for i in range(n)) / n
    assert approx_error_sq(truth, f, n) == pytest.approx(ref, rel=1e-12)


def test_penalty_bound_plug_in():
    truth, _ = make_truth("ramp3")
    c31 = grid_sup(construct_kernel(3).poly, 1)
    assert penalty_bound(OracleSpec(truth, 2, 3, 0.1)) == pytest.approx(60.0 * c31, rel=1e-8)
    assert lemma2_constant(3, 2) == pytest.approx(2 * c31, rel=1e-8)


def test_penalty_bound_halving():
    truth, _ = make_truth("step3")
    a = penalty_bound(OracleSpec(truth, 1, 3, 0.1))
    b = penalty_bound(OracleSpec(truth, 1, 3, 0.05))
    assert b == pytest.approx(4.0 * a, rel=1e-14)


def test_penalty_bound_requires_misspecification():
    truth, _ = make_truth("ramp3")
    with pytest.raises(ParameterError):
        penalty_bound(OracleSpec(truth, 2, 2, 0.1))


def test_penalty_bound_infinite_truth():
    truth, _ = make_truth("step3")
    assert math.isinf(penalty_bound(OracleSpec(truth, 2, 3, 0.1)))


def test_delta_schedule_values():
    assert math.log(delta_schedule(1000, 3, 2)) / math.log(1000) == pytest.approx(-6 / 23, abs=1e-14)
    assert delta_schedule(10**4, 2, 1) == pytest.approx(10 ** (-16 / 7), rel=1e-14)
    assert delta_schedule(10**4, 2, 1) == pytest.approx(5.18e-3, rel=1e-3)
    with pytest.raises(ParameterError):
        delta_schedule(1, 2, 1)
    with pytest.raises(ParameterError):
        delta_schedule(100, 2, 2)


def test_lambda_schedule_exponents():
    n1, n2 = 1000.0, 8000.0
    r = lambda_schedule(n2, 3, 2, 3.0, 1.0) / lambda_schedule(n1, 3, 2, 3.0, 1.0)
    assert math.log(r) / math.log(n2 / n1) == pytest.approx(-24 / 23, abs=1e-12)
    p = lambda_schedule(500, 3, 2, 6.0, 1.0) / lambda_schedule(500, 3, 2, 3.0, 1.0)
    assert math.log(p) / math.log(2) == pytest.approx(-5 / 7, abs=1e-12)
    c = lambda_schedule(500, 3, 2, 3.0, 2.0) / lambda_schedule(500, 3, 2, 3.0, 1.0)
    assert c == pytest.approx(2 ** (-5 / 7), rel=1e-13)


@pytest.mark.parametrize("p,c", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0)])
def test_lambda_schedule_rejects_nonpositive(p, c):
    with pytest.raises(ParameterError):
        lambda_schedule(100, 3, 2, p, c)


@pytest.mark.parametrize(
    "method,k,l,expected",
    [
        ("this_paper", 3, 2, -18 / 23),
        ("simon2021", 3, 2, -0.75),
        ("this_paper", 2, 1, -4 / 7),
        ("simon2021", 2, 1, -4 / 7),
        ("this_paper", 3, 1, -6 / 11),
        ("correct_spec", 2, 2, -0.8),
    ],
)
def test_theoretical_rate_values(method, k, l, expected):
    assert theoretical_rate(method, k, l).exponent == pytest.approx(expected, abs=1e-15)


def test_theoretical_rate_regime_errors():
    with pytest.raises(ParameterError):
        theoretical_rate("correct_spec", 3, 2)
    with pytest.raises(ParameterError):
        theoretical_rate("this_paper", 2, 2)
    with pytest.raises(ValueError):
        theoretical_rate("nonsense", 3, 2)
    with pytest.raises(ParameterError):
        RateFormulaResult(RateMethod.THIS_PAPER, -1.2)


@pytest.mark.parametrize("k", range(2, 9))
def test_rates_coincide_for_jump_truths(k):
    a = theoretical_rate("this_paper", k, 1).exponent
    b = theoretical_rate("simon2021", k, 1).exponent
    assert a == pytest.approx(b, abs=1e-15)


@given(st.integers(3, 8).flatmap(lambda k: st.tuples(st.just(k), st.integers(2, k - 1))))
def test_misspecified_rate_improves(kl):
    k, l = kl
    assert abs(theoretical_rate("this_paper", k, l).exponent) > abs(theoretical_rate("simon2021", k, l).exponent)


@given(st.integers(2, 8).flatmap(lambda k: st.tuples(st.just(k), st.integers(1, k - 1))), st.integers(8, 16))
def test_schedule_balances_terms(kl, e):
    k, l = kl
    approx, pen = balance_terms(2**e, k, l)
    assert 0.25 <= approx / pen <= 4.0


def test_balance_off_schedule():
    approx, pen = balance_terms(2**12, 3, 2, delta=0.5)
    assert approx / pen > 4.0


def test_loglog_slope_exact_power():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    assert loglog_slope(x, 7 * x**-1.5) == pytest.approx(-1.5, abs=1e-12)


@pytest.mark.parametrize("name,l,k", [("step3", 1, 2), ("step3", 1, 3), ("ramp3", 2, 3)])
def test_lemma_sweep_scalings(name, l, k):
    truth, ell = make_truth(name)
    assert ell == l
    sweep = lemma_sweep(truth, l, k, DELTAS)
    assert abs(sweep["approx_slope"] - (2 * l - 1)) <= 0.15
    assert abs(sweep["penalty_slope"] + (k - l)) <= 0.05
    assert sweep["bound_holds"]
    assert sweep["approx_target"] == 2 * l - 1 and sweep["penalty_target"] == -(k - l)


def test_penalty_measured_against_independent_grid():
    # P_3 of the smoothed ramp equals the variation of its second derivative
    truth, _ = make_truth("ramp3")
    f = build_oracle(OracleSpec(truth, 2, 3, 0.1))
    x = np.linspace(0, 1, 200001)
    g = np.zeros_like(x)
    for i, (a, b) in enumerate(f.cells()):
        sel = (x >= a) & (x <= b)
        g[sel] = f.global_piece(i).deriv(2)(x[sel])
    assert tv_continuous(f, 3).total == pytest.approx(float(np.abs(np.diff(g)).sum()), rel=1e-6)
