import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homowave.expr import parse_expression, variables_for_dimension
from homowave.mean_value import (
    ExtrapolationError, LimitAtInfinity, NotTrigPolynomialError, Periodic, QuasiPeriodic,
    TrigPolynomial, algebra_from_dict, mean_limit_at_infinity, mean_periodic, mean_product,
    mean_quasiperiodic, trig_expand,
)

TWO_PI = 2 * np.pi


def test_periodic_examples():
    assert abs(mean_periodic(lambda y: np.sin(TWO_PI * y), 64).value) <= 1e-12
    assert mean_periodic(lambda y: 3.5 + 0 * y).value == 3.5
    r = mean_periodic(lambda y: (2 + np.sin(TWO_PI * y)) ** 2)
    assert r.value == pytest.approx(4.5, abs=1e-12)
    assert r.method == "quadrature"


def test_periodic_2d():
    r = mean_periodic(lambda a, b: (2 + np.sin(TWO_PI * a)) * (1 + np.cos(TWO_PI * b) ** 2), k=2)
    assert r.value == pytest.approx(3.0, abs=1e-12)


def test_quadrature_order_two():
    u = lambda y: np.exp(np.sin(TWO_PI * y) + 0.3 * y * (1 - y))  # smooth, kink in derivative at 0
    exact = mean_periodic(u, 1 << 16).value
    errs = [abs(mean_periodic(u, n).value - exact) for n in (16, 32, 64)]
    rates = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(rates) >= 1.9


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 1))
def test_linearity_and_translation(alpha, beta, shift):
    u = lambda y: (2 + np.sin(TWO_PI * y)) ** 2
    w = lambda y: np.cos(4 * np.pi * y) + np.exp(np.cos(TWO_PI * y))
    mu, mw = mean_periodic(u), mean_periodic(w)
    comb = mean_periodic(lambda y: alpha * u(y) + beta * w(y))
    tol = abs(alpha) * mu.estimated_error + abs(beta) * mw.estimated_error + 1e-12
    assert abs(comb.value - (alpha * mu.value + beta * mw.value)) <= tol
    shifted = mean_periodic(lambda y: w(y + shift))
    assert abs(shifted.value - mw.value) <= mw.estimated_error + 1e-10


def test_positivity():
    r = mean_periodic(lambda y: np.sin(TWO_PI * y) ** 8)
    assert r.value >= -r.estimated_error


def test_quasiperiodic_examples():
    yv = {"y1"}
    assert mean_quasiperiodic(parse_expression("3 + cos(y1) + cos(sqrt(2)*y1)", yv)).value == pytest.approx(3.0)
    prod = parse_expression("cos(y1) * cos(sqrt(2)*y1)", yv)
    tp = trig_expand(prod, ["y1"])
    freqs = sorted(abs(f[0]) for f in tp.frequencies)
    assert freqs == pytest.approx([math.sqrt(2) - 1, math.sqrt(2) + 1])
    assert mean_quasiperiodic(prod).value == pytest.approx(0.0, abs=1e-15)
    assert mean_quasiperiodic(parse_expression("cos(y1)^2", yv)).value == pytest.approx(0.5)


def test_quasiperiodic_rejects_non_polynomial():
    with pytest.raises(NotTrigPolynomialError):
        mean_quasiperiodic(parse_expression("exp(cos(y1))", {"y1"}))
    with pytest.raises(NotTrigPolynomialError):
        mean_quasiperiodic(lambda y: np.cos(y))


def test_trig_polynomial_evaluates():
    tp = TrigPolynomial(1.0, (((2.0,), 0.5, -0.25),))
    y = np.linspace(0, 3, 7)
    assert np.allclose(tp(y), 1 + 0.5 * np.cos(2 * y) - 0.25 * np.sin(2 * y))
    assert mean_quasiperiodic(tp).value == 1.0


def test_limit_examples():
    tag = LimitAtInfinity()
    assert mean_limit_at_infinity(lambda t: np.tanh(t) ** 2, tag).value == pytest.approx(1.0, abs=1e-6)
    assert mean_limit_at_infinity(lambda t: np.exp(-t**2), tag).value == pytest.approx(0.0, abs=1e-6)
    r = mean_limit_at_infinity(lambda t: 2 + 1 / (1 + t**2), tag)
    assert r.value == pytest.approx(2.0, abs=1e-6)
    assert r.estimated_error <= 1e-6
    assert mean_limit_at_infinity(lambda t: t, LimitAtInfinity(limit=4.0)).value == 4.0


def test_limit_rejects_oscillation():
    with pytest.raises(ExtrapolationError):
        mean_limit_at_infinity(lambda t: np.sin(t), LimitAtInfinity())


def test_product_examples():
    nl = variables_for_dimension(1, space=False)
    per = Periodic()
    e = parse_expression("sin(2*pi*tau) * (1 + y1)", nl)
    assert abs(mean_product(e, per, per).value) <= 1e-12
    e = parse_expression("(2 + sin(2*pi*y1)) * tanh(tau)^2", nl)
    assert mean_product(e, per, LimitAtInfinity()).value == pytest.approx(2.0, abs=1e-6)
    e = parse_expression("(2 + sin(2*pi*y1))^2", nl)
    assert mean_product(e, per, per).value == pytest.approx(4.5, abs=1e-12)


def test_product_with_binding_and_quasi_y():
    nl = variables_for_dimension(1, space=False)
    e = parse_expression("(2 + sin(2*pi*y1)) * v + cos(2*pi*tau)", nl)
    assert mean_product(e, Periodic(), Periodic(), bindings={"v": 1.5}).value == pytest.approx(3.0, abs=1e-12)
    e = parse_expression("(1 + cos(y1) + cos(sqrt(2)*y1))^2", nl)
    # 1 + 1/2 + 1/2
    assert mean_product(e, QuasiPeriodic(), Periodic()).value == pytest.approx(2.0, abs=1e-12)


def test_product_2d():
    nl = variables_for_dimension(2, space=False)
    e = parse_expression("(2 + sin(2*pi*y1)) * (3 + cos(2*pi*y2)) * (1 + sin(2*pi*tau)^2)", nl)
    assert mean_product(e, Periodic(), Periodic(), d=2).value == pytest.approx(9.0, abs=1e-10)


def test_algebra_from_dict():
    assert algebra_from_dict(None) == Periodic()
    assert algebra_from_dict({"kind": "limit_at_infinity", "limit": 2}).limit == 2.0
    assert algebra_from_dict({"kind": "limit"}).extrapolate
    assert isinstance(algebra_from_dict({"kind": "quasiperiodic", "frequencies": [[1.0]]}), QuasiPeriodic)
    with pytest.raises(ValueError):
        algebra_from_dict({"kind": "fractal"})
