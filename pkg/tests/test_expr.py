import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from drifteig.expr import (Binary, Const, DomainError, ExprSyntaxError, Unary,
                           UnknownIdentifierError, Var, evaluate, grad, parse, to_source)

H = "x2^2/2 + x1^4/4 - x1^2/2"


def test_precedence_and_functions():
    assert evaluate(parse("x1^2 + sin(x2)"), (2, 0)) == 4.0
    assert evaluate(parse("-x1^2"), (3, 0)) == -9.0
    assert evaluate(parse("2*3^2"), (0, 0)) == 18.0
    assert evaluate(parse("1 - 2 - 3"), (0, 0)) == -4.0
    assert evaluate(parse("8 / 4 / 2"), (0, 0)) == 1.0


def test_double_well_value_and_critical_point():
    e = parse(H)
    assert evaluate(e, (1, 0)) == pytest.approx(-0.25, abs=1e-15)
    assert grad(e, (1, 0)) == (0.0, 0.0)


def test_constants_and_aliases():
    assert evaluate(parse("3.5"), (9, -4)) == 3.5
    assert evaluate(parse("exp(0)*x1"), (7, 1)) == 7.0
    assert evaluate(parse("x + y"), (1, 2)) == 3.0
    assert parse("x*y") == parse("x1*x2")


def test_syntax_error_offset():
    with pytest.raises(ExprSyntaxError) as err:
        parse("x1 +")
    assert err.value.offset == 4


@pytest.mark.parametrize("src", ["", "   ", "(x1", "x1 x2", "sin x1", "2 +* 3"])
def test_malformed(src):
    with pytest.raises(ExprSyntaxError):
        parse(src)


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifierError):
        parse("z + 1")
    with pytest.raises(UnknownIdentifierError):
        parse("log(x1)")


def test_domain_errors():
    with pytest.raises(DomainError):
        evaluate(parse("ln(x1)"), (-1, 0))
    with pytest.raises(DomainError):
        evaluate(parse("sqrt(x1)"), (-1, 0))
    with pytest.raises(DomainError):
        evaluate(parse("x1^0.5"), (-1, 0))
    with pytest.raises(DomainError):
        grad(parse("ln(x1)"), (-1, 0))
    # compiled vectorized form reports nan rather than raising
    out = parse("ln(x1)").array_fn(np.array([-1.0, 1.0]), np.zeros(2))
    assert math.isnan(out[0]) and out[1] == 0.0


def test_grad_polynomial():
    assert grad(parse("x1^2+x2"), (3, 5)) == (6.0, 1.0)


def test_compiled_matches_tree():
    e = parse("tanh(x1)*cos(x2) + abs(x1 - x2)^3 / (1 + x2^2)")
    for p in [(0.3, -1.2), (2.0, 0.5), (-1.1, -0.4)]:
        assert e(*p) == pytest.approx(evaluate(e, p), rel=1e-14)
        v, g1, g2 = e.scalar_grad_fn(*p)
        assert (g1, g2) == pytest.approx(grad(e, p), rel=1e-12)


# --------------------------------------------------------------------------- #
# random smooth expressions
# --------------------------------------------------------------------------- #

leaves = st.one_of(st.sampled_from([Var("x1"), Var("x2")]),
                   st.floats(-3, 3, allow_nan=False).map(lambda v: Const(round(v, 3))))


def _extend(children):
    return st.one_of(
        st.tuples(st.sampled_from(["+", "-", "*"]), children, children).map(
            lambda t: Binary(t[0], t[1], t[2])),
        st.tuples(st.sampled_from(["sin", "cos", "tanh", "neg"]), children).map(
            lambda t: Unary(t[0], t[1])),
        st.tuples(children, st.integers(2, 3)).map(lambda t: Binary("^", t[0], Const(t[1]))),
        children.map(lambda e: Unary("exp", Unary("sin", e))),
        children.map(lambda e: Binary("/", e, Binary("+", Const(2.0), Unary("cos", e)))),
    )


smooth = st.recursive(leaves, _extend, max_leaves=8)
points = st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))


@settings(max_examples=150, deadline=None)
@given(smooth, points)
def test_grad_matches_central_differences(e, p):
    h = 1e-5
    f = lambda a, b: evaluate(e, (a, b))
    v = f(*p)
    assume(abs(v) < 1e3)
    fd1 = (f(p[0] + h, p[1]) - f(p[0] - h, p[1])) / (2 * h)
    fd2 = (f(p[0], p[1] + h) - f(p[0], p[1] - h)) / (2 * h)
    g1, g2 = grad(e, p)
    assert abs(g1 - fd1) <= 1e-6 * (1 + abs(g1))
    assert abs(g2 - fd2) <= 1e-6 * (1 + abs(g2))


@settings(max_examples=100, deadline=None)
@given(smooth)
def test_print_parse_round_trip(e):
    again = parse(to_source(e))
    rng = np.random.default_rng(0)
    for p in rng.uniform(-1.5, 1.5, size=(100, 2)):
        assert evaluate(again, p) == evaluate(e, p)


@given(smooth, points)
@settings(deadline=None)
def test_evaluation_is_pure(e, p):
    assert evaluate(e, p) == evaluate(e, p)
    assert e(*p) == e(*p)
