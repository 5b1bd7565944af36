import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from eulertop import expr as ex
from eulertop.expr import BinOp, Const, Coord, Func, Neg, Param, Pow


# -- parsing -----------------------------------------------------------------

def test_parse_product():
    assert ex.parse("x2*x3", 3) == BinOp("*", Coord(2), Coord(3))


def test_parse_difference_of_quotients():
    e = ex.parse("g/x1 - g/x2", 3, {"g"})
    assert e == BinOp("-", BinOp("/", Param("g"), Coord(1)), BinOp("/", Param("g"), Coord(2)))


def test_parse_error_position_at_end():
    with pytest.raises(ex.ParseError) as info:
        ex.parse("x1 +", 3)
    assert info.value.position == 5


@pytest.mark.parametrize("src, pos", [("x1 * * x2", 6), ("(x1 + x2", 9), ("x1 ^ x2", 6), ("3 $ 4", 3)])
def test_parse_error_positions(src, pos):
    with pytest.raises(ex.ParseError) as info:
        ex.parse(src, 3)
    assert info.value.position == pos


def test_unknown_identifier_and_out_of_range():
    with pytest.raises(ex.UnknownIdentifierError):
        ex.parse("h*x1", 3, {"g"})
    with pytest.raises(ex.ParseError):
        ex.parse("x4", 3)
    with pytest.raises(ex.ParseError):
        ex.parse("x0", 3)


def test_precedence_and_associativity():
    # power binds tighter than unary minus, and is right-associative
    assert ex.parse("-x1^2", 3) == Neg(Pow(Coord(1), 2))
    assert ex.evaluate(ex.parse("2^3^2", 3), (1, 1, 1)) == 512.0
    assert ex.evaluate(ex.parse("8/4/2", 3), (1, 1, 1)) == 1.0
    assert ex.evaluate(ex.parse("8-4-2", 3), (1, 1, 1)) == 2.0
    assert ex.evaluate(ex.parse("1 + 2*3", 3), (1, 1, 1)) == 7.0
    assert ex.parse("x1**2", 3) == ex.parse("x1^2", 3)


def test_negative_integer_exponent():
    e = ex.parse("x1^-2", 3)
    assert e == Pow(Coord(1), -2)
    assert ex.evaluate(e, (2, 0, 0)) == 0.25


def test_to_text_parenthesizes_children():
    assert ex.to_text(ex.parse("x2*x3", 3)) == "(x2 * x3)"
    assert ex.to_text(ex.parse("-x1", 3)) == "(-x1)"
    assert ex.to_text(ex.parse("x1^-2", 3)) == "(x1 ^ -2)"


# -- differentiation and simplification ----------------------------------------

def test_derivative_power_rule():
    d = ex.simplify(ex.differentiate(ex.parse("g/x1", 3, {"g"}), 1))
    assert ex.to_text(d) == "(-(g / (x1 ^ 2)))"
    assert ex.evaluate(d, (2.0, 1.0, 1.0), {"g": 3.0}) == -0.75


def test_derivative_of_independent_variable():
    d = ex.simplify(ex.differentiate(ex.parse("x2*x3", 3), 1))
    assert d == Const(0.0)


def test_derivative_matches_central_difference():
    e = ex.parse("1/((x1 - x2)*(x1 - x3))", 3)
    d = ex.evaluate(ex.differentiate(e, 1), (1.0, 2.0, 3.0))
    h = 1e-5
    fd = (ex.evaluate(e, (1 + h, 2.0, 3.0)) - ex.evaluate(e, (1 - h, 2.0, 3.0))) / (2 * h)
    assert d == pytest.approx(0.75, rel=1e-15)
    assert abs(d - fd) <= 1e-8 * abs(d)


def test_differentiate_rejects_bad_coordinate():
    with pytest.raises(ValueError):
        ex.differentiate(Coord(1), 0)


@pytest.mark.parametrize("src, expected", [
    ("0*x1 + x2", "x2"),
    ("2*3", "6"),
    ("x1^1", "x1"),
    ("x1^0", "1"),
    ("--x1", "x1"),
    ("x1/1", "x1"),
    ("x1 + -x2", "(x1 - x2)"),
])
def test_simplify_identities(src, expected):
    assert ex.to_text(ex.simplify(ex.parse(src, 3))) == expected


# -- evaluation ----------------------------------------------------------------

def test_evaluate_examples():
    assert ex.evaluate(ex.parse("x2*x3", 3), (1, 2, 3)) == 6.0
    assert ex.evaluate(ex.parse("g/x1 - g/x2", 3, {"g"}), (1, 2, 3), {"g": 1}) == 0.5


def test_evaluation_errors():
    with pytest.raises(ex.DivisionByZeroError):
        ex.evaluate(ex.parse("g/x1", 3, {"g"}), (0, 1, 1), {"g": 1})
    with pytest.raises(ex.DomainError):
        ex.evaluate(ex.parse("sqrt(x1)", 3), (-1, 1, 1))
    with pytest.raises(ex.DomainError):
        ex.evaluate(ex.parse("ln(x1)", 3), (0, 1, 1))
    with pytest.raises(ex.UnboundParameterError):
        ex.evaluate(ex.parse("g*x1", 3, {"g"}), (1, 1, 1))


def test_compiled_matches_tree_walker():
    srcs = ["x2*x3 - g*(x2^3 + x3^3)/(x2*x3)^2 + g^2/(x2*x3)^2", "sqrt(x1^2 + 1)*exp(-x2)",
            "sin(x1)*cos(x3) + ln(x2^2)"]
    exprs = [ex.parse(s, 3, {"g"}) for s in srcs]
    fn = ex.compile_expressions(exprs, 3, {"g": 0.7})
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = rng.uniform(0.2, 2.0, 3)
        got = fn(p)
        want = [ex.evaluate(e, p, {"g": 0.7}) for e in exprs]
        assert list(got) == want


def test_compiled_raises_like_evaluate():
    fn = ex.compile_expressions([ex.parse("1/x1", 3)], 3, {})
    with pytest.raises(ex.DivisionByZeroError):
        fn((0.0, 1.0, 1.0))


# -- properties ------------------------------------------------------------------

_leaves = st.one_of(
    st.integers(1, 3).map(Coord),
    st.just(Param("g")),
    st.integers(0, 9).map(lambda k: Const(float(k))),
    st.sampled_from([0.5, 1.25, 3.75]).map(Const),
)


def _extend(children):
    return st.one_of(
        st.builds(BinOp, st.sampled_from("+-*"), children, children),
        st.builds(BinOp, st.just("/"), children, children),
        st.builds(Neg, children),
        st.builds(Pow, children, st.integers(-3, 3)),
        st.builds(Func, st.sampled_from(["sin", "cos", "exp"]), children),
    )


expressions = st.recursive(_leaves, _extend, max_leaves=8)
points = st.lists(st.floats(0.3, 2.0), min_size=3, max_size=3)


def _value(e, p, g=0.9):
    try:
        v = ex.evaluate(e, p, {"g": g})
    except ArithmeticError:
        return None
    return v if math.isfinite(v) and abs(v) < 1e6 else None


@settings(max_examples=300, deadline=None)
@given(expressions)
def test_round_trip(e):
    text = ex.to_text(e)
    back = ex.parse(text, 3, {"g"})
    assert back == e
    s = ex.simplify(e)
    assert ex.simplify(ex.parse(ex.to_text(s), 3, {"g"})) == s


@settings(max_examples=200, deadline=None)
@given(expressions, st.integers(1, 3), points)
def test_derivative_agrees_with_central_difference(e, i, p):
    f0 = _value(e, p)
    assume(f0 is not None)
    d = _value(ex.differentiate(e, i), p)
    assume(d is not None)
    h = 1e-5
    up, dn = list(p), list(p)
    up[i - 1] += h
    dn[i - 1] -= h
    fu, fd = _value(e, up), _value(e, dn)
    assume(fu is not None and fd is not None)
    approx = (fu - fd) / (2 * h)
    # truncation O(h^2) plus the cancellation noise of the difference quotient
    noise = 1e-16 * max(abs(fu), abs(fd), 1.0) / h
    assume(noise < 1e-7 * max(1.0, abs(d)))
    assert abs(d - approx) <= 1e-6 * max(1.0, abs(d))


@settings(max_examples=300, deadline=None)
@given(expressions, points)
def test_simplify_preserves_value(e, p):
    v = _value(e, p)
    assume(v is not None)
    s = _value(ex.simplify(e), p)
    assert s is not None
    assert abs(s - v) <= 1e-15 * max(1.0, abs(v))


@settings(max_examples=200, deadline=None)
@given(expressions, points)
def test_compiled_is_bitwise_equal(e, p):
    v = _value(e, p)
    assume(v is not None)
    assert ex.compile_expressions([e], 3, {"g": 0.9})(p)[0] == v
