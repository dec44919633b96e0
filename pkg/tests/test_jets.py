import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from confgeom.jets import (
    Const,
    DomainError,
    ExprSyntaxError,
    ScalarField,
    UnknownIdentifier,
    Var,
    eval_jet,
    jet_space,
    jinv,
    parse,
    to_source,
)

# -- strategies -------------------------------------------------------------

small = st.floats(min_value=-2.0, max_value=2.0, allow_nan=False, allow_infinity=False)


@st.composite
def polynomials(draw, nvars=2, max_terms=5):
    """Random polynomials of degree <= 3 written in the expression grammar."""
    terms = []
    for _ in range(draw(st.integers(1, max_terms))):
        c = draw(st.floats(min_value=-1, max_value=1, allow_nan=False))
        powers = [draw(st.integers(0, 1)) for _ in range(nvars)]
        if sum(powers) > 3:
            powers = powers[:3]
        mono = "*".join(f"x{i + 1}^{k}" for i, k in enumerate(powers) if k) or "1"
        terms.append(f"({c!r})*{mono}")
    return "+".join(terms)


@st.composite
def expressions(draw, depth=3):
    """Random smooth expressions that stay inside the domain near the origin."""
    if depth == 0 or draw(st.booleans()):
        if draw(st.booleans()):
            return f"x{draw(st.integers(1, 2))}"
        return repr(draw(st.floats(min_value=0.1, max_value=2, allow_nan=False)))
    kind = draw(st.sampled_from(["+", "-", "*", "sin", "cos", "exp", "^"]))
    a = draw(expressions(depth=depth - 1))
    if kind in "+-*":
        b = draw(expressions(depth=depth - 1))
        return f"({a}){kind}({b})"
    if kind == "^":
        return f"({a})^{draw(st.integers(0, 3))}"
    return f"{kind}({a})"


def central_partials(f, p, h=1e-3):
    """Richardson-extrapolated first and second partials by central differences."""
    p = np.asarray(p, float)
    d = len(p)

    def first(h):
        out = np.zeros(d)
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            out[i] = (f(p + e) - f(p - e)) / (2 * h)
        return out

    def second(h):
        out = np.zeros((d, d))
        for i in range(d):
            for j in range(d):
                ei, ej = np.zeros(d), np.zeros(d)
                ei[i], ej[j] = h, h
                out[i, j] = (f(p + ei + ej) - f(p + ei - ej) - f(p - ei + ej) + f(p - ei - ej)) / (4 * h * h)
        return out

    return (4 * first(h / 2) - first(h)) / 3, (4 * second(h / 2) - second(h)) / 3


# -- parser -------------------------------------------------------------------


def test_parse_grammar_example_has_two_variables():
    e = parse("x1^2 + sin(x2)")
    assert e.variables() == {0, 1}
    assert e.evaluate([2.0, 0.0]) == pytest.approx(4.0)


def test_parse_zero_is_constant():
    e = parse("0")
    assert isinstance(e, Const) and e.value == 0.0


def test_parse_exp_product_evaluates():
    assert parse("exp(2*x1)*x2").evaluate([0.0, 3.0]) == pytest.approx(3.0)


@pytest.mark.parametrize("src,pos", [("x1 +", 4), ("x1 * * x2", 5), ("sin(x1", 6), ("2 $ 3", 2)])
def test_syntax_errors_report_position(src, pos):
    with pytest.raises(ExprSyntaxError) as info:
        parse(src)
    assert info.value.pos == pos


@pytest.mark.parametrize("src", ["y1 + 1", "tan(x1)", "x9", "x0"])
def test_unknown_identifiers(src):
    with pytest.raises(UnknownIdentifier):
        parse(src)


def test_leading_sign_and_negative_exponent():
    assert parse("-x1^2").evaluate([3.0]) == pytest.approx(-9.0)
    assert parse("x1^-2").evaluate([2.0]) == pytest.approx(0.25)


def test_precedence_and_associativity():
    assert parse("2-3-4").evaluate([]) == pytest.approx(-5.0)
    assert parse("8/4/2").evaluate([]) == pytest.approx(1.0)
    assert parse("2*3^2").evaluate([]) == pytest.approx(18.0)


@given(expressions())
def test_print_parse_round_trip_is_fixed_point(src):
    e = parse(src)
    printed = to_source(e)
    again = to_source(parse(printed))
    assert again.replace(" ", "") == printed.replace(" ", "")
    p = [0.3, -0.4]
    assert parse(printed).evaluate(p) == pytest.approx(e.evaluate(p), rel=1e-12, abs=1e-12)


# -- jets ---------------------------------------------------------------------


def test_square_jet_is_exact():
    j = eval_jet("x1^2", [2.0], 2)
    assert j.value == 4.0
    assert j.partial((1,)) == pytest.approx(4.0)
    assert j.coefficient((2,)) == pytest.approx(1.0)


def test_sine_taylor_coefficients():
    j = eval_jet("sin(x1)", [0.0], 3)
    coeffs = [j.coefficient((k,)) for k in range(4)]
    assert np.allclose(coeffs, [0, 1, 0, -1 / 6], atol=1e-15)


def test_exp_product_matches_finite_differences():
    f = ScalarField("exp(x1*x2)", 2)
    j = eval_jet(f, [1.0, 1.0], 2)
    d1, d2 = central_partials(f, [1.0, 1.0])
    assert np.allclose([j.partial((1, 0)), j.partial((0, 1))], d1, atol=1e-6)
    hess = [[j.partial((2, 0)), j.partial((1, 1))], [j.partial((1, 1)), j.partial((0, 2))]]
    assert np.allclose(hess, d2, atol=1e-6)


def test_order_zero_jet_is_plain_evaluation():
    e = parse("log(1+x1^2)*cos(x2)")
    assert eval_jet(e, [0.7, -0.3], 0).value == pytest.approx(e.evaluate([0.7, -0.3]))


@pytest.mark.parametrize("src,p", [("log(x1)", [0.0]), ("sqrt(x1)", [-1.0]), ("1/x1", [0.0]), ("log(x1)", [-2.0])])
def test_domain_violations_raise(src, p):
    with pytest.raises(DomainError):
        eval_jet(src, p, 1)
    with pytest.raises(DomainError):
        parse(src).evaluate(p)


def test_jet_dimension_and_order_limits():
    with pytest.raises(ValueError):
        jet_space(9, 1)
    with pytest.raises(ValueError):
        jet_space(2, 4)


@given(polynomials(), polynomials(), st.tuples(small, small))
def test_product_rule_is_exact_for_polynomials(f, g, p):
    jf, jg = eval_jet(f, p, 3), eval_jet(g, p, 3)
    jfg = eval_jet(f"({f})*({g})", p, 3)
    assert np.allclose((jf * jg).c, jfg.c, rtol=1e-12, atol=1e-12)


@given(polynomials(), st.tuples(small, small))
def test_quotient_rule(f, p):
    denom = "2+x1^2+x2^2"
    jq = eval_jet(f"({f})/({denom})", p, 3)
    assert np.allclose((eval_jet(f, p, 3) / eval_jet(denom, p, 3)).c, jq.c, rtol=1e-10, atol=1e-12)


def test_cubic_polynomial_jet_reconstructs_function():
    f = "1 + 2*x1 - x2 + 3*x1^2*x2 - x1*x2^2 + 0.5*x2^3"
    p = np.array([0.4, -0.2])
    j = eval_jet(f, p, 3)
    sp = j.space
    h = np.array([0.3, 0.17])
    taylor = sum(j.c[k] * np.prod(h ** np.array(a)) for k, a in enumerate(sp.alphas))
    assert taylor == pytest.approx(parse(f).evaluate(list(p + h)), rel=1e-13)


@given(expressions(), st.tuples(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5)))
def test_partials_match_richardson_differences(src, p):
    e = parse(src)
    f = lambda x: e.evaluate(list(x))  # noqa: E731
    j = eval_jet(e, list(p), 2)
    d1, d2 = central_partials(f, p)
    scale = 1 + max(np.max(np.abs(d1)), np.max(np.abs(d2)))
    assert np.allclose([j.partial((1, 0)), j.partial((0, 1))], d1, atol=1e-6 * scale)
    hess = np.array([[j.partial((2, 0)), j.partial((1, 1))], [j.partial((1, 1)), j.partial((0, 2))]])
    assert np.allclose(hess, d2, atol=1e-5 * scale)


def test_third_partials_match_differences_of_second():
    e = parse("exp(x1)*sin(x2) + x1^3*x2")
    p = np.array([0.2, 0.5])
    j = eval_jet(e, p, 3)
    h = 1e-4
    d = lambda q: eval_jet(e, list(q), 2).partial((1, 1))  # noqa: E731
    fd = (d(p + [h, 0]) - d(p - [h, 0])) / (2 * h)
    assert j.partial((2, 1)) == pytest.approx(fd, abs=1e-6)


def test_symbolic_derivative_agrees_with_jet():
    e = parse("x1^2*exp(x2) - sqrt(1+x1^2)")
    p = [0.3, 0.8]
    j = eval_jet(e, p, 1)
    assert e.diff(0).evaluate(p) == pytest.approx(j.partial((1, 0)))
    assert e.diff(1).evaluate(p) == pytest.approx(j.partial((0, 1)))


def test_substitution_composes():
    e = parse("x1^2 + x2")
    sub = e.substitute([parse("sin(x1)"), Var(0) * 2])
    assert sub.evaluate([0.4]) == pytest.approx(math.sin(0.4) ** 2 + 0.8)


def test_matrix_inverse_jet(rng):
    sp = jet_space(2, 2)
    x, y = sp.variables([0.1, 0.2])
    from confgeom.jets import jet_array

    a = jet_array([[x * x + 2, y], [y, 1 + x * y]])
    ainv = jinv(a)
    from confgeom.jets import jeinsum

    prod = jeinsum("ij,jk->ik", a, ainv)
    target = np.zeros_like(prod.c)
    target[0, 0, 0] = target[1, 1, 0] = 1
    assert np.allclose(prod.c, target, atol=1e-13)


def test_scalar_field_rejects_variables_beyond_dimension():
    with pytest.raises(ValueError):
        ScalarField("x3", 2)
