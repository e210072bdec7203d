import numpy as np
import pytest

from finsler_morse.errors import ExpressionSyntaxError, UnknownIdentifierError
from finsler_morse.geometry.expression import evaluate_number, parse_expression
from finsler_morse.geometry.jets import extract_partial, seed


def test_arithmetic_and_precedence():
    expression = parse_expression("x1^2 + 3*x2 - x1/2", ["x1", "x2"])
    assert expression.evaluate([2.0, 1.0]) == pytest.approx(6.0)
    assert parse_expression("-x^2", ["x"])(x=3.0) == pytest.approx(-9.0)
    assert float(parse_expression("2^3^2", []).tree.eval({})) == pytest.approx(512.0)


def test_functions_and_arrays():
    expression = parse_expression("sin(x)^2 + cos(x)^2 + exp(0) + sqrt(4)", ["x"])
    values = expression(x=np.linspace(0.0, 3.0, 7))
    np.testing.assert_allclose(values, 4.0)


def test_jet_evaluation():
    (x,) = seed([0.7], [(0, 0)])
    value = parse_expression("x*sin(x)", ["x"])(x=x)
    assert extract_partial(value, [0]) == pytest.approx(np.sin(0.7) + 0.7 * np.cos(0.7))


def test_unknown_identifier_reports_position():
    with pytest.raises(UnknownIdentifierError) as info:
        parse_expression("x1 + z", ["x1"])
    assert info.value.name == "z"
    assert info.value.position == 5


@pytest.mark.parametrize("source", ["(x + 1", "x +", "x * * 2", "sin x", "x )"])
def test_syntax_errors(source):
    with pytest.raises(ExpressionSyntaxError):
        parse_expression(source, ["x"])


def test_negative_sqrt():
    with pytest.raises(ValueError):
        parse_expression("sqrt(x)", ["x"])(x=-1.0)


def test_evaluate_number():
    assert evaluate_number(3) == 3.0
    assert evaluate_number("pi/2") == pytest.approx(np.pi / 2)
    assert evaluate_number("2*pi") == pytest.approx(2 * np.pi)
    with pytest.raises(UnknownIdentifierError):
        evaluate_number("tau")
