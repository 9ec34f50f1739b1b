import math

import numpy as np
import pytest

from reeb_diffusion.autodiff import Jet
from reeb_diffusion.expression import Expression, ExpressionError


def test_evaluates_on_arrays_with_params():
    expr = Expression.parse("(x1^2 - 1)^2/4 + x2^2/2 + tilt*x1*x2^2", {"tilt": 0.5})
    x1 = np.array([0.0, 1.0, -1.0])
    x2 = np.array([0.0, 0.0, 2.0])
    np.testing.assert_allclose(expr(x1, x2), [0.25, 0.0, 2.0 - 2.0])


def test_constant_expression_broadcasts():
    expr = Expression.parse("2*pi")
    assert expr.is_constant
    np.testing.assert_allclose(expr(np.zeros(3), np.zeros(3)), np.full(3, 2 * math.pi))


def test_used_variables_are_recorded():
    assert Expression.parse("1 + 0.3*sin(x2)").used_variables == frozenset({"x2"})


@pytest.mark.parametrize(
    ("source", "column"),
    [("(x1 + )", 7), ("x1 + foo", 6), ("x1 $ 2", 4), ("sin(x1", 7)],
)
def test_parse_errors_name_the_column(source, column):
    with pytest.raises(ExpressionError, match=f"column {column}:"):
        Expression.parse(source)


def test_empty_source_is_rejected():
    with pytest.raises(ExpressionError, match="non-empty"):
        Expression.parse("   ")


def test_jet_gradient_and_hessian_match_closed_form():
    expr = Expression.parse("sin(x1)*x2^3 + exp(x1*x2)")
    x1, x2 = 0.3, -0.7
    jet = expr.jet(x1, x2)
    e = math.exp(x1 * x2)
    grad = [math.cos(x1) * x2 ** 3 + x2 * e, 3 * math.sin(x1) * x2 ** 2 + x1 * e]
    hess = [
        [-math.sin(x1) * x2 ** 3 + x2 * x2 * e, 3 * math.cos(x1) * x2 ** 2 + e + x1 * x2 * e],
        [3 * math.cos(x1) * x2 ** 2 + e + x1 * x2 * e, 6 * math.sin(x1) * x2 + x1 * x1 * e],
    ]
    np.testing.assert_allclose(np.asarray(jet.grad, dtype=float).ravel(), grad, rtol=1e-12)
    np.testing.assert_allclose(np.asarray(jet.hess, dtype=float).reshape(2, 2), hess, rtol=1e-12)


def test_jet_of_constant_has_zero_derivatives():
    jet = Expression.parse("3").jet(np.array([1.0, 2.0]), np.array([0.0, 1.0]))
    assert isinstance(jet, Jet)
    assert np.all(jet.grad == 0.0)
    assert np.all(jet.hess == 0.0)
