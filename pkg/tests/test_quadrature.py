import math

import numpy as np
import pytest

from curl_equilib.algorithms.quadrature import (
    face_points, gauss_rule_interval, gauss_rule_tet, gauss_rule_triangle,
)
from curl_equilib.exceptions import QuadratureRuleUnavailable


def _simplex_monomial(exponents):
    """Integral of x^a y^b z^c over the reference simplex"""
    total = sum(exponents)
    return math.prod(math.factorial(e) for e in exponents) / math.factorial(total + len(exponents))


def test_exactness_zero_is_one_centroid_point():
    rule = gauss_rule_tet(0)
    assert rule.n_points == 1
    np.testing.assert_allclose(rule.points[0], [0.25, 0.25, 0.25], atol=1e-15)
    assert rule.weights[0] == pytest.approx(1.0 / 6.0)


def test_x_squared_integral():
    rule = gauss_rule_tet(2)
    assert rule.weights @ rule.points[:, 0] ** 2 == pytest.approx(1.0 / 60.0, abs=1e-14)


@pytest.mark.parametrize("exactness", [1, 4, 9, 14, 20])
def test_tet_rule_is_exact_for_all_monomials(exactness):
    rule = gauss_rule_tet(exactness)
    assert rule.weights.sum() == pytest.approx(1.0 / 6.0, abs=1e-15)
    x, y, z = rule.points.T
    for a in range(exactness + 1):
        for b in range(exactness + 1 - a):
            c = exactness - a - b
            value = rule.weights @ (x ** a * y ** b * z ** c)
            assert value == pytest.approx(_simplex_monomial((a, b, c)), rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("exactness", [0, 3, 8, 15])
def test_triangle_rule_is_exact(exactness):
    rule = gauss_rule_triangle(exactness)
    assert rule.weights.sum() == pytest.approx(0.5)
    s, t = rule.points.T
    for a in range(exactness + 1):
        b = exactness - a
        assert rule.weights @ (s ** a * t ** b) == pytest.approx(_simplex_monomial((a, b)), rel=1e-12, abs=1e-15)


def test_interval_rule():
    rule = gauss_rule_interval(7)
    assert rule.weights @ rule.points[:, 0] ** 7 == pytest.approx(1.0 / 8.0)


@pytest.mark.parametrize("exactness", [-1, 31, 99])
def test_unsupported_exactness(exactness):
    with pytest.raises(QuadratureRuleUnavailable):
        gauss_rule_tet(exactness)


def test_face_points_lie_on_face():
    vertices = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    points = face_points(vertices, gauss_rule_triangle(4))
    np.testing.assert_allclose(points.sum(axis=1), 1.0, atol=1e-14)
    assert np.all(points >= -1e-14)
