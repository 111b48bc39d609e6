"""
Gauss rules on the reference simplices.

Tetrahedron and triangle rules are collapsed (conical) products of
Gauss-Jacobi rules, so any exactness up to MAX_QUADRATURE_DEGREE is
available without tables. Points are reference coordinates; the reference
tetrahedron is conv{0, e1, e2, e3} with volume 1/6.
"""
import math
from functools import lru_cache

import numpy as np
from scipy import special

from ..constants import MAX_QUADRATURE_DEGREE
from ..exceptions import QuadratureRuleUnavailable
from ..models import QuadratureRule


def _check_exactness(exactness: int) -> int:
    exactness = int(exactness)
    if exactness < 0 or exactness > MAX_QUADRATURE_DEGREE:
        raise QuadratureRuleUnavailable(
            f"no rule of exactness {exactness}; supported range is 0..{MAX_QUADRATURE_DEGREE}"
        )
    return exactness


def _jacobi_on_unit_interval(n: int, alpha: int):
    """Gauss-Jacobi nodes/weights for the weight (1-u)^alpha on [0, 1]"""
    x, w = special.roots_jacobi(n, alpha, 0)
    return (1.0 + x) / 2.0, w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def gauss_rule_tet(exactness: int) -> QuadratureRule:
    """
    Rule on the reference tetrahedron exact for total degree <= exactness.

    Args:
        exactness: polynomial degree integrated exactly (0..MAX_QUADRATURE_DEGREE)

    Returns:
        QuadratureRule with (n^3, 3) points, n = ceil((exactness + 1) / 2)
    """
    exactness = _check_exactness(exactness)
    n = max(1, math.ceil((exactness + 1) / 2))
    u, wu = _jacobi_on_unit_interval(n, 2)
    v, wv = _jacobi_on_unit_interval(n, 1)
    w, ww = _jacobi_on_unit_interval(n, 0)
    U, V, W = np.meshgrid(u, v, w, indexing="ij")
    weights = np.einsum("i,j,k->ijk", wu, wv, ww).ravel()
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    z = (W * (1.0 - U) * (1.0 - V)).ravel()
    return QuadratureRule(3, np.column_stack([x, y, z]), weights, exactness)


@lru_cache(maxsize=None)
def gauss_rule_triangle(exactness: int) -> QuadratureRule:
    """Rule on the reference triangle conv{0, e1, e2} (area 1/2)"""
    exactness = _check_exactness(exactness)
    n = max(1, math.ceil((exactness + 1) / 2))
    u, wu = _jacobi_on_unit_interval(n, 1)
    v, wv = _jacobi_on_unit_interval(n, 0)
    U, V = np.meshgrid(u, v, indexing="ij")
    weights = np.outer(wu, wv).ravel()
    return QuadratureRule(2, np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()]), weights, exactness)


@lru_cache(maxsize=None)
def gauss_rule_interval(exactness: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1]"""
    exactness = _check_exactness(exactness)
    n = max(1, math.ceil((exactness + 1) / 2))
    x, w = special.roots_legendre(n)
    return QuadratureRule(1, ((1.0 + x) / 2.0)[:, None], w / 2.0, exactness)


def face_points(vertices: np.ndarray, rule: QuadratureRule) -> np.ndarray:
    """Map triangle-rule points onto the face v0 + s (v1 - v0) + t (v2 - v0)"""
    v0, v1, v2 = vertices
    s, t = rule.points[:, 0:1], rule.points[:, 1:2]
    return v0 + s * (v1 - v0) + t * (v2 - v0)
