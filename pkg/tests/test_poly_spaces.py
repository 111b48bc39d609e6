import numpy as np
import pytest

from curl_equilib.algorithms import poly_spaces
from curl_equilib.algorithms.flux_equilibration import patch_context
from curl_equilib.algorithms.poly_spaces import (
    ElementShapeSet, build_global_space, evaluate_field, interpolate, l2_project, max_trace_jump,
    rt_interpolate, scalar_basis, space_dimension,
)
from curl_equilib.algorithms.quadrature import gauss_rule_tet, gauss_rule_triangle
from curl_equilib.constants import BC_DIRICHLET, LOCAL_FACES
from curl_equilib.exceptions import InvalidArgumentError
from curl_equilib.models import CoefficientField


def _random_polynomial_field(degree, rng):
    """Random vector field in [P_degree]^3 with its divergence"""
    exponents = np.array([e for e in poly_spaces._exponents(degree, 3)])
    coefficients = rng.standard_normal((exponents.shape[0], 3))

    def field(x):
        monomials = np.prod(x[:, None, :] ** exponents[None, :, :], axis=2)
        return monomials @ coefficients

    def divergence(x):
        total = np.zeros(x.shape[0])
        for d in range(3):
            lowered = exponents.copy()
            lowered[:, d] = np.maximum(lowered[:, d] - 1, 0)
            monomials = np.prod(x[:, None, :] ** lowered[None, :, :], axis=2)
            total += monomials @ (exponents[:, d] * coefficients[:, d])
        return total

    return field, divergence


@pytest.mark.parametrize("q", range(0, 5))
def test_dimensions(q):
    assert space_dimension("ND", q) == (q + 1) * (q + 3) * (q + 4) // 2
    assert space_dimension("RT", q) == (q + 1) * (q + 2) * (q + 4) // 2
    if q >= 1:
        assert space_dimension("P", q) == (q + 1) * (q + 2) * (q + 3) // 6


@pytest.mark.parametrize("kind,q", [(k, q) for k in ("P", "ND", "RT") for q in range(5) if not (k == "P" and q == 0)])
def test_unisolvence(kind, q, random_tets):
    for mesh in random_tets[:5]:
        matrix = ElementShapeSet(kind, q, mesh, 0).dof_matrix()
        np.testing.assert_allclose(matrix, np.eye(matrix.shape[0]), atol=1e-9)


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["P", "ND", "RT"])
def test_unisolvence_all_random_tets(kind, random_tets):
    for q in range(1 if kind == "P" else 0, 5):
        for mesh in random_tets:
            matrix = ElementShapeSet(kind, q, mesh, 0).dof_matrix()
            np.testing.assert_allclose(matrix, np.eye(matrix.shape[0]), atol=1e-9)


def test_degree_above_cap():
    with pytest.raises(InvalidArgumentError):
        poly_spaces.reference_element("ND", 6)
    with pytest.raises(InvalidArgumentError):
        poly_spaces.reference_element("XY", 1)


def test_modal_basis_starts_with_constant():
    values, _ = scalar_basis(3, gauss_rule_tet(4).points)
    assert values.shape[1] == 20
    np.testing.assert_allclose(values[:, 0], 1.0)


# RT interpolation

def test_rt0_reproduces_constants(random_tets):
    mesh = random_tets[0]
    coefficients = rt_interpolate(0, mesh, 0, lambda x: np.tile([1.0, 0.0, 0.0], (x.shape[0], 1)))
    points, _, values, _ = ElementShapeSet("RT", 0, mesh, 0).tabulate(2)
    np.testing.assert_allclose(np.tensordot(coefficients, values, axes=([0], [1])),
                               np.tile([1.0, 0.0, 0.0], (points.shape[0], 1)), atol=1e-12)


@pytest.mark.parametrize("q", [0, 1, 2, 3])
def test_div_of_position_interpolate(q, random_tets):
    mesh = random_tets[1]
    coefficients = rt_interpolate(q, mesh, 0, lambda x: x)
    _, _, _, divergence = ElementShapeSet("RT", q, mesh, 0).tabulate(2 * q + 2)
    np.testing.assert_allclose(divergence @ coefficients, 3.0, atol=1e-10)


@pytest.mark.parametrize("q", [0, 1, 2, 3])
def test_commuting_diagram(q, random_tets):
    rng = np.random.default_rng(q)
    for trial in range(50 if q < 2 else 12):
        mesh = random_tets[trial % len(random_tets)]
        field, divergence = _random_polynomial_field(q + 1, rng)
        coefficients = rt_interpolate(q, mesh, 0, field)
        points, _, _, div_shapes = ElementShapeSet("RT", q, mesh, 0).tabulate(2 * q + 4)
        projected = l2_project(q, mesh, divergence, exactness=2 * q + 4).at_points(0, points)
        scale = max(1.0, float(np.abs(projected).max()))
        assert np.abs(div_shapes @ coefficients - projected).max() <= 1e-10 * scale


@pytest.mark.parametrize("q", [0, 1, 2])
def test_rt_interpolate_matches_face_moments(q, random_tets):
    mesh = random_tets[2]
    field, _ = _random_polynomial_field(q + 1, np.random.default_rng(11))
    coefficients = rt_interpolate(q, mesh, 0, field)
    shapes = ElementShapeSet("RT", q, mesh, 0)
    corners = shapes.corners
    rule = gauss_rule_triangle(2 * q + 4)
    mu = scalar_basis(q, rule.points)[0]
    for i, j, k in LOCAL_FACES:
        t1, t2 = corners[j] - corners[i], corners[k] - corners[i]
        normal = np.cross(t1, t2)
        points = corners[i] + rule.points[:, :1] * t1 + rule.points[:, 1:] * t2
        interpolate_values = np.tensordot(coefficients, shapes.at_points(points)[0], axes=([0], [1]))
        difference = (interpolate_values - field(points)) @ normal
        assert np.abs(rule.weights * difference @ mu).max() <= 1e-11 * max(1.0, np.abs(field(points)).max())


# L2 projection

def test_projection_of_barycentric_coordinate(single_tet):
    projection = l2_project(0, single_tet, lambda x: x[:, 0])
    assert projection.coefficients[0, 0] == pytest.approx(0.25, abs=1e-14)


def test_projection_is_idempotent(random_tets):
    mesh = random_tets[3]
    field, _ = _random_polynomial_field(2, np.random.default_rng(5))
    points = mesh.map_points(0, gauss_rule_tet(3).points)
    np.testing.assert_allclose(l2_project(2, mesh, field).at_points(0, points), field(points), atol=1e-10)


def test_projection_orthogonality(random_tets):
    mesh = random_tets[4]
    f = lambda x: np.sin(x[:, 0])
    projection = l2_project(2, mesh, f, exactness=20)
    rule = gauss_rule_tet(20)
    points = mesh.map_points(0, rule.points)
    mu = scalar_basis(2, rule.points)[0]
    residual = (rule.weights * (projection.at_points(0, points) - f(points))) @ mu
    assert np.abs(residual).max() <= 1e-12


# Global spaces

def test_nd0_free_dofs_are_interior_edges(cube1):
    space = build_global_space(cube1, "ND", 0, BC_DIRICHLET)
    assert space.n_free == int(np.count_nonzero(~cube1.boundary_edge_mask))


def test_single_tet_rt0(single_tet):
    space = build_global_space(single_tet, "RT", 0)
    assert space.n_dofs == 4
    assert space.n_free == 4


@pytest.mark.parametrize("q", [0, 2])
def test_interior_patch_masks_boundary_faces(cube1, q):
    center = int(np.flatnonzero(np.all(np.isclose(cube1.vertices, 0.5), axis=1))[0])
    context = patch_context(cube1, center)
    space = context.space("RT", q)
    per_face = space.entity_dofs[2]
    boundary = context.mesh.boundary_faces
    face_dofs = (boundary[:, None] * per_face + np.arange(per_face)).ravel()
    assert np.all(space.constrained[face_dofs])
    assert space.n_free == space.n_dofs - boundary.size * per_face


@pytest.mark.parametrize("kind,q", [("P", 2), ("ND", 1), ("ND", 2), ("RT", 0), ("RT", 2)])
def test_trace_continuity(cube1, kind, q):
    space = build_global_space(cube1, kind, q)
    values = np.random.default_rng(2).standard_normal(space.n_dofs)
    field = CoefficientField(space, values)
    assert max_trace_jump(field) <= 1e-10 * np.abs(values).max()


@pytest.mark.parametrize("kind,q", [("ND", 1), ("RT", 1), ("P", 2)])
def test_inclusion_chain(cube1, kind, q):
    coarse = build_global_space(cube1, kind, q)
    fine = build_global_space(cube1, kind, q + 1)
    field = CoefficientField(coarse, np.random.default_rng(4).standard_normal(coarse.n_dofs))
    embedded = interpolate(fine, field)
    xhat = np.random.default_rng(5).dirichlet(np.ones(4), size=10)[:, 1:]
    for t in (0, 7, 23):
        np.testing.assert_allclose(evaluate_field(embedded, t, xhat)[0], evaluate_field(field, t, xhat)[0], atol=1e-10)


def test_coefficient_length_checked(cube1):
    space = build_global_space(cube1, "RT", 0)
    with pytest.raises(InvalidArgumentError):
        CoefficientField(space, np.zeros(space.n_dofs + 1))
