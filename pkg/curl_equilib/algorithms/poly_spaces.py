"""
Polynomial spaces P_q, ND_q and RT_q on tetrahedra.

Shape functions are built once per (kind, degree) on the reference
tetrahedron: a modal spanning set is inverted against the DOF functionals.
All DOF functionals are invariant under the Piola maps

    P:  u = u_hat                      grad u = J^-T grad_hat u_hat
    ND: u = J^-T u_hat                 curl u = J curl_hat u_hat / det J
    RT: u = J u_hat / det J            div u  = div_hat u_hat / det J

and are defined on edges/faces parametrized from their lowest vertex, so a
basis function tabulated on the reference element is the physical basis
function on every tetrahedron, with +1 orientation signs throughout.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import legendre
from scipy import linalg, sparse

from ..config import Config
from ..constants import (
    BC_DIRICHLET, BC_NEUMANN, BC_NONE, DIRICHLET, LOCAL_EDGES, LOCAL_FACES,
    MAX_QUADRATURE_DEGREE, NEUMANN, VALID_BC, VALID_SPACE_KINDS,
)
from ..exceptions import InvalidArgumentError
from ..models import CoefficientField, GlobalFeSpace, TetMesh
from .quadrature import gauss_rule_interval, gauss_rule_tet, gauss_rule_triangle

logger = logging.getLogger(__name__)

REFERENCE_CORNERS = np.vstack([np.zeros(3), np.eye(3)])
_CENTROID = np.full(3, 0.25)


# Modal scalar bases

@lru_cache(maxsize=None)
def _legendre_derivative_matrix(q: int) -> np.ndarray:
    D = np.zeros((q + 1, q + 1))
    for k in range(1, q + 1):
        d = legendre.legder(np.eye(k + 1)[k])
        D[k, :d.size] = d
    return D


def _legendre_on_unit(q: int, x: np.ndarray):
    """L_k(2x - 1) and d/dx for k <= q"""
    V = legendre.legvander(2.0 * x - 1.0, q)
    return V, 2.0 * V @ _legendre_derivative_matrix(q).T


@lru_cache(maxsize=None)
def _exponents(q: int, dim: int) -> tuple:
    if q < 0:
        return ()
    if dim == 2:
        return tuple((i, d - i) for d in range(q + 1) for i in range(d, -1, -1))
    return tuple((i, j, d - i - j) for d in range(q + 1) for i in range(d, -1, -1) for j in range(d - i, -1, -1))


def scalar_dimension(q: int, dim: int = 3) -> int:
    return len(_exponents(q, dim))


def scalar_basis(q: int, points: np.ndarray):
    """
    Modal basis of P_q on reference coordinates: products of shifted Legendre
    polynomials with total degree <= q.

    Returns:
        values (n, nb) and gradients (n, nb, dim)
    """
    points = np.atleast_2d(points)
    n, dim = points.shape
    exps = np.array(_exponents(q, dim), dtype=int).reshape(-1, dim)
    if exps.shape[0] == 0:
        return np.zeros((n, 0)), np.zeros((n, 0, dim))
    tables = [_legendre_on_unit(q, points[:, d]) for d in range(dim)]
    factors = np.stack([tables[d][0][:, exps[:, d]] for d in range(dim)])      # (dim, n, nb)
    derivatives = np.stack([tables[d][1][:, exps[:, d]] for d in range(dim)])
    values = np.prod(factors, axis=0)
    gradients = np.empty((n, exps.shape[0], dim))
    for d in range(dim):
        others = np.prod(np.delete(factors, d, axis=0), axis=0)
        gradients[:, :, d] = derivatives[d] * others
    return values, gradients


def _homogeneous(q: int, xi: np.ndarray):
    """Monomials of exact degree q in xi, with gradients and exponents"""
    exps = np.array([e for e in _exponents(q, 3) if sum(e) == q], dtype=int)
    powers = xi[:, None, :] ** exps[None, :, :]
    values = np.prod(powers, axis=2)
    gradients = np.empty(values.shape + (3,))
    for d in range(3):
        lowered = np.maximum(exps[:, d] - 1, 0)
        partial = exps[:, d] * xi[:, None, d] ** lowered
        gradients[:, :, d] = partial * np.prod(np.delete(powers, d, axis=2), axis=2)
    return values, gradients, exps


# Spanning sets on the reference tetrahedron

def _span(kind: str, q: int, points: np.ndarray):
    """Spanning set of kind_q: values and differentials, function axis second"""
    points = np.atleast_2d(points)
    n = points.shape[0]
    s, gs = scalar_basis(q, points)
    if kind == "P":
        return s, gs

    eye = np.eye(3)
    values, diffs = [], []
    for k in range(3):
        v = np.zeros(s.shape + (3,))
        v[:, :, k] = s
        values.append(v)
        diffs.append(np.cross(gs, eye[k]) if kind == "ND" else gs[:, :, k])

    xi = points - _CENTROID
    m, gm, exps = _homogeneous(q, xi)
    if kind == "ND":
        for k in range(3):
            keep = slice(None) if k < 2 else exps[:, 2] == 0
            u = np.cross(xi, eye[k])[:, None, :]
            values.append(m[:, keep, None] * u)
            diffs.append(np.cross(gm[:, keep], u) - 2.0 * m[:, keep, None] * eye[k])
        return np.concatenate(values, axis=1), np.concatenate(diffs, axis=1)

    values.append(m[:, :, None] * xi[:, None, :])
    diffs.append(np.einsum("nki,ni->nk", gm, xi) + 3.0 * m)
    return np.concatenate(values, axis=1), np.concatenate(diffs, axis=1).reshape(n, -1)


def entity_dof_counts(kind: str, q: int) -> tuple:
    """DOFs per vertex, edge, face and interior"""
    if kind == "P":
        return 1, max(q - 1, 0), max((q - 1) * (q - 2) // 2, 0), max((q - 1) * (q - 2) * (q - 3) // 6, 0)
    if kind == "ND":
        return 0, q + 1, q * (q + 1), (q - 1) * q * (q + 1) // 2
    return 0, 0, (q + 1) * (q + 2) // 2, q * (q + 1) * (q + 2) // 2


def space_dimension(kind: str, q: int) -> int:
    cv, ce, cf, ci = entity_dof_counts(kind, q)
    return 4 * cv + 6 * ce + 4 * cf + ci


# DOF functionals

def _lattice(q: int, corners: np.ndarray) -> np.ndarray:
    """Equispaced nodes of P_q, ordered vertex, edge, face and interior"""
    nodes = [corners[v] for v in range(4)]
    for a, b in LOCAL_EDGES:
        for t in range(1, q):
            nodes.append(corners[a] + t / q * (corners[b] - corners[a]))
    for i, j, k in LOCAL_FACES:
        for s in range(1, q):
            for t in range(1, q - s):
                nodes.append(corners[i] + s / q * (corners[j] - corners[i]) + t / q * (corners[k] - corners[i]))
    for a in range(1, q):
        for b in range(1, q - a):
            for c in range(1, q - a - b):
                nodes.append(corners[0] + (a * (corners[1] - corners[0]) + b * (corners[2] - corners[0])
                                           + c * (corners[3] - corners[0])) / q)
    return np.array(nodes).reshape(-1, 3)


def dof_functionals(kind: str, q: int, corners: np.ndarray, field: Callable) -> np.ndarray:
    """
    Apply the DOF functionals of kind_q on the tetrahedron with the given
    (sorted) corners to one or several fields.

    Args:
        field: physical points (n, 3) -> values (n, 3) or (n, k, 3); for P
            (n,) or (n, k)

    Returns:
        (n_dofs, k) DOF values
    """
    corners = np.asarray(corners, dtype=float)
    if kind == "P":
        nodes = _lattice(q, corners)
        values = np.asarray(field(nodes), dtype=float)
        return values.reshape(nodes.shape[0], -1)

    J = (corners[1:] - corners[0]).T
    exactness = 2 * q + 2

    def vector(points):
        values = np.asarray(field(points), dtype=float)
        return values.reshape(points.shape[0], -1, 3)

    rows = []
    if kind == "ND":
        rule = gauss_rule_interval(exactness)
        mu = _legendre_on_unit(q, rule.points[:, 0])[0]
        for a, b in LOCAL_EDGES:
            tangent = corners[b] - corners[a]
            values = vector(corners[a] + rule.points * tangent)
            rows.append(np.einsum("n,nm,nki,i->mk", rule.weights, mu, values, tangent))
        if q >= 1:
            rows.extend(_face_rows(q - 1, corners, vector, exactness, tangential=True))
        if q >= 2:
            rows.append(_interior_rows(q - 2, corners, vector, exactness, J.T))
    else:
        rows.extend(_face_rows(q, corners, vector, exactness, tangential=False))
        if q >= 1:
            pullback = np.linalg.det(J) * np.linalg.inv(J)
            rows.append(_interior_rows(q - 1, corners, vector, exactness, pullback))
    return np.vstack(rows)


def _face_rows(degree, corners, vector, exactness, tangential):
    rule = gauss_rule_triangle(exactness)
    mu = scalar_basis(degree, rule.points)[0]
    rows = []
    for i, j, k in LOCAL_FACES:
        t1, t2 = corners[j] - corners[i], corners[k] - corners[i]
        points = corners[i] + rule.points[:, :1] * t1 + rule.points[:, 1:] * t2
        values = vector(points)
        directions = (t1, t2) if tangential else (np.cross(t1, t2),)
        for direction in directions:
            rows.append(np.einsum("n,nm,nki,i->mk", rule.weights, mu, values, direction))
    return rows


def _interior_rows(degree, corners, vector, exactness, pullback):
    rule = gauss_rule_tet(exactness)
    mu = scalar_basis(degree, rule.points)[0]
    points = corners[0] + rule.points @ (corners[1:] - corners[0])
    values = vector(points) @ pullback.T   # reference field
    return np.einsum("n,nm,nki->imk", rule.weights, mu, values).reshape(-1, values.shape[1])


# Reference elements

class ReferenceElement:
    """Nodal (P) or moment-dual (ND, RT) basis of kind_q on the reference tetrahedron"""

    def __init__(self, kind: str, q: int):
        if kind not in VALID_SPACE_KINDS:
            raise InvalidArgumentError(f"unknown space kind {kind!r}")
        cap = Config.MAX_SPACE_DEGREE[kind]
        if q < (1 if kind == "P" else 0) or q > cap:
            raise InvalidArgumentError(f"degree {q} outside the supported range for {kind} (cap {cap})")
        self.kind = kind
        self.degree = q
        self.entity_dofs = entity_dof_counts(kind, q)
        self.dimension = space_dimension(kind, q)

        dof_matrix = dof_functionals(kind, q, REFERENCE_CORNERS, lambda x: _span(kind, q, x)[0])
        if dof_matrix.shape != (self.dimension, self.dimension):
            raise InvalidArgumentError(
                f"{kind}_{q}: spanning set of size {dof_matrix.shape[1]} for {self.dimension} DOFs"
            )
        self.coefficients = linalg.solve(dof_matrix, np.eye(self.dimension))

    @property
    def is_vector(self) -> bool:
        return self.kind != "P"

    def tabulate(self, points: np.ndarray):
        """Reference values and differentials (gradient, curl or divergence) at points"""
        values, diffs = _span(self.kind, self.degree, points)
        contraction = "nsc,sd->ndc" if values.ndim == 3 else "ns,sd->nd"
        values = np.einsum(contraction, values, self.coefficients)
        contraction = "nsc,sd->ndc" if diffs.ndim == 3 else "ns,sd->nd"
        return values, np.einsum(contraction, diffs, self.coefficients)


@lru_cache(maxsize=None)
def reference_element(kind: str, q: int) -> ReferenceElement:
    return ReferenceElement(kind, q)


@lru_cache(maxsize=None)
def reference_tabulation(kind: str, q: int, exactness: int):
    """Volume rule of the given exactness with the reference tabulation at its points"""
    rule = gauss_rule_tet(exactness)
    values, diffs = reference_element(kind, q).tabulate(rule.points)
    for array in (values, diffs):
        array.setflags(write=False)
    return rule, values, diffs


@lru_cache(maxsize=None)
def face_rule_points(local_face: int, exactness: int):
    """Triangle rule mapped onto a local face of the reference tetrahedron"""
    rule = gauss_rule_triangle(exactness)
    i, j, k = LOCAL_FACES[local_face]
    c = REFERENCE_CORNERS
    points = c[i] + rule.points[:, :1] * (c[j] - c[i]) + rule.points[:, 1:] * (c[k] - c[i])
    points.setflags(write=False)
    return rule, points


@lru_cache(maxsize=None)
def face_tabulation(kind: str, q: int, local_face: int, exactness: int):
    rule, points = face_rule_points(local_face, exactness)
    values, diffs = reference_element(kind, q).tabulate(points)
    for array in (values, diffs):
        array.setflags(write=False)
    return rule, values, diffs


def piola(kind: str, mesh: TetMesh, t: int, values: np.ndarray, diffs: np.ndarray):
    """Map reference tabulations to tetrahedron t"""
    J, Jinv, det = mesh.jacobians[t], mesh.inv_jacobians[t], mesh.dets[t]
    if kind == "P":
        return values, diffs @ Jinv
    if kind == "ND":
        return values @ Jinv, diffs @ J.T / det
    return values @ J.T / det, diffs / det


class ElementShapeSet:
    """Physical shape functions of kind_q on one tetrahedron"""

    def __init__(self, kind: str, q: int, mesh: TetMesh, t: int):
        self.reference = reference_element(kind, q)
        self.kind, self.degree = kind, q
        self.mesh, self.t = mesh, t

    @property
    def corners(self) -> np.ndarray:
        return self.mesh.vertices[self.mesh.tets[self.t]]

    def evaluate(self, xhat: np.ndarray):
        return piola(self.kind, self.mesh, self.t, *self.reference.tabulate(xhat))

    def at_points(self, x: np.ndarray):
        """Values and differentials at physical points"""
        return self.evaluate(self.mesh.to_reference(self.t, np.atleast_2d(x)))

    def tabulate(self, exactness: int):
        """Physical points, weights and tabulations for the volume rule of given exactness"""
        rule, values, diffs = reference_tabulation(self.kind, self.degree, exactness)
        values, diffs = piola(self.kind, self.mesh, self.t, values, diffs)
        return self.mesh.map_points(self.t, rule.points), rule.weights * abs(self.mesh.dets[self.t]), values, diffs

    def dofs(self, field: Callable) -> np.ndarray:
        return dof_functionals(self.kind, self.degree, self.corners, field)

    def dof_matrix(self) -> np.ndarray:
        """DOF functionals applied to the shape functions; the identity for a unisolvent set"""
        return self.dofs(lambda x: self.at_points(x)[0])


# Element-level tabulation of a space

@dataclass
class ElementTabulation:
    points: np.ndarray      # physical (n, 3)
    xhat: np.ndarray        # reference (n, 3)
    weights: np.ndarray     # physical weights
    values: np.ndarray
    diffs: np.ndarray


def tabulate_element(kind: str, q: int, mesh: TetMesh, t: int, exactness: int) -> ElementTabulation:
    rule, values, diffs = reference_tabulation(kind, q, exactness)
    values, diffs = piola(kind, mesh, t, values, diffs)
    return ElementTabulation(mesh.map_points(t, rule.points), rule.points,
                             rule.weights * abs(mesh.dets[t]), values, diffs)


def default_exactness(q: int, extra: Optional[int] = None) -> int:
    return 2 * q + (Config.VOLUME_QUAD_EXTRA if extra is None else extra)


def data_exactness(q: int, extra: Optional[int] = None) -> int:
    return min(2 * q + (Config.DATA_QUAD_EXTRA if extra is None else extra), MAX_QUADRATURE_DEGREE)


# Global spaces

def _constrained_faces(mesh: TetMesh, bc: str) -> np.ndarray:
    if bc == BC_NONE:
        return np.zeros(0, dtype=int)
    if bc == BC_DIRICHLET:
        return mesh.faces_tagged(DIRICHLET)
    if bc == BC_NEUMANN:
        return mesh.faces_tagged(NEUMANN)
    return mesh.boundary_faces


def build_global_space(mesh: TetMesh, kind: str, q: int, bc: str = BC_NONE,
                       constrained_faces=None) -> GlobalFeSpace:
    """
    Conforming space with entity-block DOF numbering: all vertex DOFs, then
    edge, face and interior DOFs, each block ordered by entity index.

    Args:
        bc: which boundary part carries the homogeneous trace condition
        constrained_faces: explicit face list overriding ``bc`` (patch spaces)
    """
    if bc not in VALID_BC:
        raise InvalidArgumentError(f"unknown boundary condition {bc!r}")
    reference_element(kind, q)
    cv, ce, cf, ci = entity_dof_counts(kind, q)
    counts = (mesh.n_vertices * cv, mesh.n_edges * ce, mesh.n_faces * cf, mesh.n_tets * ci)
    offsets = np.concatenate([[0], np.cumsum(counts)])

    def block(entities, per_entity, offset):
        return (offset + entities[..., None] * per_entity + np.arange(per_entity)).reshape(entities.shape[0], -1)

    cell_dofs = np.hstack([
        block(mesh.tets, cv, offsets[0]),
        block(mesh.tet_edges, ce, offsets[1]),
        block(mesh.tet_faces, cf, offsets[2]),
        block(np.arange(mesh.n_tets)[:, None], ci, offsets[3]),
    ]).astype(int)

    faces = _constrained_faces(mesh, bc) if constrained_faces is None else np.asarray(constrained_faces, dtype=int)
    constrained = np.zeros(int(offsets[-1]), dtype=bool)
    if faces.size:
        constrained[block(faces[:, None], cf, offsets[2]).ravel()] = True
        if kind in ("P", "ND"):
            constrained[block(mesh.face_edges[faces].reshape(-1, 1), ce, offsets[1]).ravel()] = True
        if kind == "P":
            constrained[block(mesh.faces[faces].reshape(-1, 1), cv, offsets[0]).ravel()] = True

    space = GlobalFeSpace(mesh, kind, q, cell_dofs, int(offsets[-1]), constrained, (cv, ce, cf, ci))
    logger.debug("%s_%d space: %d DOFs, %d free", kind, q, space.n_dofs, space.n_free)
    return space


def evaluate_field(field: CoefficientField, t: int, xhat: np.ndarray):
    """Values and differentials of a coefficient field on tetrahedron t at reference points"""
    space = field.space
    values, diffs = reference_element(space.kind, space.degree).tabulate(np.atleast_2d(xhat))
    values, diffs = piola(space.kind, space.mesh, t, values, diffs)
    local = field.local(t)
    return np.tensordot(local, values, axes=([0], [1])), np.tensordot(local, diffs, axes=([0], [1]))


def field_on_rule(field: CoefficientField, t: int, exactness: int):
    """Values and differentials at the volume rule points of tetrahedron t (cached tabulation)"""
    space = field.space
    _, values, diffs = reference_tabulation(space.kind, space.degree, exactness)
    values, diffs = piola(space.kind, space.mesh, t, values, diffs)
    local = field.local(t)
    return np.tensordot(local, values, axes=([0], [1])), np.tensordot(local, diffs, axes=([0], [1]))


# Assembly

def _pick(tab: ElementTabulation, which: str) -> np.ndarray:
    return tab.values if which == "value" else tab.diffs


def _pair(a: np.ndarray, b: np.ndarray, weights: np.ndarray) -> np.ndarray:
    if a.ndim == 3:
        return np.einsum("n,nic,njc->ij", weights, a, b)
    return np.einsum("n,ni,nj->ij", weights, a, b)


def assemble_bilinear(row_space: GlobalFeSpace, col_space: GlobalFeSpace, row: str, col: str,
                      exactness: Optional[int] = None, tets=None) -> sparse.csr_matrix:
    """
    Sparse matrix of (col-part of phi_j, row-part of phi_i) over the given
    tetrahedra; ``row``/``col`` select "value" or "diff" (the differential).
    """
    mesh = row_space.mesh
    q = max(row_space.degree, col_space.degree)
    exactness = default_exactness(q) if exactness is None else exactness
    tets = range(mesh.n_tets) if tets is None else tets
    rows, cols, data = [], [], []
    for t in tets:
        a = tabulate_element(row_space.kind, row_space.degree, mesh, t, exactness)
        b = tabulate_element(col_space.kind, col_space.degree, mesh, t, exactness)
        local = _pair(_pick(a, row), _pick(b, col), a.weights)
        r, c = row_space.cell_dofs[t], col_space.cell_dofs[t]
        rows.append(np.repeat(r, c.size))
        cols.append(np.tile(c, r.size))
        data.append(local.ravel())
    shape = (row_space.n_dofs, col_space.n_dofs)
    if not data:
        return sparse.csr_matrix(shape)
    return sparse.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                             shape=shape).tocsr()


def assemble_mass(space: GlobalFeSpace, exactness: Optional[int] = None) -> sparse.csr_matrix:
    return assemble_bilinear(space, space, "value", "value", exactness)


def assemble_stiffness(space: GlobalFeSpace, exactness: Optional[int] = None) -> sparse.csr_matrix:
    """Gram matrix of the differentials: grad-grad, curl-curl or div-div"""
    return assemble_bilinear(space, space, "diff", "diff", exactness)


def assemble_load(space: GlobalFeSpace, func: Callable, exactness: int, which: str = "value") -> np.ndarray:
    """Vector of (func, phi_i) or (func, differential of phi_i)"""
    load = np.zeros(space.n_dofs)
    for t in range(space.mesh.n_tets):
        tab = tabulate_element(space.kind, space.degree, space.mesh, t, exactness)
        f = np.asarray(func(tab.points), dtype=float)
        shapes = _pick(tab, which)
        if shapes.ndim == 3:
            local = np.einsum("n,nic,nc->i", tab.weights, shapes, f)
        else:
            local = np.einsum("n,ni,n->i", tab.weights, shapes, f)
        np.add.at(load, space.cell_dofs[t], local)
    return load


# Projection and interpolation

@dataclass
class PiecewisePolynomial:
    """Broken P_q (scalar) or [P_q]^3 field in the modal basis, one row per tetrahedron"""
    mesh: TetMesh
    tets: np.ndarray
    degree: int
    coefficients: np.ndarray   # (n_tets, nb) or (n_tets, nb, 3)

    def evaluate(self, k: int, xhat: np.ndarray) -> np.ndarray:
        """Values on the k-th tetrahedron of ``tets`` at reference points"""
        basis = scalar_basis(self.degree, np.atleast_2d(xhat))[0]
        return basis @ self.coefficients[k]

    def at_points(self, k: int, x: np.ndarray) -> np.ndarray:
        return self.evaluate(k, self.mesh.to_reference(int(self.tets[k]), np.atleast_2d(x)))


def l2_project(q: int, mesh: TetMesh, field: Callable, tets=None, exactness: Optional[int] = None) -> PiecewisePolynomial:
    """
    Elementwise L2-orthogonal projection onto P_q (scalar fields) or
    [P_q]^3 (vector fields, componentwise).

    Args:
        field: physical points (n, 3) -> (n,) or (n, 3)
        tets: tetrahedra of the mesh to project on (a patch), default all
    """
    if q < 0:
        raise InvalidArgumentError(f"projection degree must be >= 0, got {q}")
    tets = np.arange(mesh.n_tets) if tets is None else np.asarray(tets, dtype=int)
    exactness = data_exactness(q) if exactness is None else exactness
    rule = gauss_rule_tet(exactness)
    basis = scalar_basis(q, rule.points)[0]
    gram = np.einsum("n,ni,nj->ij", rule.weights, basis, basis)
    factor = linalg.cho_factor(gram)
    coefficients = []
    for t in tets:
        f = np.asarray(field(mesh.map_points(int(t), rule.points)), dtype=float)
        moments = np.einsum("n,ni,n...->i...", rule.weights, basis, f)
        coefficients.append(linalg.cho_solve(factor, moments))
    return PiecewisePolynomial(mesh, tets, q, np.array(coefficients))


def rt_interpolate(q: int, mesh: TetMesh, t: int, field: Callable) -> np.ndarray:
    """
    Canonical RT_q interpolate of ``field`` on tetrahedron t: face moments
    against P_q(F) and interior moments against [P_{q-1}(K)]^3 are matched.

    Returns:
        local coefficients in the RT_q shape functions of t
    """
    return ElementShapeSet("RT", q, mesh, t).dofs(field)[:, 0]


def interpolate(space: GlobalFeSpace, field) -> CoefficientField:
    """
    Canonical interpolate into a global space. ``field`` is a callable on
    physical points or a CoefficientField on the same mesh.
    """
    mesh = space.mesh
    values = np.zeros(space.n_dofs)
    for t in range(mesh.n_tets):
        if isinstance(field, CoefficientField):
            source = lambda x, t=t: evaluate_field(field, t, mesh.to_reference(t, x))[0]
        else:
            source = field
        values[space.cell_dofs[t]] = dof_functionals(space.kind, space.degree, mesh.vertices[mesh.tets[t]], source)[:, 0]
    return CoefficientField(space, values)


# Trace continuity

def face_traces(field: CoefficientField, f: int, exactness: Optional[int] = None):
    """
    Values of the field on face f seen from each owner tetrahedron, at the
    same physical points, with the unit normal of the face.
    """
    space, mesh = field.space, field.space.mesh
    exactness = default_exactness(space.degree) if exactness is None else exactness
    traces = []
    for t in mesh.face_tets[f]:
        if t < 0:
            continue
        local = int(np.flatnonzero(mesh.tet_faces[t] == f)[0])
        _, values, diffs = face_tabulation(space.kind, space.degree, local, exactness)
        values, _ = piola(space.kind, mesh, t, values, diffs)
        traces.append(np.tensordot(field.local(t), values, axes=([0], [1])))
    v = mesh.vertices[mesh.faces[f]]
    normal = np.cross(v[1] - v[0], v[2] - v[0])
    return traces, normal / np.linalg.norm(normal)


def trace_jump(kind: str, first: np.ndarray, second: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Pointwise jump of the trace relevant for the space kind"""
    jump = first - second
    if kind == "P":
        return np.abs(jump)
    normal_part = jump @ normal
    if kind == "RT":
        return np.abs(normal_part)
    return np.linalg.norm(jump - normal_part[:, None] * normal, axis=1)


def max_trace_jump(field: CoefficientField, faces=None, exactness: Optional[int] = None) -> float:
    """Largest trace jump (full, tangential or normal) over interior faces"""
    mesh = field.space.mesh
    faces = mesh.interior_faces if faces is None else faces
    worst = 0.0
    for f in faces:
        traces, normal = face_traces(field, int(f), exactness)
        if len(traces) == 2:
            worst = max(worst, float(trace_jump(field.space.kind, traces[0], traces[1], normal).max()))
    return worst


def squared_norms(mesh: TetMesh, func: Callable, exactness: int, tets=None) -> np.ndarray:
    """Per-tetrahedron squared L2 norms of a callable (scalar or vector valued)"""
    tets = np.arange(mesh.n_tets) if tets is None else np.asarray(tets, dtype=int)
    rule = gauss_rule_tet(exactness)
    norms = np.empty(tets.size)
    for k, t in enumerate(tets):
        values = np.asarray(func(mesh.map_points(int(t), rule.points)), dtype=float).reshape(rule.n_points, -1)
        norms[k] = abs(mesh.dets[t]) * rule.weights @ np.sum(values ** 2, axis=1)
    return norms
