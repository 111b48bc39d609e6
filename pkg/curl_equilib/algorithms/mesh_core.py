"""
Tetrahedral meshes: construction, structured generators, the ASCII mesh
format, vertex patches and hat functions.
"""
import logging
from dataclasses import replace
from typing import Callable, Mapping, Optional

import numpy as np
from scipy.spatial.distance import pdist

from ..config import Config
from ..constants import (
    BOUNDARY_TAGS, DIRICHLET, LOCAL_EDGES, LOCAL_FACE_EDGES, LOCAL_FACES, NEUMANN,
    PATCH_DIRICHLET, PATCH_INTERIOR, PATCH_NEUMANN, VALID_BOUNDARY_TAGS,
)
from ..exceptions import InvalidArgumentError, MeshFormatError, MeshTopologyError
from ..models import SubMesh, TetMesh, VertexPatch

logger = logging.getLogger(__name__)

_LOCAL_EDGES = np.array(LOCAL_EDGES)
_LOCAL_FACES = np.array(LOCAL_FACES)
_FACE_EDGES = np.array(LOCAL_FACE_EDGES)
_OPPOSITE = np.array([3, 2, 1, 0])  # local vertex not on local face l

PointPredicate = Callable[[np.ndarray], bool]


def build_mesh(vertices, tets, boundary_tags: Optional[Mapping] = None,
               default_tag: str = DIRICHLET,
               neumann_where: Optional[PointPredicate] = None,
               check_hanging: bool = False,
               degenerate_ratio: float = Config.DEGENERATE_VOLUME_RATIO) -> TetMesh:
    """
    Build a TetMesh from coordinates and connectivity.

    Boundary faces take their tag from ``boundary_tags`` (sorted vertex triple
    -> tag) when given, otherwise ``neumann_where(centroid)`` selects Neumann
    faces and the rest get ``default_tag``.
    """
    vertices = np.array(vertices, dtype=float)
    raw = np.array(tets, dtype=int)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise InvalidArgumentError("vertices must be an (n, 3) array")
    if raw.ndim != 2 or raw.shape[1] != 4 or raw.shape[0] == 0:
        raise InvalidArgumentError("tets must be a non-empty (m, 4) array")
    if raw.min() < 0 or raw.max() >= vertices.shape[0]:
        raise MeshTopologyError("tet references a vertex index out of range")

    tets = np.sort(raw, axis=1)
    repeated = np.flatnonzero(np.any(tets[:, 1:] == tets[:, :-1], axis=1))
    if repeated.size:
        raise MeshTopologyError(f"degenerate element {int(repeated[0])}: repeated vertex index")
    used = np.bincount(tets.ravel(), minlength=vertices.shape[0])
    if np.any(used == 0):
        raise MeshTopologyError(f"vertex {int(np.flatnonzero(used == 0)[0])} is not used by any tetrahedron")

    n_tets = tets.shape[0]
    edges, tet_edges = _unique_rows(tets[:, _LOCAL_EDGES].reshape(-1, 2))
    tet_edges = tet_edges.reshape(n_tets, 6)
    faces, tet_faces = _unique_rows(tets[:, _LOCAL_FACES].reshape(-1, 3))
    tet_faces = tet_faces.reshape(n_tets, 4)

    owners = np.bincount(tet_faces.ravel(), minlength=faces.shape[0])
    if np.any(owners > 2):
        f = int(np.flatnonzero(owners > 2)[0])
        raise MeshTopologyError(f"non-manifold/bad boundary: face {tuple(faces[f])} shared by {owners[f]} tetrahedra")
    face_tets = -np.ones((faces.shape[0], 2), dtype=int)
    order = np.argsort(tet_faces.ravel(), kind="stable")
    slots = tet_faces.ravel()[order]
    first = np.ones(order.size, dtype=bool)
    first[1:] = slots[1:] != slots[:-1]
    face_tets[slots[first], 0] = order[first] // 4
    face_tets[slots[~first], 1] = order[~first] // 4

    face_edges = np.empty((faces.shape[0], 3), dtype=int)
    face_edges[tet_faces] = tet_edges[:, _FACE_EDGES]

    # geometry
    corners = vertices[tets]
    jacobians = (corners[:, 1:, :] - corners[:, :1, :]).transpose(0, 2, 1)
    dets = np.linalg.det(jacobians)
    diameters = np.linalg.norm(
        corners[:, _LOCAL_EDGES[:, 1], :] - corners[:, _LOCAL_EDGES[:, 0], :], axis=2
    ).max(axis=1)
    volumes = np.abs(dets) / 6.0
    degenerate = np.flatnonzero(volumes <= degenerate_ratio * diameters ** 3)
    if degenerate.size:
        raise MeshTopologyError(f"degenerate element {int(degenerate[0])}: volume below tolerance")
    inv_jacobians = np.linalg.inv(jacobians)
    face_vectors = corners[:, _LOCAL_FACES, :]
    areas = 0.5 * np.linalg.norm(np.cross(face_vectors[:, :, 1] - face_vectors[:, :, 0],
                                          face_vectors[:, :, 2] - face_vectors[:, :, 0]), axis=2)
    inradii = 3.0 * volumes / areas.sum(axis=1)

    _check_face_sides(vertices, tets, faces, tet_faces, face_tets)

    face_tags = np.full(faces.shape[0], "", dtype="<U9")
    boundary = np.flatnonzero(face_tets[:, 1] < 0)
    if boundary_tags is not None:
        keyed = {tuple(sorted(int(v) for v in key)): tag for key, tag in boundary_tags.items()}
        boundary_keys = {tuple(int(v) for v in faces[f]): f for f in boundary}
        for key, tag in keyed.items():
            if key not in boundary_keys:
                raise MeshTopologyError(f"non-manifold/bad boundary: face {key} listed as boundary is not a boundary face")
            if tag not in VALID_BOUNDARY_TAGS:
                raise MeshTopologyError(f"face {key}: unknown boundary tag {tag!r}")
            face_tags[boundary_keys[key]] = tag
        missing = [key for key in boundary_keys if key not in keyed]
        if missing:
            raise MeshTopologyError(f"untagged boundary face {missing[0]}")
    else:
        for f in boundary:
            centroid = vertices[faces[f]].mean(axis=0)
            neumann = neumann_where is not None and bool(neumann_where(centroid))
            face_tags[f] = NEUMANN if neumann else default_tag

    if check_hanging:
        _check_hanging_vertices(vertices, faces[boundary], float(diameters.max()))

    flat = tets.ravel()
    vertex_tet_indices = np.argsort(flat, kind="stable") // 4
    vertex_tet_offsets = np.concatenate([[0], np.cumsum(used)])

    return TetMesh(
        vertices=vertices, tets=tets, edges=edges, faces=faces, tet_edges=tet_edges,
        tet_faces=tet_faces, face_edges=face_edges, face_tets=face_tets, face_tags=face_tags,
        jacobians=jacobians, dets=dets, inv_jacobians=inv_jacobians, volumes=volumes,
        diameters=diameters, inradii=inradii,
        vertex_tet_offsets=vertex_tet_offsets, vertex_tet_indices=vertex_tet_indices,
    )


def _unique_rows(rows: np.ndarray):
    unique, inverse = np.unique(rows, axis=0, return_inverse=True)
    return unique, inverse.reshape(-1)


def _outward_normals(vertices, tets):
    """Area-weighted outward normals of the four local faces, (nt, 4, 3)"""
    corners = vertices[tets]
    face_corners = corners[:, _LOCAL_FACES, :]
    normals = 0.5 * np.cross(face_corners[:, :, 1] - face_corners[:, :, 0],
                             face_corners[:, :, 2] - face_corners[:, :, 0])
    towards_opposite = corners[:, _OPPOSITE, :] - face_corners[:, :, 0]
    flip = np.einsum("tfi,tfi->tf", normals, towards_opposite) > 0
    normals[flip] *= -1.0
    return normals


def outward_normals(mesh: TetMesh, tets=None) -> np.ndarray:
    """Area-weighted outward normals (nt, 4, 3) of all or some tetrahedra"""
    tets = mesh.tets if tets is None else mesh.tets[np.atleast_1d(tets)]
    return _outward_normals(mesh.vertices, tets)


def _check_face_sides(vertices, tets, faces, tet_faces, face_tets):
    """Both owners of an interior face must lie on opposite sides of it"""
    interior = np.flatnonzero(face_tets[:, 1] >= 0)
    if interior.size == 0:
        return
    normals = _outward_normals(vertices, tets)
    local = np.argmax(tet_faces[face_tets[interior]] == interior[:, None, None], axis=2)
    n0 = normals[face_tets[interior, 0], local[:, 0]]
    n1 = normals[face_tets[interior, 1], local[:, 1]]
    same_side = np.einsum("fi,fi->f", n0, n1) > 0
    if np.any(same_side):
        f = interior[np.flatnonzero(same_side)[0]]
        raise MeshTopologyError(f"non-conforming connectivity: overlapping tetrahedra at face {tuple(faces[f])}")


def _check_hanging_vertices(vertices, boundary_faces, h, tol=1e-10):
    for face in boundary_faces:
        v0, v1, v2 = vertices[face]
        normal = np.cross(v1 - v0, v2 - v0)
        normal /= np.linalg.norm(normal)
        offsets = vertices - v0
        on_plane = np.abs(offsets @ normal) <= tol * h
        on_plane[face] = False
        if not on_plane.any():
            continue
        basis = np.column_stack([v1 - v0, v2 - v0])
        st = np.linalg.lstsq(basis, offsets[on_plane].T, rcond=None)[0]
        inside = (st[0] >= -tol) & (st[1] >= -tol) & (st[0] + st[1] <= 1 + tol)
        if np.any(inside):
            raise MeshTopologyError(
                f"non-conforming connectivity: hanging vertex on boundary face {tuple(int(v) for v in face)}"
            )


def build_structured_box_mesh(cells, lower=(0.0, 0.0, 0.0), upper=(1.0, 1.0, 1.0),
                              keep_cube: Optional[PointPredicate] = None,
                              neumann_where: Optional[PointPredicate] = None) -> TetMesh:
    """
    Box mesh of cubes, each cut into 6 pyramids over its faces with apex at
    the cube barycenter and each pyramid into 4 tetrahedra via its face center.

    Args:
        cells: cube counts (nx, ny, nz)
        lower, upper: box corners
        keep_cube: optional predicate on cube centers; cubes failing it are dropped
        neumann_where: optional predicate on boundary face centroids selecting Gamma_N
    """
    cells = np.array(cells, dtype=int)
    if cells.shape != (3,) or np.any(cells < 1):
        raise InvalidArgumentError(f"cell counts must be three positive integers, got {cells.tolist()}")
    lower = np.array(lower, dtype=float)
    step = (np.array(upper, dtype=float) - lower) / cells

    keys, tets = [], []
    for i, j, k in np.ndindex(*cells):
        corner = np.array([i, j, k])
        if keep_cube is not None and not keep_cube(lower + (corner + 0.5) * step):
            continue
        center = 2 * corner + 1
        for axis in range(3):
            b, c = [a for a in range(3) if a != axis]
            for side in (0, 1):
                face_center = center.copy()
                face_center[axis] = 2 * (corner[axis] + side)
                ring = []
                for db, dc in ((0, 0), (1, 0), (1, 1), (0, 1)):
                    point = 2 * corner
                    point[axis] += 2 * side
                    point[b] += 2 * db
                    point[c] += 2 * dc
                    ring.append(point)
                for m in range(4):
                    tet = [ring[m], ring[(m + 1) % 4], face_center, center]
                    tets.append(range(len(keys), len(keys) + 4))
                    keys.extend(tet)
    if not tets:
        raise InvalidArgumentError("keep_cube removed every cube")

    unique, inverse = np.unique(np.array(keys), axis=0, return_inverse=True)
    connectivity = inverse.reshape(-1)[np.array([list(t) for t in tets])]
    coordinates = lower + unique * (step / 2.0)
    mesh = build_mesh(coordinates, connectivity, neumann_where=neumann_where)
    return replace(mesh, nominal_h=float(np.linalg.norm(step)) / 2.0)


def build_structured_cube_mesh(N: int, neumann_where: Optional[PointPredicate] = None) -> TetMesh:
    """Unit cube with N^3 cubes, 24 N^3 tetrahedra and h = sqrt(3) / (2N)"""
    if int(N) != N or N < 1:
        raise InvalidArgumentError(f"N must be a positive integer, got {N!r}")
    mesh = build_structured_box_mesh((N, N, N), neumann_where=neumann_where)
    logger.debug("structured cube mesh N=%d: %d vertices, %d tets", N, mesh.n_vertices, mesh.n_tets)
    return mesh


def build_lshape_mesh(N: int, neumann_where: Optional[PointPredicate] = None) -> TetMesh:
    """L x (0, 1) with L = (-1, 1)^2 minus the quadrant x > 0, y < 0; cubes of side 1/N"""
    if int(N) != N or N < 1:
        raise InvalidArgumentError(f"N must be a positive integer, got {N!r}")
    return build_structured_box_mesh(
        (2 * N, 2 * N, N), lower=(-1.0, -1.0, 0.0), upper=(1.0, 1.0, 1.0),
        keep_cube=lambda c: not (c[0] > 0 and c[1] < 0), neumann_where=neumann_where,
    )


# ASCII format

def _tokens(path):
    with open(path, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            content = line.split("#", 1)[0].split()
            if content:
                yield number, content


def load_mesh(path, boundary_spec: Optional[Mapping[str, str]] = None) -> TetMesh:
    """
    Read a mesh in the ASCII format:

        tetmesh 1
        vertices <n>      then n lines "x y z"
        tets <m>          then m lines of 4 zero-based vertex indices
        boundary <k>      then k lines "v0 v1 v2 tag"

    Args:
        path: file path
        boundary_spec: maps file tags to boundary kinds, default {"D": dirichlet, "N": neumann}
    """
    spec = dict(boundary_spec) if boundary_spec else {key: tag["value"] for key, tag in BOUNDARY_TAGS.items()}
    lines = _tokens(path)

    def next_line(expected):
        try:
            return next(lines)
        except StopIteration:
            raise MeshFormatError(f"unexpected end of file, expected {expected}") from None

    def section(name):
        number, content = next_line(f"'{name} <count>'")
        if len(content) != 2 or content[0] != name:
            raise MeshFormatError(f"expected '{name} <count>', got {' '.join(content)!r}", number)
        try:
            count = int(content[1])
        except ValueError:
            raise MeshFormatError(f"bad count {content[1]!r}", number) from None
        if count < 0:
            raise MeshFormatError(f"negative count {count}", number)
        return count

    number, header = next_line("header 'tetmesh 1'")
    if header != ["tetmesh", "1"]:
        raise MeshFormatError(f"bad header {' '.join(header)!r}, expected 'tetmesh 1'", number)

    vertices = []
    for _ in range(section("vertices")):
        number, content = next_line("vertex coordinates")
        try:
            if len(content) != 3:
                raise ValueError
            vertices.append([float(x) for x in content])
        except ValueError:
            raise MeshFormatError(f"expected 3 coordinates, got {' '.join(content)!r}", number) from None

    tets = []
    for _ in range(section("tets")):
        number, content = next_line("tet vertex indices")
        try:
            if len(content) != 4:
                raise ValueError
            tet = [int(v) for v in content]
        except ValueError:
            raise MeshFormatError(f"expected 4 vertex indices, got {' '.join(content)!r}", number) from None
        if min(tet) < 0 or max(tet) >= len(vertices):
            raise MeshFormatError(f"vertex index out of range in {tet}", number)
        tets.append(tet)

    tags = {}
    for _ in range(section("boundary")):
        number, content = next_line("boundary face")
        if len(content) != 4:
            raise MeshFormatError(f"expected 'v0 v1 v2 tag', got {' '.join(content)!r}", number)
        try:
            key = tuple(sorted(int(v) for v in content[:3]))
        except ValueError:
            raise MeshFormatError(f"bad boundary face indices {content[:3]}", number) from None
        if content[3] not in spec:
            raise MeshFormatError(f"unknown boundary tag {content[3]!r}", number)
        if key in tags:
            raise MeshFormatError(f"boundary face {key} listed twice", number)
        tags[key] = spec[content[3]]

    trailing = next(lines, None)
    if trailing is not None:
        raise MeshFormatError(f"unexpected content {' '.join(trailing[1])!r}", trailing[0])

    mesh = build_mesh(vertices, tets, boundary_tags=tags, check_hanging=True)
    logger.info("loaded %s: %d vertices, %d tets, %d boundary faces",
                path, mesh.n_vertices, mesh.n_tets, mesh.boundary_faces.size)
    return mesh


def save_mesh(mesh: TetMesh, path) -> None:
    letters = {tag["value"]: key for key, tag in BOUNDARY_TAGS.items()}
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("tetmesh 1\n")
        handle.write(f"vertices {mesh.n_vertices}\n")
        for x, y, z in mesh.vertices:
            handle.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
        handle.write(f"tets {mesh.n_tets}\n")
        for tet in mesh.tets:
            handle.write(" ".join(str(int(v)) for v in tet) + "\n")
        boundary = mesh.boundary_faces
        handle.write(f"boundary {boundary.size}\n")
        for f in boundary:
            a, b, c = (int(v) for v in mesh.faces[f])
            handle.write(f"{a} {b} {c} {letters[mesh.face_tags[f]]}\n")


# Patches and hat functions

def vertex_patch(mesh: TetMesh, a: int) -> VertexPatch:
    if not 0 <= a < mesh.n_vertices:
        raise InvalidArgumentError(f"vertex {a} out of range")
    tets = np.sort(mesh.tets_of_vertex(a))
    vertices = np.unique(mesh.tets[tets])

    patch_faces, counts = np.unique(mesh.tet_faces[tets].ravel(), return_counts=True)
    boundary_faces = patch_faces[counts == 1]

    at_vertex = patch_faces[np.any(mesh.faces[patch_faces] == a, axis=1)]
    domain_faces = at_vertex[mesh.face_tets[at_vertex, 1] < 0]
    dirichlet_faces = domain_faces[mesh.face_tags[domain_faces] == DIRICHLET]
    if domain_faces.size == 0:
        kind = PATCH_INTERIOR
    elif dirichlet_faces.size == 0:
        kind = PATCH_NEUMANN
    else:
        kind = PATCH_DIRICHLET

    extended = np.unique(np.concatenate([mesh.tets_of_vertex(b) for b in vertices]))
    return VertexPatch(
        center=int(a), tets=tets, vertices=vertices,
        diameter=float(pdist(mesh.vertices[vertices]).max()),
        kind=kind, boundary_faces=boundary_faces, dirichlet_faces=dirichlet_faces,
        extended_tets=extended,
    )


def hat_eval(mesh: TetMesh, a: int, K: int, x):
    """
    Value and gradient of the hat function of vertex a on tetrahedron K.

    Args:
        x: one point (3,) or points (n, 3) in K

    Returns:
        (value, gradient) with value scalar or (n,), gradient (3,)
    """
    if not 0 <= K < mesh.n_tets:
        raise InvalidArgumentError(f"tetrahedron {K} out of range")
    local = np.flatnonzero(mesh.tets[K] == a)
    if local.size == 0:
        raise InvalidArgumentError(f"tetrahedron {K} is not in the patch of vertex {a}")
    x = np.asarray(x, dtype=float)
    xhat = mesh.to_reference(K, np.atleast_2d(x))
    barycentric = np.hstack([1.0 - xhat.sum(axis=1, keepdims=True), xhat])
    value = barycentric[:, local[0]]
    gradient = mesh.barycentric_gradients(K)[local[0]]
    return (float(value[0]) if x.ndim == 1 else value), gradient


def validate_patch_geometry(mesh: TetMesh) -> list:
    """
    Boundary vertices violating the boundary-patch geometry assumption:
    a patch of more than two tetrahedra whose boundary has a face away from
    the vertex with no vertex in the interior of the domain.
    """
    on_boundary = mesh.boundary_vertex_mask
    violators = []
    for a in np.flatnonzero(on_boundary):
        patch = vertex_patch(mesh, int(a))
        if patch.tets.size <= 2:
            continue
        faces = mesh.faces[patch.boundary_faces]
        away = faces[~np.any(faces == a, axis=1)]
        if np.any(np.all(on_boundary[away], axis=1)):
            violators.append(int(a))
    if violators:
        logger.warning("boundary patch geometry assumption violated at %d vertices: %s",
                       len(violators), violators[:10])
    return violators


def submesh(mesh: TetMesh, tet_ids) -> SubMesh:
    """
    Mesh of the given tetrahedra. Faces on the boundary of the parent keep
    their tag; faces that are boundary only in the submesh are tagged Neumann.
    """
    tet_ids = np.sort(np.asarray(tet_ids, dtype=int))
    parent_vertices, local = np.unique(mesh.tets[tet_ids], return_inverse=True)
    sub = build_mesh(mesh.vertices[parent_vertices], local.reshape(-1, 4), default_tag=NEUMANN)

    parent_faces = np.empty(sub.n_faces, dtype=int)
    parent_faces[sub.tet_faces] = mesh.tet_faces[tet_ids]
    parent_edges = np.empty(sub.n_edges, dtype=int)
    parent_edges[sub.tet_edges] = mesh.tet_edges[tet_ids]

    tags = sub.face_tags.copy()
    outer = sub.boundary_faces
    on_domain = mesh.face_tets[parent_faces[outer], 1] < 0
    tags[outer[on_domain]] = mesh.face_tags[parent_faces[outer[on_domain]]]
    fields = {name: getattr(sub, name) for name in sub.__dataclass_fields__}
    fields["face_tags"] = tags
    return SubMesh(TetMesh(**fields), tet_ids, parent_vertices, parent_edges, parent_faces)


def patch_submesh(mesh: TetMesh, patch: VertexPatch) -> SubMesh:
    return submesh(mesh, patch.tets)
