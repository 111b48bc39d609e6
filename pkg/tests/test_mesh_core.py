import math

import numpy as np
import pytest

from curl_equilib.algorithms import mesh_core
from curl_equilib.constants import DIRICHLET, NEUMANN, PATCH_DIRICHLET, PATCH_INTERIOR, PATCH_NEUMANN
from curl_equilib.exceptions import InvalidArgumentError, MeshFormatError, MeshTopologyError
from curl_equilib.helpers import random_points_in_mesh


def _vertex_at(mesh, point):
    return int(np.flatnonzero(np.all(np.isclose(mesh.vertices, point), axis=1))[0])


@pytest.mark.parametrize("N", [1, 2, 3])
def test_structured_cube_counts(N):
    mesh = mesh_core.build_structured_cube_mesh(N)
    assert mesh.n_tets == 24 * N ** 3
    assert mesh.n_vertices == (N + 1) ** 3 + 3 * N ** 2 * (N + 1) + N ** 3
    assert mesh.h == pytest.approx(math.sqrt(3.0) / (2 * N))
    # Euler characteristic of a ball
    assert mesh.n_vertices - mesh.n_edges + mesh.n_faces - mesh.n_tets == 1
    assert mesh.volumes.sum() == pytest.approx(1.0, abs=1e-12)


def test_cube_defaults_to_dirichlet(cube1):
    assert cube1.boundary_faces.size == 24
    assert set(cube1.face_tags[cube1.boundary_faces]) == {DIRICHLET}
    assert set(cube1.face_tags[cube1.interior_faces]) == {""}


def test_neumann_predicate_tags_top_face():
    mesh = mesh_core.build_structured_cube_mesh(1, neumann_where=lambda c: c[2] > 1.0 - 1e-12)
    assert mesh.faces_tagged(NEUMANN).size == 4
    assert mesh.faces_tagged(DIRICHLET).size == 20


@pytest.mark.parametrize("N", [0, -1, 1.5])
def test_invalid_cube_size(N):
    with pytest.raises(InvalidArgumentError):
        mesh_core.build_structured_cube_mesh(N)


def test_tet_rows_are_sorted(cube2):
    assert np.all(np.diff(cube2.tets, axis=1) > 0)
    assert np.all(cube2.edges[:, 0] < cube2.edges[:, 1])


def test_interior_faces_have_opposite_normals(cube2):
    normals = mesh_core.outward_normals(cube2)
    for f in cube2.interior_faces:
        t0, t1 = cube2.face_tets[f]
        l0 = int(np.flatnonzero(cube2.tet_faces[t0] == f)[0])
        l1 = int(np.flatnonzero(cube2.tet_faces[t1] == f)[0])
        np.testing.assert_allclose(normals[t0, l0], -normals[t1, l1], atol=1e-14)


def test_outward_normals_of_subset(cube1):
    np.testing.assert_array_equal(mesh_core.outward_normals(cube1, 3)[0], mesh_core.outward_normals(cube1)[3])


def test_lshape_mesh_volume():
    mesh = mesh_core.build_lshape_mesh(1)
    assert mesh.n_tets == 3 * 24
    assert mesh.volumes.sum() == pytest.approx(3.0)
    centroids = mesh.vertices[mesh.tets].mean(axis=1)
    assert not np.any((centroids[:, 0] > 0) & (centroids[:, 1] < 0))
    assert mesh.h == pytest.approx(math.sqrt(3.0) / 2.0)


def test_unstructured_h_is_largest_diameter(cube1, tmp_path):
    path = tmp_path / "cube.mesh"
    mesh_core.save_mesh(cube1, path)
    loaded = mesh_core.load_mesh(path)
    assert loaded.nominal_h is None
    assert loaded.h == pytest.approx(1.0)
    assert cube1.diameters.max() == pytest.approx(1.0)


# Patches

def test_center_patch_is_interior(cube1):
    a = _vertex_at(cube1, [0.5, 0.5, 0.5])
    patch = mesh_core.vertex_patch(cube1, a)
    assert patch.tets.size == 24
    assert patch.kind == PATCH_INTERIOR
    assert patch.boundary_faces.size == 24
    assert patch.constrained_faces.size == 24


def test_corner_patch_is_dirichlet(cube1):
    patch = mesh_core.vertex_patch(cube1, _vertex_at(cube1, [0.0, 0.0, 0.0]))
    assert patch.kind == PATCH_DIRICHLET
    assert patch.dirichlet_faces.size == 6
    assert np.all(np.any(cube1.faces[patch.dirichlet_faces] == patch.center, axis=1))
    assert patch.constrained_faces.size == patch.boundary_faces.size - 6


def test_face_center_patch(cube1):
    patch = mesh_core.vertex_patch(cube1, _vertex_at(cube1, [0.5, 0.5, 0.0]))
    assert patch.tets.size == 4
    assert patch.extended_tets.size == 24


def test_neumann_vertex_classification():
    mesh = mesh_core.build_structured_cube_mesh(2, neumann_where=lambda c: c[2] > 1.0 - 1e-12)
    patch = mesh_core.vertex_patch(mesh, _vertex_at(mesh, [0.5, 0.5, 1.0]))
    assert patch.kind == PATCH_NEUMANN
    assert patch.dirichlet_faces.size == 0


def test_vertex_out_of_range(cube1):
    with pytest.raises(InvalidArgumentError):
        mesh_core.vertex_patch(cube1, cube1.n_vertices)


# Hat functions

def test_hat_at_own_vertex_and_barycenter(cube1):
    K = 5
    a = int(cube1.tets[K, 2])
    value, _ = mesh_core.hat_eval(cube1, a, K, cube1.vertices[a])
    assert value == pytest.approx(1.0)
    value, _ = mesh_core.hat_eval(cube1, a, K, cube1.vertices[cube1.tets[K]].mean(axis=0))
    assert value == pytest.approx(0.25)


def test_hat_partition_of_unity(cube2):
    rng = np.random.default_rng(3)
    for K in rng.integers(0, cube2.n_tets, size=100):
        x = rng.dirichlet(np.ones(4)) @ cube2.vertices[cube2.tets[K]]
        values, gradients = zip(*(mesh_core.hat_eval(cube2, int(a), int(K), x) for a in cube2.tets[K]))
        assert abs(sum(values) - 1.0) <= 1e-13
        assert np.linalg.norm(np.sum(gradients, axis=0)) <= 1e-12


def test_hat_outside_patch(cube1):
    a = _vertex_at(cube1, [0.0, 0.0, 0.0])
    K = int(np.setdiff1d(np.arange(cube1.n_tets), cube1.tets_of_vertex(a))[0])
    with pytest.raises(InvalidArgumentError):
        mesh_core.hat_eval(cube1, a, K, cube1.vertices[cube1.tets[K]].mean(axis=0))


# Patch geometry

def test_patch_geometry_structured(cube1):
    assert mesh_core.validate_patch_geometry(cube1) == []


def test_patch_geometry_single_and_two_tets(single_tet, two_tets):
    assert mesh_core.validate_patch_geometry(single_tet) == []
    assert mesh_core.validate_patch_geometry(two_tets) == []
    assert mesh_core.vertex_patch(two_tets, 1).tets.size == 2


# Submeshes

def test_submesh_keeps_local_ordering(cube1):
    patch = mesh_core.vertex_patch(cube1, _vertex_at(cube1, [0.0, 0.0, 0.0]))
    sub = mesh_core.patch_submesh(cube1, patch)
    np.testing.assert_array_equal(sub.parent_faces[sub.mesh.tet_faces], cube1.tet_faces[patch.tets])
    np.testing.assert_array_equal(sub.parent_edges[sub.mesh.tet_edges], cube1.tet_edges[patch.tets])
    np.testing.assert_array_equal(sub.parent_vertices[sub.mesh.tets], cube1.tets[patch.tets])
    on_domain = cube1.face_tets[sub.parent_faces[sub.mesh.boundary_faces], 1] < 0
    tags = sub.mesh.face_tags[sub.mesh.boundary_faces]
    assert set(tags[on_domain]) == {DIRICHLET}
    assert set(tags[~on_domain]) == {NEUMANN}


# Construction errors

def test_repeated_vertex_is_degenerate():
    with pytest.raises(MeshTopologyError, match="degenerate element"):
        mesh_core.build_mesh(np.eye(4, 3), [[0, 0, 1, 2]])


def test_flat_tet_is_degenerate():
    vertices = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]
    with pytest.raises(MeshTopologyError, match="degenerate element"):
        mesh_core.build_mesh(vertices, [[0, 1, 2, 3]])


def test_overlapping_tets_rejected():
    vertices = np.vstack([np.zeros(3), np.eye(3), [[0.1, 0.1, 0.1]]])
    with pytest.raises(MeshTopologyError, match="non-conforming"):
        mesh_core.build_mesh(vertices, [[0, 1, 2, 3], [1, 2, 3, 4]])


# ASCII format

def test_save_load_round_trip(cube1, tmp_path):
    path = tmp_path / "cube.mesh"
    mesh_core.save_mesh(cube1, path)
    assert "np." not in path.read_text(encoding="utf-8")
    loaded = mesh_core.load_mesh(path)
    np.testing.assert_array_equal(loaded.vertices, cube1.vertices)
    np.testing.assert_array_equal(loaded.tets, cube1.tets)
    np.testing.assert_array_equal(loaded.face_tags, cube1.face_tags)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


TWO_TETS = """tetmesh 1
vertices 5   # two tets sharing face 1 2 3
0 0 0
1 0 0
0 1 0
0 0 1
1 1 1
tets 2
0 1 2 3
1 2 3 4
boundary {count}
{faces}
"""
OUTER_FACES = ["0 1 2 D", "0 1 3 D", "0 2 3 N", "1 2 4 D", "1 3 4 D", "2 3 4 D"]


def test_load_mixed_tags(tmp_path):
    path = _write(tmp_path / "two.mesh", TWO_TETS.format(count=6, faces="\n".join(OUTER_FACES)))
    mesh = mesh_core.load_mesh(path)
    assert mesh.n_tets == 2
    assert mesh.faces_tagged(NEUMANN).size == 1


def test_load_interior_face_as_boundary(tmp_path):
    faces = OUTER_FACES + ["1 2 3 D"]
    path = _write(tmp_path / "bad.mesh", TWO_TETS.format(count=7, faces="\n".join(faces)))
    with pytest.raises(MeshTopologyError, match="non-manifold/bad boundary"):
        mesh_core.load_mesh(path)


def test_load_untagged_boundary_face(tmp_path):
    path = _write(tmp_path / "bad.mesh", TWO_TETS.format(count=5, faces="\n".join(OUTER_FACES[:5])))
    with pytest.raises(MeshTopologyError, match="untagged boundary face"):
        mesh_core.load_mesh(path)


def test_load_repeated_vertex(tmp_path):
    text = TWO_TETS.format(count=6, faces="\n".join(OUTER_FACES)).replace("1 2 3 4", "1 2 2 4")
    with pytest.raises(MeshTopologyError, match="degenerate element"):
        mesh_core.load_mesh(_write(tmp_path / "bad.mesh", text))


def test_load_reports_line_number(tmp_path):
    text = TWO_TETS.format(count=6, faces="\n".join(OUTER_FACES)).replace("0 1 0", "0 one 0")
    with pytest.raises(MeshFormatError) as info:
        mesh_core.load_mesh(_write(tmp_path / "bad.mesh", text))
    assert info.value.line == 5
    assert "line 5" in str(info.value)


def test_load_bad_header(tmp_path):
    with pytest.raises(MeshFormatError, match="bad header"):
        mesh_core.load_mesh(_write(tmp_path / "bad.mesh", "tetmesh 2\n"))


def test_random_points_are_inside(cube2):
    points = random_points_in_mesh(cube2, 50, seed=1)
    assert np.all((points >= 0.0) & (points <= 1.0))
    np.testing.assert_array_equal(points, random_points_in_mesh(cube2, 50, seed=1))
