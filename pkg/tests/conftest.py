import numpy as np
import pytest

from curl_equilib import create_app
from curl_equilib.algorithms import mesh_core
from curl_equilib.algorithms.curl_curl_solver import solve_magnetic_potential
from curl_equilib.algorithms.flux_equilibration import equilibrate
from curl_equilib.cases import const_j_case
from curl_equilib.models import CurrentDensity

REFERENCE_TET = np.vstack([np.zeros(3), np.eye(3)])


def _zero_current(x):
    return np.zeros((np.atleast_2d(x).shape[0], 3))


@pytest.fixture(scope="session")
def cube1():
    return mesh_core.build_structured_cube_mesh(1)


@pytest.fixture(scope="session")
def cube2():
    return mesh_core.build_structured_cube_mesh(2)


@pytest.fixture
def single_tet():
    return mesh_core.build_mesh(REFERENCE_TET, [[0, 1, 2, 3]])


@pytest.fixture
def two_tets():
    vertices = np.vstack([REFERENCE_TET, [[1.0, 1.0, 1.0]]])
    return mesh_core.build_mesh(vertices, [[0, 1, 2, 3], [1, 2, 3, 4]])


@pytest.fixture
def random_tets():
    """Twenty well-shaped random tetrahedra, each as a one-element mesh"""
    rng = np.random.default_rng(7)
    meshes = []
    while len(meshes) < 20:
        corners = REFERENCE_TET + 0.2 * rng.standard_normal((4, 3))
        volume = abs(np.linalg.det(corners[1:] - corners[0])) / 6.0
        if volume > 0.05:
            meshes.append(mesh_core.build_mesh(corners, [[0, 1, 2, 3]]))
    return meshes


@pytest.fixture(scope="session")
def zero_current():
    return CurrentDensity(_zero_current, rt_degree=0, divergence=lambda x: np.zeros(np.atleast_2d(x).shape[0]))


@pytest.fixture(scope="session")
def const_j():
    return const_j_case(100)


@pytest.fixture(scope="session")
def const_j_solution(cube1, const_j):
    return solve_magnetic_potential(cube1, 1, const_j.current)


@pytest.fixture(scope="session")
def const_j_equilibration(const_j_solution, const_j):
    return equilibrate(const_j_solution, const_j.current, verify=True)


@pytest.fixture
def app(tmp_path):
    return create_app({"OUT": str(tmp_path / "results.csv"), "LOG_LEVEL": "WARNING"})


@pytest.fixture
def runner(app):
    return app.test_cli_runner()
