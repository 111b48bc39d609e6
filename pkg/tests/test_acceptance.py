"""
End-to-end behaviour of the estimator on the manufactured cases. These runs
take minutes and are deselected by default; run them with `pytest -m slow`.
"""
import numpy as np
import pytest

from curl_equilib.algorithms import flux_equilibration as fe
from curl_equilib.algorithms import mesh_core
from curl_equilib.algorithms.linalg_kernel import dense_nullspace_qp, solve_constrained_ls
from curl_equilib.cases import const_j_case, sine_case
from curl_equilib.models import ExperimentConfig
from curl_equilib.services import EstimatorService, ExperimentService

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def const_j_100():
    return const_j_case(100)


@pytest.mark.parametrize("p,N", [(1, 1), (1, 2), (2, 1), (2, 2)])
def test_equilibration_holds(const_j_100, p, N):
    result = EstimatorService.run(mesh_core.build_structured_cube_mesh(N), p, const_j_100, verify=True)
    assert result.equilibration.flux.equilibration_residual <= 1e-10
    assert result.equilibration.flux.tangential_jump <= 1e-10
    assert all(value <= 1e-9 for value in result.checks.values())


@pytest.mark.parametrize("N", [1, 2, 4])
def test_const_j_effectivity(const_j_100, N):
    result = EstimatorService.run(mesh_core.build_structured_cube_mesh(N), 1, const_j_100)
    assert 1.0 <= result.report.effectivity <= 1.2


# with one wavelength per unit the sine solution needs N >= 4 at p = 1 before the rate settles
@pytest.mark.parametrize("case,p,mesh_n,low,high", [
    ("const_j", 1, [2, 4], 1.7, 2.3),
    ("sine", 1, [4, 8], 1.7, 2.3),
    ("sine", 2, [2, 4], 2.6, 3.4),
])
def test_observed_convergence_rates(case, p, mesh_n, low, high):
    rows = ExperimentService.run(ExperimentConfig(case=case, mesh_n=mesh_n, degrees=[p]))
    (entry,) = ExperimentService.observed_rates(rows)
    assert low <= entry["rate"] <= high


@pytest.mark.parametrize("case,low,high", [(const_j_case(100), 1.0, 1.2), (sine_case(), 0.85, 1.1)])
def test_effectivity_is_robust_in_degree(case, low, high):
    mesh = mesh_core.build_structured_cube_mesh(1)
    effectivities = [EstimatorService.run(mesh, p, case).report.effectivity for p in range(1, 5)]
    assert all(low <= value <= high for value in effectivities)
    assert max(effectivities) <= 1.1 * min(effectivities) + 0.1


def test_random_patch_problems_match_oracle(const_j_solution, const_j_equilibration):
    mesh = const_j_solution.mesh
    bundle = const_j_equilibration.bundle
    rng = np.random.default_rng(2024)
    problems = []
    for a in rng.choice(mesh.n_vertices, size=10, replace=False):
        current = bundle.patch_currents[int(a)]
        problems.append(fe.assemble_theta_problem(current.context, const_j_solution, current.current)[1])
        problems.append(fe.assemble_equilibration_problem(current)[0])
    for K in rng.choice(mesh.n_tets, size=10, replace=False):
        a = int(rng.choice(mesh.tets[K]))
        problems.append(fe.assemble_delta_element_problem(int(K), a, bundle.delta, 1, reference_flux=1.0)[0])
    for problem in problems:
        v = solve_constrained_ls(problem)
        reference = dense_nullspace_qp(problem)
        assert np.linalg.norm(v - reference) <= 1e-8 * max(np.linalg.norm(reference), 1e-12)
        assert problem.objective(v) == pytest.approx(problem.objective(reference), rel=1e-8, abs=1e-14)
