import numpy as np
import pytest
from scipy import linalg, sparse

from curl_equilib.algorithms.linalg_kernel import (
    ConstrainedLsProblem, SparseSymMatrix, dense_nullspace_qp, dump_problem, factor_solve, maybe_dump,
    solve_constrained_ls,
)
from curl_equilib.exceptions import FactorizationError, InfeasibleConstraintsError, InvalidArgumentError


def _random_problem(rng, n=12, m=5):
    """Consistent problem with SPD mass and one duplicated constraint row"""
    G = rng.standard_normal((n, n))
    mass = G.T @ G + np.eye(n)
    C = rng.standard_normal((m, n))
    C = np.vstack([C, C[:1]])
    feasible = rng.standard_normal(n)
    return ConstrainedLsProblem(sparse.csr_matrix(mass), rng.standard_normal(n), sparse.csr_matrix(C), C @ feasible)


def test_factor_solve_identity():
    b = np.arange(4.0)
    np.testing.assert_allclose(factor_solve(sparse.eye(4, format="csr"), b), b)


def test_factor_solve_two_by_two():
    x = factor_solve(np.array([[2.0, 1.0], [1.0, 2.0]]), np.ones(2))
    np.testing.assert_allclose(x, [1.0 / 3.0, 1.0 / 3.0], atol=1e-15)


@pytest.mark.parametrize("n", [50, 600])
def test_factor_solve_random_spd(n):
    rng = np.random.default_rng(n)
    G = sparse.random(n, n, density=0.05, random_state=n)
    matrix = (G.T @ G + sparse.eye(n)).tocsr()
    b = rng.standard_normal((n, 2))
    x = factor_solve(SparseSymMatrix(matrix), b)
    assert np.linalg.norm(matrix @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_factor_solve_singular():
    with pytest.raises(FactorizationError):
        factor_solve(np.ones((2, 2)), np.ones(2))


def test_non_symmetric_rejected():
    with pytest.raises(InvalidArgumentError):
        SparseSymMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_unconstrained_is_plain_projection():
    mass = np.array([[4.0, 1.0], [1.0, 3.0]])
    target = np.array([1.0, 2.0])
    v = solve_constrained_ls(ConstrainedLsProblem(mass, target))
    np.testing.assert_allclose(mass @ v, target, atol=1e-14)


def test_projection_onto_hyperplane():
    problem = ConstrainedLsProblem(np.eye(2), np.zeros(2), np.array([[1.0, 1.0]]), np.array([2.0]))
    np.testing.assert_allclose(solve_constrained_ls(problem), [1.0, 1.0], atol=1e-12)


def test_duplicate_rows_leave_primal_unchanged():
    single = ConstrainedLsProblem(np.eye(3), np.array([1.0, -1.0, 0.5]), np.array([[1.0, 1.0, 1.0]]), np.array([2.0]))
    doubled = ConstrainedLsProblem(np.eye(3), single.target, np.array([[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]]),
                                   np.array([2.0, 4.0]))
    np.testing.assert_allclose(solve_constrained_ls(doubled), solve_constrained_ls(single), atol=1e-10)


def test_inconsistent_constraints():
    problem = ConstrainedLsProblem(np.eye(2), np.zeros(2), np.array([[1.0, 0.0], [1.0, 0.0]]), np.array([1.0, 2.0]))
    with pytest.raises(InfeasibleConstraintsError) as info:
        solve_constrained_ls(problem)
    assert info.value.residual > problem.tolerance
    with pytest.raises(InfeasibleConstraintsError):
        dense_nullspace_qp(problem)


def test_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        ConstrainedLsProblem(np.eye(2), np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        ConstrainedLsProblem(np.eye(2), np.zeros(2), np.ones((1, 2)), np.zeros(2))


def test_oracle_agreement_on_random_problems():
    rng = np.random.default_rng(0)
    for _ in range(30):
        problem = _random_problem(rng)
        v = solve_constrained_ls(problem)
        reference = dense_nullspace_qp(problem)
        assert np.linalg.norm(v - reference) <= 1e-8 * np.linalg.norm(reference)
        assert problem.objective(v) == pytest.approx(problem.objective(reference), rel=1e-8, abs=1e-8)
        assert problem.constraint_residual(v) <= 1e-9


def test_residual_is_mass_orthogonal_to_null_space():
    problem = _random_problem(np.random.default_rng(1))
    v = solve_constrained_ls(problem)
    null_space = linalg.null_space(problem.constraints.toarray())
    samples = null_space @ np.random.default_rng(2).standard_normal((null_space.shape[1], 10))
    gradient = problem.mass @ v - problem.target
    assert np.abs(samples.T @ gradient).max() <= 1e-8 * np.linalg.norm(problem.target)


def test_oracle_zero_constraints():
    mass = np.diag([2.0, 4.0])
    problem = ConstrainedLsProblem(mass, np.array([2.0, 2.0]), np.zeros((1, 2)), np.zeros(1))
    np.testing.assert_allclose(dense_nullspace_qp(problem), [1.0, 0.5])


def test_oracle_fully_determined():
    d = np.array([3.0, -1.0, 2.0])
    problem = ConstrainedLsProblem(np.eye(3), np.array([10.0, 10.0, 10.0]), np.eye(3), d)
    np.testing.assert_allclose(dense_nullspace_qp(problem), d, atol=1e-12)


def test_oracle_dimension_limit():
    problem = ConstrainedLsProblem(sparse.eye(2001, format="csr"), np.zeros(2001))
    with pytest.raises(InvalidArgumentError):
        dense_nullspace_qp(problem)


def test_dump_problem(tmp_path):
    problem = _random_problem(np.random.default_rng(3), n=4, m=2)
    path = tmp_path / "problem.txt"
    dump_problem(problem, path)
    text = path.read_text(encoding="ascii")
    for section in ("mass", "target", "constraints", "rhs"):
        assert f"% section {section}" in text
    assert text.startswith("% constrained least squares")


def test_maybe_dump_creates_directory(tmp_path):
    problem = _random_problem(np.random.default_rng(4), n=4, m=2)
    maybe_dump(problem, None, "ignored.txt")
    maybe_dump(problem, str(tmp_path / "dumps"), "patch_0_theta.txt")
    assert (tmp_path / "dumps" / "patch_0_theta.txt").exists()


def test_roundoff_row_does_not_steer_minimizer():
    mass = np.diag([1.0, 2.0, 3.0])
    target = np.array([1.0, -1.0, 0.5])
    constraints = np.array([[1.0, 1.0, 1.0], [2.7e-14, -1.1e-14, 0.4e-14]])
    problem = ConstrainedLsProblem(mass, target, constraints, np.array([2.0, 1e-16]))
    single = ConstrainedLsProblem(mass, target, constraints[:1], np.array([2.0]))
    v = solve_constrained_ls(problem)
    np.testing.assert_allclose(v, dense_nullspace_qp(problem), atol=1e-12)
    np.testing.assert_allclose(v, solve_constrained_ls(single), atol=1e-12)


def test_zero_rows_are_unconstrained():
    mass = np.diag([2.0, 4.0])
    problem = ConstrainedLsProblem(mass, np.array([2.0, 2.0]), np.zeros((2, 2)), np.zeros(2))
    np.testing.assert_allclose(solve_constrained_ls(problem), [1.0, 0.5], atol=1e-14)
