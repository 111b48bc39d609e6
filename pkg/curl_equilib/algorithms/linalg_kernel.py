"""
Direct solvers for the small symmetric systems of the estimator.

solve_constrained_ls minimizes v^T M v - 2 v^T t subject to C v = d with
the regularized KKT matrix [[M, C^T], [C, -eps I]] and iterative refinement
against the unregularized system. Redundant but consistent constraint rows
are harmless: they only make the multiplier non-unique.
"""
import io
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import io as spio
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from ..config import Config
from ..exceptions import FactorizationError, InfeasibleConstraintsError, InvalidArgumentError

logger = logging.getLogger(__name__)

ORACLE_DIMENSION_LIMIT = 2000


class SparseSymMatrix:
    """Symmetric matrix in CSR layout"""

    def __init__(self, matrix, tolerance: float = 1e-12):
        self.matrix = sparse.csr_matrix(matrix, dtype=float)
        rows, cols = self.matrix.shape
        if rows != cols:
            raise InvalidArgumentError(f"matrix is {rows}x{cols}, expected square")
        if not np.all(np.isfinite(self.matrix.data)):
            raise InvalidArgumentError("matrix has non-finite entries")
        asymmetry = abs(self.matrix - self.matrix.T).max() if self.matrix.nnz else 0.0
        self.symmetric = bool(asymmetry <= tolerance * max(self.scale, 1e-300))
        if not self.symmetric:
            raise InvalidArgumentError(f"matrix is not symmetric (max asymmetry {asymmetry:.3e})")

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def scale(self) -> float:
        return float(abs(self.matrix).max()) if self.matrix.nnz else 0.0

    def __matmul__(self, other):
        return self.matrix @ other


@dataclass
class ConstrainedLsProblem:
    """min ||v - tau||_M^2 over {C v = d}, with M tau = target"""
    mass: object                         # SPD on the trial space (dense or sparse)
    target: np.ndarray
    constraints: Optional[object] = None # (m, n), may be rank deficient
    rhs: Optional[np.ndarray] = None
    tolerance: float = Config.CONSISTENCY_TOLERANCE
    label: str = "constrained least squares"

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=float)
        n = self.target.size
        if self.mass.shape != (n, n):
            raise InvalidArgumentError(f"{self.label}: mass matrix {self.mass.shape} does not match target of length {n}")
        if self.constraints is None:
            self.constraints = sparse.csr_matrix((0, n))
            self.rhs = np.zeros(0)
        self.rhs = np.zeros(self.constraints.shape[0]) if self.rhs is None else np.asarray(self.rhs, dtype=float)
        if self.constraints.shape != (self.rhs.size, n):
            raise InvalidArgumentError(
                f"{self.label}: constraint matrix {self.constraints.shape} does not match "
                f"{self.rhs.size} right-hand sides and {n} unknowns"
            )

    @property
    def n_unknowns(self) -> int:
        return self.target.size

    @property
    def n_constraints(self) -> int:
        return self.rhs.size

    def objective(self, v: np.ndarray) -> float:
        return float(v @ (self.mass @ v) - 2.0 * v @ self.target)

    def constraint_residual(self, v: np.ndarray) -> float:
        """||C v - d|| relative to ||d|| + ||C|| ||v||"""
        if self.n_constraints == 0:
            return 0.0
        C = self.constraints
        norm_c = float(abs(C).max()) if sparse.issparse(C) else float(np.abs(C).max())
        scale = np.linalg.norm(self.rhs) + norm_c * np.linalg.norm(v)
        residual = np.linalg.norm(C @ v - self.rhs)
        return float(residual / scale) if scale > 0 else float(residual)


class Factorization:
    """LU of a square matrix: dense LAPACK below the dense limit, SuperLU above"""

    def __init__(self, matrix, dense_limit: int = Config.DENSE_SOLVE_LIMIT,
                 pivot_tolerance: Optional[float] = None):
        self.shape = matrix.shape
        self.dense = self.shape[0] <= dense_limit
        try:
            if self.dense:
                array = matrix.toarray() if sparse.issparse(matrix) else np.asarray(matrix, dtype=float)
                self._lu = linalg.lu_factor(array, check_finite=True)
                pivots = np.abs(np.diag(self._lu[0]))
            else:
                self._lu = splinalg.splu(sparse.csc_matrix(matrix))
                pivots = np.abs(self._lu.U.diagonal())
        except (RuntimeError, ValueError, linalg.LinAlgError) as exc:
            raise FactorizationError(f"factorization of {self.shape[0]}x{self.shape[1]} matrix failed: {exc}") from exc
        if pivot_tolerance is None:
            pivot_tolerance = np.finfo(float).eps * max(pivots.size, 1)
        if pivots.size and pivots.min() <= pivot_tolerance * pivots.max():
            raise FactorizationError(
                f"pivot {pivots.min():.3e} is singular to working precision (largest {pivots.max():.3e})"
            )

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.dense:
            return linalg.lu_solve(self._lu, rhs)
        return self._lu.solve(rhs)


def factor_solve(matrix, rhs, refinement_steps: int = Config.REFINEMENT_STEPS) -> np.ndarray:
    """
    Solve M x = b for one right-hand side (n,) or several (n, k), with
    iterative refinement.

    Raises:
        FactorizationError: a pivot is singular to working precision
    """
    operator = matrix.matrix if isinstance(matrix, SparseSymMatrix) else matrix
    rhs = np.asarray(rhs, dtype=float)
    factorization = Factorization(operator)
    solution = factorization.solve(rhs)
    for _ in range(refinement_steps):
        solution = solution + factorization.solve(rhs - operator @ solution)
    residual = np.linalg.norm(rhs - operator @ solution)
    logger.debug("factor_solve n=%d residual %.3e (rhs %.3e)", operator.shape[0], residual, np.linalg.norm(rhs))
    return solution


def _row_scaling(C, target_scale: float, negligible_ratio: float = Config.NEGLIGIBLE_ROW_RATIO):
    """Scaling for the kept rows of C and their indices; roundoff-zero rows are dropped"""
    norms = abs(C).max(axis=1).toarray().ravel() if sparse.issparse(C) else np.abs(C).max(axis=1)
    kept = np.flatnonzero(norms > negligible_ratio * norms.max()) if norms.size and norms.max() > 0 \
        else np.zeros(0, dtype=int)
    return target_scale / norms[kept], kept


def solve_constrained_ls(problem: ConstrainedLsProblem,
                         regularization: float = Config.MULTIPLIER_REGULARIZATION,
                         refinement_steps: int = Config.REFINEMENT_STEPS) -> np.ndarray:
    """
    M-norm minimizer of ||v - tau|| subject to C v = d.

    Returns:
        primal minimizer (n,)

    Raises:
        InfeasibleConstraintsError: the achieved constraint residual exceeds
            the problem tolerance
    """
    M = sparse.csr_matrix(problem.mass)
    n, m = problem.n_unknowns, problem.n_constraints
    if m == 0:
        return factor_solve(M, problem.target, refinement_steps)

    mass_scale = float(abs(M).max())
    if mass_scale == 0.0:
        raise FactorizationError(f"{problem.label}: mass matrix is zero")
    scaling, kept = _row_scaling(problem.constraints, mass_scale)
    if kept.size < m:
        logger.debug("%s: dropped %d negligible constraint rows", problem.label, m - kept.size)
    if kept.size == 0:
        primal = factor_solve(M, problem.target, refinement_steps)
        return _checked(problem, primal)
    m = kept.size
    C = sparse.diags(scaling) @ sparse.csr_matrix(problem.constraints)[kept]
    d = scaling * problem.rhs[kept]
    epsilon = regularization * mass_scale

    kkt = sparse.bmat([[M, C.T], [C, None]], format="csr")
    regularized = sparse.bmat([[M, C.T], [C, -epsilon * sparse.eye(m)]], format="csr")
    rhs = np.concatenate([problem.target, d])

    # redundant rows leave pivots of order epsilon
    factorization = Factorization(regularized, pivot_tolerance=1e-4 * regularization)
    solution = factorization.solve(rhs)
    for _ in range(refinement_steps):
        solution = solution + factorization.solve(rhs - kkt @ solution)
    logger.debug("%s: n=%d m=%d", problem.label, n, m)
    return _checked(problem, solution[:n])


def _checked(problem: ConstrainedLsProblem, primal: np.ndarray) -> np.ndarray:
    residual = problem.constraint_residual(primal)
    if residual > problem.tolerance:
        raise InfeasibleConstraintsError(f"{problem.label}: inconsistent constraints", residual)
    logger.debug("%s: constraint residual %.3e", problem.label, residual)
    return primal


def dense_nullspace_qp(problem: ConstrainedLsProblem, rank_tolerance: float = 1e-10) -> np.ndarray:
    """
    Reference minimizer by null-space parametrization: SVD of C, a particular
    solution from the pseudo-inverse, and a Cholesky solve of the reduced
    system Z^T M Z.
    """
    n, m = problem.n_unknowns, problem.n_constraints
    if n + m > ORACLE_DIMENSION_LIMIT:
        raise InvalidArgumentError(f"oracle limited to {ORACLE_DIMENSION_LIMIT} unknowns, got {n + m}")
    M = problem.mass.toarray() if sparse.issparse(problem.mass) else np.asarray(problem.mass, dtype=float)
    C = problem.constraints.toarray() if sparse.issparse(problem.constraints) else np.asarray(problem.constraints, dtype=float)

    particular = np.zeros(n)
    null_basis = np.eye(n)
    if m and np.abs(C).max() > 0:
        U, s, Vt = linalg.svd(C)
        rank = int(np.count_nonzero(s > rank_tolerance * s[0]))
        particular = Vt[:rank].T @ ((U[:, :rank].T @ problem.rhs) / s[:rank])
        null_basis = Vt[rank:].T
    residual = problem.constraint_residual(particular)
    if residual > problem.tolerance:
        raise InfeasibleConstraintsError(f"{problem.label}: inconsistent constraints", residual)
    if null_basis.shape[1] == 0:
        return particular

    reduced = null_basis.T @ M @ null_basis
    try:
        factor = linalg.cho_factor(reduced)
    except linalg.LinAlgError as exc:
        raise FactorizationError(f"{problem.label}: reduced mass matrix is not positive definite") from exc
    coefficients = linalg.cho_solve(factor, null_basis.T @ (problem.target - M @ particular))
    return particular + null_basis @ coefficients


def dump_problem(problem: ConstrainedLsProblem, path) -> None:
    """Write the problem as Matrix Market coordinate/array sections in one ASCII file"""
    sections = [
        ("mass", sparse.coo_matrix(problem.mass)),
        ("target", problem.target.reshape(-1, 1)),
        ("constraints", sparse.coo_matrix(problem.constraints)),
        ("rhs", problem.rhs.reshape(-1, 1)),
    ]
    with open(path, "w", encoding="ascii") as handle:
        handle.write(f"% {problem.label}\n")
        for name, data in sections:
            buffer = io.BytesIO()
            spio.mmwrite(buffer, data, precision=17)
            handle.write(f"% section {name}\n")
            handle.write(buffer.getvalue().decode("ascii"))


def maybe_dump(problem: ConstrainedLsProblem, dump_dir: Optional[str], name: str) -> None:
    if not dump_dir:
        return
    os.makedirs(dump_dir, exist_ok=True)
    dump_problem(problem, os.path.join(dump_dir, name))
