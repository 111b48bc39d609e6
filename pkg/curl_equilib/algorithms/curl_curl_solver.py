"""
Discrete magnetostatics: find A_h in ND_p with vanishing tangential trace on
Gamma_D and s_h in P_{p+1} vanishing on Gamma_D such that

    (curl A_h, curl v) + (grad s_h, v) = (j, v)    for all v
    (A_h, grad r)                      = 0         for all r

The multiplier s_h vanishes when j is discretely divergence free; otherwise
j - grad s_h is the datum the discrete problem actually sees.
"""
import logging

import numpy as np
from scipy import sparse

from ..config import Config
from ..constants import BC_DIRICHLET
from ..exceptions import InvalidArgumentError
from ..models import CoefficientField, CurrentDensity, MagneticPotentialSolution, TetMesh
from . import mesh_core
from .linalg_kernel import factor_solve
from .poly_spaces import (
    assemble_bilinear, assemble_load, assemble_stiffness, build_global_space, data_exactness,
    default_exactness, field_on_rule, squared_norms,
)
from .quadrature import gauss_rule_tet

logger = logging.getLogger(__name__)


def solve_magnetic_potential(mesh: TetMesh, p: int, j: CurrentDensity,
                             volume_extra: int = Config.VOLUME_QUAD_EXTRA,
                             data_extra: int = Config.DATA_QUAD_EXTRA,
                             multiplier_tolerance: float = Config.MULTIPLIER_TOLERANCE) -> MagneticPotentialSolution:
    """
    Assemble and solve the mixed curl-curl system.

    Args:
        mesh: mesh with Dirichlet/Neumann boundary tags
        p: Nedelec degree of A_h
        j: current density
        volume_extra, data_extra: quadrature exactness offsets for polynomial
            integrands and for integrands involving j

    Returns:
        MagneticPotentialSolution with A_h, s_h and solver diagnostics
    """
    if p < 0 or p > Config.MAX_DISCRETIZATION_DEGREE:
        raise InvalidArgumentError(f"degree p={p} outside 0..{Config.MAX_DISCRETIZATION_DEGREE}")
    potential_space = build_global_space(mesh, "ND", p, BC_DIRICHLET)
    multiplier_space = build_global_space(mesh, "P", p + 1, BC_DIRICHLET)
    exactness = default_exactness(p + 1, volume_extra)
    rhs_exactness = data_exactness(p + 1, data_extra)

    curl_curl = assemble_stiffness(potential_space, exactness)
    gradient = assemble_bilinear(potential_space, multiplier_space, "value", "diff", exactness)
    load = assemble_load(potential_space, j, rhs_exactness)

    free_a, free_s = potential_space.free_dofs, multiplier_space.free_dofs
    K = curl_curl[free_a][:, free_a]
    G = gradient[free_a][:, free_s]
    system = sparse.bmat([[K, G], [G.T, None]], format="csr")
    rhs = np.concatenate([load[free_a], np.zeros(free_s.size)])
    solution = factor_solve(system, rhs)

    potential = CoefficientField.from_free(potential_space, solution[:free_a.size], "A_h")
    multiplier = CoefficientField.from_free(multiplier_space, solution[free_a.size:], "s_h")

    residual = K @ potential.values[free_a] + G @ multiplier.values[free_s] - load[free_a]
    galerkin_residual = float(np.abs(residual).max()) if residual.size else 0.0
    laplacian = assemble_stiffness(multiplier_space, exactness)
    gradient_norm = float(np.sqrt(max(multiplier.values @ (laplacian @ multiplier.values), 0.0)))
    current_norm = float(np.sqrt(squared_norms(mesh, j, rhs_exactness).sum()))
    relative_multiplier = gradient_norm / current_norm if current_norm > 0 else gradient_norm
    curl_norm = float(np.sqrt(max(potential.values @ (curl_curl @ potential.values), 0.0)))

    if relative_multiplier > multiplier_tolerance:
        logger.warning("current density is not discretely divergence free: ||grad s_h|| / ||j|| = %.3e",
                       relative_multiplier)
    logger.info("curl-curl solve p=%d: %d + %d unknowns, residual %.3e, ||curl A_h|| = %.6e",
                p, free_a.size, free_s.size, galerkin_residual, curl_norm)
    return MagneticPotentialSolution(
        potential=potential, multiplier=multiplier, degree=p,
        galerkin_residual=galerkin_residual, multiplier_norm=relative_multiplier,
        curl_norm=curl_norm, data_exactness=rhs_exactness,
    )


def effective_current(sol: MagneticPotentialSolution, j: CurrentDensity, t: int):
    """
    Points of the data rule on tetrahedron t and the values of j - grad s_h
    there: the datum the Galerkin solution is orthogonal against.
    """
    mesh = sol.mesh
    rule = gauss_rule_tet(sol.data_exactness)
    points = mesh.map_points(t, rule.points)
    values = np.asarray(j(points), dtype=float).reshape(-1, 3)
    _, grad_s = field_on_rule(sol.multiplier, t, sol.data_exactness)
    return points, values - grad_s


def check_patch_orthogonality(sol: MagneticPotentialSolution, j: CurrentDensity) -> float:
    """
    Largest scaled residual of

        (psi_a j, grad q)_a + (grad psi_a x curl A_h, grad q)_a = 0

    over all vertices a and the hat functions q of P_1(T_a) vanishing on
    gamma_D (all patch hats for interior and Neumann vertices).
    """
    mesh = sol.mesh
    rule = gauss_rule_tet(sol.data_exactness)
    barycentric = rule.barycentric
    worst = 0.0
    for a in range(mesh.n_vertices):
        patch = mesh_core.vertex_patch(mesh, a)
        excluded = np.unique(mesh.faces[patch.dirichlet_faces]) if patch.is_dirichlet else np.zeros(0, dtype=int)
        tests = np.setdiff1d(patch.vertices, excluded)
        if tests.size == 0:
            continue
        residual = dict.fromkeys(tests.tolist(), 0.0)
        gradient_norm = dict.fromkeys(tests.tolist(), 0.0)
        current_norm = rotated_norm = 0.0
        for t in patch.tets:
            tet = mesh.tets[t]
            weights = rule.weights * abs(mesh.dets[t])
            gradients = mesh.barycentric_gradients(t)
            local_a = int(np.flatnonzero(tet == a)[0])
            psi_a = barycentric[:, local_a]
            _, current = effective_current(sol, j, int(t))
            _, curl_a = field_on_rule(sol.potential, int(t), sol.data_exactness)
            rotated = np.cross(gradients[local_a], curl_a)
            current_norm += weights @ np.sum((psi_a[:, None] * current) ** 2, axis=1)
            rotated_norm += weights @ np.sum(rotated ** 2, axis=1)
            for local_b, b in enumerate(tet):
                if b not in residual:
                    continue
                grad_b = gradients[local_b]
                residual[b] += weights @ (psi_a * (current @ grad_b) + rotated @ grad_b)
                gradient_norm[b] += mesh.volumes[t] * grad_b @ grad_b
        for b in tests:
            scale = np.sqrt(gradient_norm[b]) * (np.sqrt(current_norm) + np.sqrt(rotated_norm))
            if scale > 0:
                worst = max(worst, abs(residual[b]) / scale)
    logger.debug("patch orthogonality residual %.3e", worst)
    return float(worst)
