"""
Algorithms package - isolated numerical algorithms
"""
from .curl_curl_solver import check_patch_orthogonality, solve_magnetic_potential
from .error_estimator import build_report, doerfler_mark, eta_elements, exact_error, oscillation_total
from .flux_equilibration import equilibrate
from .linalg_kernel import dense_nullspace_qp, solve_constrained_ls
from .mesh_core import build_lshape_mesh, build_structured_cube_mesh, load_mesh, save_mesh, vertex_patch
from .quadrature import gauss_rule_tet, gauss_rule_triangle

__all__ = [
    'build_lshape_mesh', 'build_structured_cube_mesh', 'load_mesh', 'save_mesh', 'vertex_patch',
    'gauss_rule_tet', 'gauss_rule_triangle',
    'solve_constrained_ls', 'dense_nullspace_qp',
    'solve_magnetic_potential', 'check_patch_orthogonality',
    'equilibrate',
    'build_report', 'doerfler_mark', 'eta_elements', 'exact_error', 'oscillation_total',
]
