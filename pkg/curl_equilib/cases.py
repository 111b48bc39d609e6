"""
Manufactured solutions: current density, exact potential and exact curl
for the experiment cases, plus a registry for user-defined cases.
"""
import logging
from typing import Callable, Optional

import numpy as np

from .algorithms.mesh_core import build_lshape_mesh, build_structured_cube_mesh
from .algorithms.poly_spaces import ElementShapeSet, data_exactness, default_exactness
from .algorithms.quadrature import face_points, gauss_rule_tet, gauss_rule_triangle
from .config import Config
from .constants import DIRICHLET, VALID_CASES
from .exceptions import InvalidArgumentError
from .helpers import random_points_in_mesh
from .models import CaseDefinition, CurrentDensity, TetMesh

logger = logging.getLogger(__name__)

_custom_cases: dict = {}


def _zeros_like(x):
    return np.zeros(np.atleast_2d(x).shape[0])


# j = (0, 0, 1) on the unit cube

def _series_coefficients(terms: int):
    modes = np.arange(1, terms + 1, 2, dtype=float)
    n, m = np.meshgrid(modes, modes, indexing="ij")
    return modes, 16.0 / np.pi ** 4 / (n * m * (n ** 2 + m ** 2))


def const_j_case(series_terms: int = Config.SERIES_TERMS) -> CaseDefinition:
    """
    A = (0, 0, A_3) with the double sine series of -Delta A_3 = 1, summed over
    odd n, m <= series_terms (the even modes of the expansion of 1 vanish).
    """
    if series_terms < 1:
        raise InvalidArgumentError(f"series_terms must be >= 1, got {series_terms}")
    modes, coefficients = _series_coefficients(series_terms)

    def tables(x):
        x = np.atleast_2d(x)
        nx, my = np.pi * np.outer(x[:, 0], modes), np.pi * np.outer(x[:, 1], modes)
        return np.sin(nx), np.cos(nx), np.sin(my), np.cos(my)

    def potential(x):
        sx, _, sy, _ = tables(x)
        values = np.zeros((sx.shape[0], 3))
        values[:, 2] = np.einsum("pn,nm,pm->p", sx, coefficients, sy)
        return values

    def curl(x):
        sx, cx, sy, cy = tables(x)
        values = np.zeros((sx.shape[0], 3))
        values[:, 0] = np.einsum("pn,nm,pm->p", sx, coefficients * np.pi * modes[None, :], cy)
        values[:, 1] = -np.einsum("pn,nm,pm->p", cx, coefficients * np.pi * modes[:, None], sy)
        return values

    def current(x):
        values = np.zeros((np.atleast_2d(x).shape[0], 3))
        values[:, 2] = 1.0
        return values

    return CaseDefinition(
        case_id="const_j",
        current=CurrentDensity(current, rt_degree=0, divergence=_zeros_like),
        exact_potential=potential, exact_curl=curl,
        domain=build_structured_cube_mesh,
        description=f"j = (0,0,1), series truncated at {series_terms}",
    )


# Analytic solution

def sine_case(series_terms: Optional[int] = None) -> CaseDefinition:
    """A = (sin(2 pi y) sin(2 pi z), 0, 0) and j = 8 pi^2 A"""
    k = 2.0 * np.pi

    def potential(x):
        x = np.atleast_2d(x)
        values = np.zeros((x.shape[0], 3))
        values[:, 0] = np.sin(k * x[:, 1]) * np.sin(k * x[:, 2])
        return values

    def curl(x):
        x = np.atleast_2d(x)
        values = np.zeros((x.shape[0], 3))
        values[:, 1] = k * np.sin(k * x[:, 1]) * np.cos(k * x[:, 2])
        values[:, 2] = -k * np.cos(k * x[:, 1]) * np.sin(k * x[:, 2])
        return values

    return CaseDefinition(
        case_id="sine",
        current=CurrentDensity(lambda x: 2.0 * k ** 2 * potential(x), divergence=_zeros_like),
        exact_potential=potential, exact_curl=curl,
        domain=build_structured_cube_mesh,
        description="j = 8 pi^2 (sin(2 pi y) sin(2 pi z), 0, 0)",
    )


# Re-entrant edge

LSHAPE_EXPONENT = 2.0 / 3.0


def _cutoff(r):
    """Quintic step: 1 for r <= 1/4, 0 for r >= 3/4; returns chi, chi', chi''"""
    s = np.clip((r - 0.25) / 0.5, 0.0, 1.0)
    chi = 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2)
    d_chi = -60.0 * s ** 2 * (1.0 - s) ** 2
    dd_chi = -240.0 * s * (1.0 - s) * (1.0 - 2.0 * s)
    return chi, d_chi, dd_chi


def _polar(x):
    x = np.atleast_2d(x)
    r = np.maximum(np.hypot(x[:, 0], x[:, 1]), 1e-300)
    theta = np.mod(np.arctan2(x[:, 1], x[:, 0]), 2.0 * np.pi)
    return r, theta


def lshape_case(series_terms: Optional[int] = None) -> CaseDefinition:
    """
    A = (0, 0, chi(r) r^alpha sin(alpha theta)) on L x (0, 1), theta in
    [0, 3 pi / 2]; the harmonic factor vanishes on both re-entrant faces.
    """
    alpha = LSHAPE_EXPONENT

    def potential(x):
        r, theta = _polar(x)
        values = np.zeros((r.size, 3))
        values[:, 2] = _cutoff(r)[0] * r ** alpha * np.sin(alpha * theta)
        return values

    def curl(x):
        r, theta = _polar(x)
        chi, d_chi, _ = _cutoff(r)
        harmonic = r ** alpha * np.sin(alpha * theta)
        radial = d_chi * harmonic / r
        x = np.atleast_2d(x)
        du_dx = radial * x[:, 0] + chi * alpha * r ** (alpha - 1.0) * np.sin((alpha - 1.0) * theta)
        du_dy = radial * x[:, 1] + chi * alpha * r ** (alpha - 1.0) * np.cos((alpha - 1.0) * theta)
        values = np.zeros((r.size, 3))
        values[:, 0] = du_dy
        values[:, 1] = -du_dx
        return values

    def current(x):
        r, theta = _polar(x)
        _, d_chi, dd_chi = _cutoff(r)
        values = np.zeros((r.size, 3))
        values[:, 2] = -np.sin(alpha * theta) * r ** (alpha - 1.0) * (r * dd_chi + (1.0 + 2.0 * alpha) * d_chi)
        return values

    return CaseDefinition(
        case_id="lshape",
        current=CurrentDensity(current, divergence=_zeros_like),
        exact_potential=potential, exact_curl=curl,
        domain=build_lshape_mesh,
        description=f"L-shape, A_3 = chi(r) r^{alpha:.4f} sin({alpha:.4f} theta)",
    )


CASE_BUILDERS: dict = {
    "const_j": const_j_case,
    "sine": sine_case,
    "lshape": lshape_case,
}


def register_case(definition: CaseDefinition) -> None:
    """Make a user-defined case available under the id 'custom'"""
    _custom_cases["custom"] = definition


def get_case(case_id: str, series_terms: int = Config.SERIES_TERMS) -> CaseDefinition:
    if case_id not in VALID_CASES:
        raise InvalidArgumentError(f"unknown case {case_id!r}, expected one of {VALID_CASES}")
    if case_id == "custom":
        if "custom" not in _custom_cases:
            raise InvalidArgumentError("case 'custom' requested but no custom case is registered")
        return _custom_cases["custom"]
    return CASE_BUILDERS[case_id](series_terms)


def finite_difference_curl(potential: Callable, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference curl of a vector field at points x"""
    x = np.atleast_2d(x)
    jacobian = np.empty((x.shape[0], 3, 3))   # [p, component, direction]
    for d in range(3):
        shift = np.zeros(3)
        shift[d] = step
        jacobian[:, :, d] = (np.asarray(potential(x + shift)) - np.asarray(potential(x - shift))) / (2.0 * step)
    return np.stack([
        jacobian[:, 2, 1] - jacobian[:, 1, 2],
        jacobian[:, 0, 2] - jacobian[:, 2, 0],
        jacobian[:, 1, 0] - jacobian[:, 0, 1],
    ], axis=1)


def self_check(case: CaseDefinition, count: int = 20, tolerance: float = 1e-6, seed: int = 0) -> float:
    """
    Compare the exact curl with a finite-difference curl of the exact
    potential at random points of the case domain.

    Returns:
        largest mismatch relative to max(1, |curl A|)

    Raises:
        InvalidArgumentError: mismatch above tolerance
    """
    if case.exact_potential is None or case.exact_curl is None or case.domain is None:
        return 0.0
    points = random_points_in_mesh(case.domain(1), count, seed)
    reference = np.asarray(case.exact_curl(points), dtype=float)
    approximation = finite_difference_curl(case.exact_potential, points)
    mismatch = float(np.abs(reference - approximation).max() / max(1.0, np.abs(reference).max()))
    if mismatch > tolerance:
        raise InvalidArgumentError(f"case {case.case_id}: exact curl inconsistent with potential ({mismatch:.3e})")
    logger.debug("case %s self-check mismatch %.3e", case.case_id, mismatch)
    return mismatch


# Datum checks

def rt_datum_residuals(current: CurrentDensity, mesh: TetMesh, offset: float = Config.DATA_JUMP_OFFSET) -> dict:
    """
    Relative residuals of data declared piecewise RT: h_K |div| of the
    elementwise RT interpolate, its defect against j, and the normal jump of
    j sampled on both sides of every interior face.
    """
    q = current.rt_degree
    exactness = default_exactness(q)
    divergence = defect = scale = 0.0
    for t in range(mesh.n_tets):
        shapes = ElementShapeSet("RT", q, mesh, t)
        coefficients = shapes.dofs(current)[:, 0]
        points, _, values, divs = shapes.tabulate(exactness)
        exact = np.asarray(current(points), dtype=float).reshape(-1, 3)
        interpolant = np.tensordot(coefficients, values, axes=([0], [1]))
        scale = max(scale, float(np.abs(exact).max()))
        defect = max(defect, float(np.abs(interpolant - exact).max()))
        divergence = max(divergence, mesh.diameters[t] * float(np.abs(divs @ coefficients).max()))

    rule = gauss_rule_triangle(exactness)
    jump = 0.0
    for f in mesh.interior_faces:
        corners = mesh.vertices[mesh.faces[f]]
        normal = np.cross(corners[1] - corners[0], corners[2] - corners[0])
        normal /= np.linalg.norm(normal)
        step = offset * mesh.diameters[mesh.face_tets[f, 0]] * normal
        x = face_points(corners, rule)
        difference = np.asarray(current(x + step), dtype=float) - np.asarray(current(x - step), dtype=float)
        jump = max(jump, float(np.abs(difference.reshape(-1, 3) @ normal).max()))
    if scale == 0.0:
        return {"divergence": divergence, "interpolation": defect, "normal_jump": jump}
    return {"divergence": divergence / scale, "interpolation": defect / scale, "normal_jump": jump / scale}


def _discrete_divergence(current: CurrentDensity, mesh: TetMesh) -> float:
    """largest |(j, grad psi_a)| / (||j||_{T_a} ||grad psi_a||) over vertices off gamma_D"""
    rule = gauss_rule_tet(data_exactness(1))
    pairing = np.zeros(mesh.n_vertices)
    current_norm = np.zeros(mesh.n_vertices)
    gradient_norm = np.zeros(mesh.n_vertices)
    for t in range(mesh.n_tets):
        values = np.asarray(current(mesh.map_points(t, rule.points)), dtype=float).reshape(-1, 3)
        weights = rule.weights * abs(mesh.dets[t])
        gradients = mesh.barycentric_gradients(t)
        np.add.at(pairing, mesh.tets[t], gradients @ (weights @ values))
        np.add.at(current_norm, mesh.tets[t], weights @ np.sum(values ** 2, axis=1))
        np.add.at(gradient_norm, mesh.tets[t], mesh.volumes[t] * np.sum(gradients ** 2, axis=1))
    dirichlet = mesh.boundary_faces[mesh.face_tags[mesh.boundary_faces] == DIRICHLET]
    tested = np.setdiff1d(np.arange(mesh.n_vertices), np.unique(mesh.faces[dirichlet]))
    scale = np.sqrt(current_norm[tested] * gradient_norm[tested])
    ratios = np.divide(np.abs(pairing[tested]), scale, out=np.zeros(tested.size), where=scale > 0)
    return float(ratios.max()) if ratios.size else 0.0


def check_current(current: CurrentDensity, mesh: TetMesh,
                  offset: float = Config.DATA_JUMP_OFFSET) -> dict:
    """
    Check what can be checked of the datum j on a mesh.

    Piecewise RT data: the elementwise RT interpolate must reproduce j with
    zero divergence, and normal components must not jump across interior
    faces. General data: only the discrete divergence |(j, grad psi_a)| is
    reported.

    Returns:
        residuals by name, relative to the size of j

    Raises:
        InvalidArgumentError: piecewise RT data failing one of its checks
    """
    if current.rt_degree is None:
        residuals = {"discrete_divergence": _discrete_divergence(current, mesh)}
        logger.info("datum discrete divergence %.3e", residuals["discrete_divergence"])
        return residuals

    residuals = rt_datum_residuals(current, mesh, offset)
    tolerances = {
        "divergence": Config.POST_CHECK_TOLERANCE,
        "interpolation": Config.POST_CHECK_TOLERANCE,
        "normal_jump": Config.DATA_JUMP_TOLERANCE,
    }
    for name, tolerance in tolerances.items():
        if residuals[name] > tolerance:
            raise InvalidArgumentError(
                f"datum declared RT_{current.rt_degree} fails the {name} check: "
                f"{residuals[name]:.3e} > {tolerance:.1e}"
            )
    logger.debug("datum RT_%d checks %s", current.rt_degree, residuals)
    return residuals
