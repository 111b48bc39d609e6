"""
Equilibrated flux reconstruction.

For every vertex a, with p_hat = max(p, 1):

 1. theta_a: RT_{p_hat} patch minimizer of ||v - grad psi_a x curl A_h|| with
    div v = Pi_{p_hat}(-grad psi_a . j) and matching constant moments per element
 2. delta = sum_a theta_a; on every element K and vertex a of K, delta_a is the
    divergence-free RT_{p+1}(K) field closest to psi_a delta (its RT_1
    interpolate for p = 0) with the same normal trace
 3. j_a = psi_a j + theta_a - delta_a
 4. h_a: ND_{p+1} patch minimizer of ||v - psi_a curl A_h|| with curl v = j_a,
    imposed weakly against the curls of the patch space

and sigma_h = sum_a h_a. The datum j is replaced throughout by j - grad s_h,
which is what the Galerkin solution is exactly orthogonal against.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse

from ..config import Config
from ..constants import BC_NEUMANN, LOCAL_FACES
from ..exceptions import CompatibilityError, InfeasibleConstraintsError, PostCheckError
from ..models import (
    CoefficientField, CurrentDensity, DecompositionBundle, EquilibratedFlux, GlobalFeSpace,
    MagneticPotentialSolution, PatchStep1Data, SubMesh, TetMesh, VertexPatch,
)
from . import mesh_core
from .curl_curl_solver import effective_current
from .linalg_kernel import ConstrainedLsProblem, maybe_dump, solve_constrained_ls
from .poly_spaces import (
    ElementShapeSet, build_global_space, default_exactness, evaluate_field, face_rule_points,
    field_on_rule, l2_project, max_trace_jump, rt_interpolate, scalar_basis, tabulate_element,
)
from .quadrature import gauss_rule_tet

logger = logging.getLogger(__name__)


def theta_degree(p: int) -> int:
    """p_hat = max(p, 1)"""
    return max(p, 1)


@dataclass
class PatchContext:
    patch: VertexPatch
    sub: SubMesh
    local_center: np.ndarray     # local index of the center vertex in each patch tet
    constrained_faces: np.ndarray  # submesh faces carrying the homogeneous trace condition

    @property
    def center(self) -> int:
        return self.patch.center

    @property
    def mesh(self) -> TetMesh:
        return self.sub.mesh

    def space(self, kind: str, q: int) -> GlobalFeSpace:
        return build_global_space(self.sub.mesh, kind, q, constrained_faces=self.constrained_faces)

    def sub_index(self, t: int) -> int:
        return int(np.searchsorted(self.sub.parent_tets, t))


def patch_context(mesh: TetMesh, a: int) -> PatchContext:
    patch = mesh_core.vertex_patch(mesh, a)
    sub = mesh_core.patch_submesh(mesh, patch)
    local_center = np.argmax(mesh.tets[sub.parent_tets] == a, axis=1)
    constrained = np.flatnonzero(sub.local_face_mask(patch.constrained_faces))
    return PatchContext(patch, sub, local_center, constrained)


def _scatter_matrix(space: GlobalFeSpace, blocks) -> sparse.csr_matrix:
    rows = np.concatenate([np.repeat(space.cell_dofs[k], space.n_local) for k in range(len(blocks))])
    cols = np.concatenate([np.tile(space.cell_dofs[k], space.n_local) for k in range(len(blocks))])
    data = np.concatenate([block.ravel() for block in blocks])
    return sparse.coo_matrix((data, (rows, cols)), shape=(space.n_dofs, space.n_dofs)).tocsr()


def _scatter_vector(space: GlobalFeSpace, blocks) -> np.ndarray:
    vector = np.zeros(space.n_dofs)
    for k, block in enumerate(blocks):
        np.add.at(vector, space.cell_dofs[k], block)
    return vector


def _element_rows(space: GlobalFeSpace, row_blocks) -> sparse.csr_matrix:
    """Stack per-element constraint rows acting on the element DOFs"""
    rows, cols, data, offset = [], [], [], 0
    for k, block in enumerate(row_blocks):
        m = block.shape[0]
        rows.append(np.repeat(np.arange(offset, offset + m), space.n_local))
        cols.append(np.tile(space.cell_dofs[k], m))
        data.append(block.ravel())
        offset += m
    return sparse.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(offset, space.n_dofs)).tocsr()


def _restrict(space: GlobalFeSpace, matrix, vector):
    free = space.free_dofs
    return matrix[free][:, free], vector[free]


# Step 1

def assemble_theta_problem(context: PatchContext, sol: MagneticPotentialSolution, j: CurrentDensity,
                           volume_extra: int = Config.VOLUME_QUAD_EXTRA):
    """
    Patch problem of step 1.

    Returns:
        (PatchStep1Data, ConstrainedLsProblem over the free DOFs, patch RT space)
    """
    mesh, a = sol.mesh, context.center
    p_hat = theta_degree(sol.degree)
    space = context.space("RT", p_hat)
    exactness = default_exactness(p_hat, volume_extra)
    rule = gauss_rule_tet(exactness)
    data_rule = gauss_rule_tet(sol.data_exactness)
    mu = scalar_basis(p_hat, rule.points)[0]
    mu_data = scalar_basis(p_hat, data_rule.points)[0]

    masses, targets, rows, divergence_moments, target_moments = [], [], [], [], []
    for k, t in enumerate(context.sub.parent_tets):
        tab = tabulate_element("RT", p_hat, context.mesh, k, exactness)
        grad_a = mesh.barycentric_gradients(t)[context.local_center[k]]
        _, curl_a = field_on_rule(sol.potential, int(t), exactness)
        tau = np.cross(grad_a, curl_a)
        masses.append(np.einsum("n,nic,njc->ij", tab.weights, tab.values, tab.values))
        targets.append(np.einsum("n,nic,nc->i", tab.weights, tab.values, tau))
        divergence_rows = np.einsum("n,nm,ni->mi", tab.weights, mu, tab.diffs)
        moment_rows = np.einsum("n,nic->ci", tab.weights, tab.values)
        rows.append(np.vstack([divergence_rows, moment_rows]))

        _, current = effective_current(sol, j, int(t))
        g = -(current @ grad_a)
        divergence_moments.append(abs(mesh.dets[t]) * np.einsum("n,nm,n->m", data_rule.weights, mu_data, g))
        target_moments.append(np.einsum("n,nc->c", tab.weights, tau))

    divergence_moments = np.array(divergence_moments)
    target_moments = np.array(target_moments)
    mass, target = _restrict(space, _scatter_matrix(space, masses), _scatter_vector(space, targets))
    constraints = _element_rows(space, rows)[:, space.free_dofs]
    rhs = np.concatenate([np.concatenate([dm, tm]) for dm, tm in zip(divergence_moments, target_moments)])

    data = PatchStep1Data(
        patch=context.patch, submesh=context.sub, degree=p_hat,
        divergence_moments=divergence_moments, target_moments=target_moments,
        mean_divergence=float(divergence_moments[:, 0].sum()),
    )
    problem = ConstrainedLsProblem(mass, target, constraints, rhs, label=f"vertex {a} theta")
    return data, problem, space


def solve_theta_patch(context: PatchContext, sol: MagneticPotentialSolution, j: CurrentDensity,
                      dump_dir: Optional[str] = None) -> CoefficientField:
    """theta_h^a in RT_{p_hat} on the patch, zero normal trace on the constrained patch boundary"""
    data, problem, space = assemble_theta_problem(context, sol, j)
    a = context.center
    if not context.patch.is_dirichlet:
        scale = np.abs(data.divergence_moments[:, 0]).sum()
        if abs(data.mean_divergence) > Config.CONSISTENCY_TOLERANCE * max(scale, 1.0):
            logger.warning("vertex %d: (g, 1) = %.3e, data not compatible", a, data.mean_divergence)
    maybe_dump(problem, dump_dir, f"patch_{a}_theta.txt")
    try:
        values = solve_constrained_ls(problem)
    except InfeasibleConstraintsError as exc:
        raise InfeasibleConstraintsError(f"patch orthogonality violated at vertex {a}", exc.residual) from exc
    return CoefficientField.from_free(space, values, f"theta_{a}")


def theta_divergence_residual(context: PatchContext, theta: CoefficientField, sol: MagneticPotentialSolution,
                              j: CurrentDensity) -> float:
    """max |div theta_a - Pi_{p_hat}(-grad psi_a . j)| over volume quadrature points, scaled"""
    mesh = sol.mesh
    p_hat = theta.space.degree
    data_rule = gauss_rule_tet(sol.data_exactness)
    mu = scalar_basis(p_hat, data_rule.points)[0]
    gram = np.einsum("n,ni,nj->ij", data_rule.weights, mu, mu)
    worst, scale = 0.0, 0.0
    for k, t in enumerate(context.sub.parent_tets):
        grad_a = mesh.barycentric_gradients(t)[context.local_center[k]]
        _, current = effective_current(sol, j, int(t))
        g = -(current @ grad_a)
        projection = mu @ np.linalg.solve(gram, np.einsum("n,nm,n->m", data_rule.weights, mu, g))
        _, divergence = field_on_rule(theta, k, sol.data_exactness)
        worst = max(worst, float(np.abs(divergence - projection).max()))
        scale = max(scale, float(np.abs(g).max()))
    return worst / scale if scale > 0 else worst


# Step 2

def _dof_map(context: PatchContext, patch_space: GlobalFeSpace, global_space: GlobalFeSpace) -> np.ndarray:
    mapping = np.empty(patch_space.n_dofs, dtype=int)
    mapping[patch_space.cell_dofs] = global_space.cell_dofs[context.sub.parent_tets]
    return mapping


def accumulate(contexts: dict, fields: dict, global_space: GlobalFeSpace, label: str = "") -> CoefficientField:
    """Sum of patch fields extended by zero, in ascending vertex order"""
    values = np.zeros(global_space.n_dofs)
    for a in sorted(fields):
        patch_field = fields[a]
        values[_dof_map(contexts[a], patch_field.space, global_space)] += patch_field.values
    return CoefficientField(global_space, values, label)


def accumulate_delta(contexts: dict, theta: dict, mesh: TetMesh, p: int) -> CoefficientField:
    """delta_h = sum_a theta_a in RT_{p_hat} with zero normal trace on Gamma_N"""
    space = build_global_space(mesh, "RT", theta_degree(p), BC_NEUMANN)
    return accumulate(contexts, theta, space, "delta_h")


def flux_scale(sol: MagneticPotentialSolution, j: CurrentDensity, tets=None) -> float:
    """max over elements of |j - grad s_h| and |curl A_h| / h_K: the size of the theta_a"""
    mesh = sol.mesh
    tets = range(mesh.n_tets) if tets is None else tets
    scale = 0.0
    for t in tets:
        _, current = effective_current(sol, j, int(t))
        _, curl_a = field_on_rule(sol.potential, int(t), sol.data_exactness)
        scale = max(scale, float(np.abs(current).max()), float(np.abs(curl_a).max()) / mesh.diameters[t])
    return scale


def delta_residuals(delta: CoefficientField, tets=None, exactness: Optional[int] = None,
                    reference: float = 0.0):
    """
    Largest h_K |div delta_h| at quadrature points and largest |(delta_h, e_m)_K| / |K|,
    both relative to max |delta_h| floored by ``reference``.

    delta_h is a sum of patch fields that largely cancel, so its own size is
    no scale for roundoff; pass the flux scale of the data as ``reference``.
    """
    mesh = delta.space.mesh
    exactness = default_exactness(delta.space.degree) if exactness is None else exactness
    rule = gauss_rule_tet(exactness)
    tets = range(mesh.n_tets) if tets is None else tets
    worst_div = worst_moment = scale = 0.0
    for t in tets:
        values, divergence = field_on_rule(delta, int(t), exactness)
        weights = rule.weights * abs(mesh.dets[t])
        scale = max(scale, float(np.abs(values).max()))
        worst_div = max(worst_div, mesh.diameters[t] * float(np.abs(divergence).max()))
        worst_moment = max(worst_moment, float(np.abs(weights @ values).max()) / mesh.volumes[t])
    scale = max(scale, reference)
    if scale == 0.0:
        return worst_div, worst_moment
    return worst_div / scale, worst_moment / scale


def _face_orientation(mesh: TetMesh, t: int) -> np.ndarray:
    """+1 where t1 x t2 of a local face points out of tetrahedron t"""
    corners = mesh.vertices[mesh.tets[t]]
    normals = mesh_core.outward_normals(mesh, t)[0]
    signs = np.empty(4)
    for l, (i, j, k) in enumerate(LOCAL_FACES):
        direction = np.cross(corners[j] - corners[i], corners[k] - corners[i])
        signs[l] = 1.0 if direction @ normals[l] > 0 else -1.0
    return signs


def assemble_delta_element_problem(K: int, a: int, delta: CoefficientField, p: int,
                                   compatibility_tolerance: float = Config.COMPATIBILITY_TOLERANCE,
                                   reference_flux: float = 0.0):
    """
    Element problem of step 2 on tetrahedron K for vertex a.

    Args:
        reference_flux: lower bound for the flux scale of the compatibility
            test, so that roundoff-sized traces pass

    Returns:
        (problem over the interior DOFs, target coefficients, face DOF count)

    Raises:
        CompatibilityError: the prescribed normal trace has non-zero mean
    """
    mesh = delta.space.mesh
    local = np.flatnonzero(mesh.tets[K] == a)
    if local.size == 0:
        raise CompatibilityError(f"vertex {a} is not a vertex of element {K}")
    q_hat = p + 1
    gradient_free = local[0]

    def weighted(x):
        xhat = mesh.to_reference(K, x)
        psi = np.hstack([1.0 - xhat.sum(axis=1, keepdims=True), xhat])[:, gradient_free]
        return psi[:, None] * evaluate_field(delta, K, xhat)[0]

    # psi_a delta_h lies in RT_{p+1}(K) for p >= 1, so the interpolate is the field itself
    target = rt_interpolate(q_hat, mesh, K, weighted)

    shapes = ElementShapeSet("RT", q_hat, mesh, K)
    _, weights, values, divergence = shapes.tabulate(default_exactness(q_hat))
    n_face = 4 * shapes.reference.entity_dofs[2]
    face_flux = target[0:n_face:shapes.reference.entity_dofs[2]] * _face_orientation(mesh, K)
    if abs(face_flux.sum()) > compatibility_tolerance * max(np.abs(face_flux).sum(), reference_flux):
        raise CompatibilityError(
            f"element {K}, vertex {a}: normal trace has mean {face_flux.sum():.3e} (fluxes {face_flux})"
        )

    rule_points = gauss_rule_tet(default_exactness(q_hat)).points
    mu = scalar_basis(q_hat, rule_points)[0]
    mass = np.einsum("n,nic,njc->ij", weights, values, values)
    rows = np.einsum("n,nm,ni->mi", weights, mu, divergence)
    fixed = target[:n_face]
    interior = slice(n_face, None)
    problem = ConstrainedLsProblem(
        mass[interior, interior],
        mass[interior, :] @ target - mass[interior, :n_face] @ fixed,
        rows[:, interior],
        -rows[:, :n_face] @ fixed,
        label=f"element {K} vertex {a} delta",
    )
    return problem, target, n_face


def solve_delta_element(K: int, a: int, delta: CoefficientField, p: int, dump_dir: Optional[str] = None,
                        reference_flux: float = 0.0) -> np.ndarray:
    """Local RT_{p+1} coefficients of delta_h^a on K"""
    problem, target, n_face = assemble_delta_element_problem(K, a, delta, p, reference_flux=reference_flux)
    maybe_dump(problem, dump_dir, f"patch_{a}_delta_{K}.txt")
    if not np.any(target):
        return np.zeros_like(target)
    return np.concatenate([target[:n_face], solve_constrained_ls(problem)])


def local_delta_fields(contexts: dict, delta: CoefficientField, p: int, dump_dir: Optional[str] = None,
                       data_scale: float = 0.0):
    """
    All element problems of step 2, assembled per vertex into patch RT_{p+1}
    fields, with the per-element stability ratios ||delta_a||_K / ||delta_h||_K.
    ``data_scale`` floors max |delta_h| in the compatibility tests.
    """
    mesh = delta.space.mesh
    q_hat = p + 1
    spaces = {a: context.space("RT", q_hat) for a, context in contexts.items()}
    values = {a: np.zeros(space.n_dofs) for a, space in spaces.items()}
    exactness = default_exactness(q_hat)
    delta_values = [field_on_rule(delta, K, exactness)[0] for K in range(mesh.n_tets)]
    delta_max = max(max(float(np.abs(v).max()) for v in delta_values), data_scale)
    ratios = []
    for K in range(mesh.n_tets):
        tab = tabulate_element("RT", q_hat, mesh, K, exactness)
        delta_norm = float(np.sqrt(tab.weights @ np.sum(delta_values[K] ** 2, axis=1)))
        reference_flux = delta_max * mesh.diameters[K] ** 2
        for a in mesh.tets[K]:
            a = int(a)
            coefficients = solve_delta_element(K, a, delta, p, dump_dir, reference_flux)
            k = contexts[a].sub_index(K)
            values[a][spaces[a].cell_dofs[k]] = coefficients
            if delta_norm > 0:
                local = np.tensordot(coefficients, tab.values, axes=([0], [1]))
                ratios.append(float(np.sqrt(tab.weights @ np.sum(local ** 2, axis=1))) / delta_norm)
    fields = {a: CoefficientField(spaces[a], values[a], f"delta_{a}") for a in spaces}
    return fields, (max(ratios) if ratios else 0.0)


def delta_decomposition_residual(contexts: dict, delta: CoefficientField, delta_local: dict, tets=None,
                                 floor: float = 0.0) -> float:
    """max over elements and quadrature points of |sum_{a in K} delta_a - delta_h|, relative"""
    mesh = delta.space.mesh
    exactness = default_exactness(delta.space.degree + 1)
    tets = range(mesh.n_tets) if tets is None else tets
    worst = scale = 0.0
    for K in tets:
        reference, _ = field_on_rule(delta, int(K), exactness)
        total = np.zeros_like(reference)
        for a in mesh.tets[K]:
            field_a = delta_local[int(a)]
            total += field_on_rule(field_a, contexts[int(a)].sub_index(int(K)), exactness)[0]
        worst = max(worst, float(np.abs(total - reference).max()))
        scale = max(scale, float(np.abs(reference).max()))
    scale = max(scale, floor)
    return worst / scale if scale > 0 else worst


# Step 3

@dataclass
class PatchCurrent:
    """j_h^a = psi_a j + theta_a - delta_a on the patch of a"""
    context: PatchContext
    sol: MagneticPotentialSolution
    current: CurrentDensity
    theta: CoefficientField
    delta: CoefficientField

    @property
    def exactness(self) -> int:
        return self.sol.data_exactness

    def _psi(self, k: int):
        rule = gauss_rule_tet(self.exactness)
        local = self.context.local_center[k]
        t = int(self.context.sub.parent_tets[k])
        return rule.barycentric[:, local], self.sol.mesh.barycentric_gradients(t)[local]

    def values(self, k: int):
        """Physical data-rule points of patch tet k and j_h^a there"""
        t = int(self.context.sub.parent_tets[k])
        points, current = effective_current(self.sol, self.current, t)
        psi, _ = self._psi(k)
        theta, _ = field_on_rule(self.theta, k, self.exactness)
        delta, _ = field_on_rule(self.delta, k, self.exactness)
        return points, psi[:, None] * current + theta - delta

    def divergence(self, k: int) -> np.ndarray:
        """div j_h^a at the data-rule points; div j is taken as zero unless given"""
        t = int(self.context.sub.parent_tets[k])
        points, current = effective_current(self.sol, self.current, t)
        psi, grad_psi = self._psi(k)
        result = current @ grad_psi
        if self.current.divergence is not None:
            result = result + psi * np.asarray(self.current.divergence(points), dtype=float)
        _, div_theta = field_on_rule(self.theta, k, self.exactness)
        _, div_delta = field_on_rule(self.delta, k, self.exactness)
        return result + div_theta - div_delta

    def divergence_residual(self) -> float:
        """max |div j_h^a| relative to max |grad psi_a| max |j - grad s_h|"""
        worst = gradient = size = 0.0
        for k in range(self.context.mesh.n_tets):
            t = int(self.context.sub.parent_tets[k])
            _, current = effective_current(self.sol, self.current, t)
            _, grad_psi = self._psi(k)
            gradient = max(gradient, float(np.linalg.norm(grad_psi)))
            size = max(size, float(np.abs(current).max()))
            worst = max(worst, float(np.abs(self.divergence(k)).max()))
        scale = gradient * size
        return worst / scale if scale > 0 else worst

    def normal_trace_residual(self) -> float:
        """max |j_h^a . n| on the constrained patch boundary, relative to max |j_h^a|"""
        mesh = self.context.mesh
        worst = scale = 0.0
        for k in range(mesh.n_tets):
            _, values = self.values(k)
            scale = max(scale, float(np.abs(values).max()))
        normals_all = mesh_core.outward_normals(mesh)
        for f in self.context.constrained_faces:
            k = int(mesh.face_tets[f, 0])
            local_face = int(np.flatnonzero(mesh.tet_faces[k] == f)[0])
            _, xhat = face_rule_points(local_face, self.exactness)
            t = int(self.context.sub.parent_tets[k])
            points = mesh.map_points(k, xhat)
            current = np.asarray(self.current(points), dtype=float).reshape(-1, 3)
            current = current - evaluate_field(self.sol.multiplier, t, xhat)[1]
            psi = np.hstack([1.0 - xhat.sum(axis=1, keepdims=True), xhat])[:, self.context.local_center[k]]
            values = (psi[:, None] * current + evaluate_field(self.theta, k, xhat)[0]
                      - evaluate_field(self.delta, k, xhat)[0])
            normal = normals_all[k, local_face] / np.linalg.norm(normals_all[k, local_face])
            worst = max(worst, float(np.abs(values @ normal).max()))
        return worst / scale if scale > 0 else worst


def patch_current(context: PatchContext, sol: MagneticPotentialSolution, j: CurrentDensity,
                  theta: CoefficientField, delta_a: CoefficientField) -> PatchCurrent:
    return PatchCurrent(context, sol, j, theta, delta_a)


# Equilibration

def assemble_equilibration_problem(current: PatchCurrent, volume_extra: int = Config.VOLUME_QUAD_EXTRA):
    """
    Patch problem for h^a over ND_{p+1} with the curl constraint tested
    against the curls of the same space.

    Returns:
        (ConstrainedLsProblem over the free DOFs, patch ND space)
    """
    context, sol = current.context, current.sol
    q = sol.degree + 1
    space = context.space("ND", q)
    exactness = default_exactness(q, volume_extra)
    rule = gauss_rule_tet(exactness)
    masses, curls, targets, loads = [], [], [], []
    for k, t in enumerate(context.sub.parent_tets):
        tab = tabulate_element("ND", q, context.mesh, k, exactness)
        psi = rule.barycentric[:, context.local_center[k]]
        _, curl_a = field_on_rule(sol.potential, int(t), exactness)
        masses.append(np.einsum("n,nic,njc->ij", tab.weights, tab.values, tab.values))
        curls.append(np.einsum("n,nic,njc->ij", tab.weights, tab.diffs, tab.diffs))
        targets.append(np.einsum("n,nic,nc->i", tab.weights, tab.values, psi[:, None] * curl_a))
        data_tab = tabulate_element("ND", q, context.mesh, k, current.exactness)
        _, j_a = current.values(k)
        loads.append(np.einsum("n,nic,nc->i", data_tab.weights, data_tab.diffs, j_a))
    mass, target = _restrict(space, _scatter_matrix(space, masses), _scatter_vector(space, targets))
    constraints, rhs = _restrict(space, _scatter_matrix(space, curls), _scatter_vector(space, loads))
    problem = ConstrainedLsProblem(mass, target, constraints, rhs, label=f"vertex {context.center} flux")
    return problem, space


def solve_equilibration_patch(current: PatchCurrent, dump_dir: Optional[str] = None):
    """
    h^a in ND_{p+1} on the patch with zero tangential trace on the constrained
    patch boundary.

    Returns:
        (h^a, achieved relative constraint residual)
    """
    problem, space = assemble_equilibration_problem(current)
    a = current.context.center
    maybe_dump(problem, dump_dir, f"patch_{a}_flux.txt")
    try:
        values = solve_constrained_ls(problem)
    except InfeasibleConstraintsError as exc:
        raise InfeasibleConstraintsError(f"equilibration infeasible at vertex {a}", exc.residual) from exc
    return CoefficientField.from_free(space, values, f"h_{a}"), problem.constraint_residual(values)


def curl_mismatch(h_a: CoefficientField, current: PatchCurrent):
    """(||curl h^a - j_h^a||_patch, max pointwise mismatch, max |j_h^a|)"""
    rule = gauss_rule_tet(current.exactness)
    mesh = current.context.mesh
    squared = worst = scale = 0.0
    for k in range(mesh.n_tets):
        _, j_a = current.values(k)
        _, curl_h = field_on_rule(h_a, k, current.exactness)
        difference = curl_h - j_a
        squared += abs(mesh.dets[k]) * rule.weights @ np.sum(difference ** 2, axis=1)
        worst = max(worst, float(np.abs(difference).max()))
        scale = max(scale, float(np.abs(j_a).max()))
    return float(np.sqrt(squared)), worst, scale


# Oscillation

def datum_oscillation(mesh: TetMesh, j: CurrentDensity, p_hat: int, exactness: int) -> np.ndarray:
    """Per-element (h_K / pi ||j - Pi_{p_hat} j||_K)^2"""
    projection = l2_project(p_hat, mesh, j, exactness=exactness)
    rule = gauss_rule_tet(exactness)
    basis = scalar_basis(p_hat, rule.points)[0]
    squared = np.empty(mesh.n_tets)
    for t in range(mesh.n_tets):
        points = mesh.map_points(t, rule.points)
        difference = np.asarray(j(points), dtype=float).reshape(-1, 3) - basis @ projection.coefficients[t]
        norm2 = abs(mesh.dets[t]) * rule.weights @ np.sum(difference ** 2, axis=1)
        squared[t] = (mesh.diameters[t] / np.pi) ** 2 * norm2
    return squared


def oscillation_terms(patch: VertexPatch, element_oscillation: np.ndarray,
                      h_a: Optional[CoefficientField] = None, current: Optional[PatchCurrent] = None):
    """
    (eta_osc_j, eta_osc_j on the extended patch, eta_osc_jh) for one vertex;
    eta_osc_jh = h_patch ||curl h^a - j_h^a|| is computed when h^a is given.
    """
    osc_j = float(np.sqrt(element_oscillation[patch.tets].sum()))
    osc_extended = float(np.sqrt(element_oscillation[patch.extended_tets].sum()))
    osc_jh = 0.0
    if h_a is not None and current is not None:
        osc_jh = patch.diameter * curl_mismatch(h_a, current)[0]
    return osc_j, osc_extended, osc_jh


# Flux

def assemble_flux(contexts: dict, contributions: dict, mesh: TetMesh, p: int) -> EquilibratedFlux:
    """sigma_h = sum_a h^a in ND_{p+1} with zero tangential trace on Gamma_N"""
    space = build_global_space(mesh, "ND", p + 1, BC_NEUMANN)
    flux = accumulate(contexts, contributions, space, "sigma_h")
    return EquilibratedFlux(flux=flux, contributions=contributions)


def equilibration_residual(flux: CoefficientField, j: CurrentDensity, exactness: int) -> float:
    """||j - curl sigma_h|| / ||j||"""
    mesh = flux.space.mesh
    rule = gauss_rule_tet(exactness)
    residual = norm = 0.0
    for t in range(mesh.n_tets):
        points = mesh.map_points(t, rule.points)
        current = np.asarray(j(points), dtype=float).reshape(-1, 3)
        _, curl = field_on_rule(flux, t, exactness)
        weights = rule.weights * abs(mesh.dets[t])
        residual += weights @ np.sum((current - curl) ** 2, axis=1)
        norm += weights @ np.sum(current ** 2, axis=1)
    return float(np.sqrt(residual / norm)) if norm > 0 else float(np.sqrt(residual))


def flux_tangential_jump(flux: CoefficientField, faces=None) -> float:
    """Largest tangential jump over interior faces relative to ||sigma_h||"""
    mesh = flux.space.mesh
    exactness = default_exactness(flux.space.degree)
    norm = float(np.sqrt(sum(
        abs(mesh.dets[t]) * gauss_rule_tet(exactness).weights @ np.sum(field_on_rule(flux, t, exactness)[0] ** 2, axis=1)
        for t in range(mesh.n_tets)
    )))
    jump = max_trace_jump(flux, faces)
    return jump / norm if norm > 0 else jump


# Pipeline

@dataclass
class EquilibrationReport:
    flux: EquilibratedFlux
    bundle: DecompositionBundle
    checks: dict = field(default_factory=dict)


def _check(checks: dict, name: str, value: float, tolerance: float) -> None:
    checks[name] = max(checks.get(name, 0.0), value)
    if value > tolerance:
        raise PostCheckError(f"post-check {name} failed: {value:.3e} > {tolerance:.1e}")


def equilibrate(sol: MagneticPotentialSolution, j: CurrentDensity, verify: bool = False,
                sample_every: int = Config.FAST_MODE_SAMPLE_EVERY,
                tolerance: float = Config.POST_CHECK_TOLERANCE,
                dump_dir: Optional[str] = None) -> EquilibrationReport:
    """
    Run steps 1-3 and the patch equilibration for all vertices, in ascending
    vertex order.

    Args:
        verify: check every post-condition on every vertex/element; otherwise
            every ``sample_every``-th vertex/element is checked
    """
    mesh, p = sol.mesh, sol.degree
    p_hat = theta_degree(p)
    stride = 1 if verify else max(int(sample_every), 1)
    sampled_vertices = range(0, mesh.n_vertices, stride)
    sampled_tets = range(0, mesh.n_tets, stride)
    polynomial = j.is_piecewise_rt(p) and sol.multiplier_norm <= Config.MULTIPLIER_TOLERANCE
    checks: dict = {}

    contexts = {a: patch_context(mesh, a) for a in range(mesh.n_vertices)}
    theta = {a: solve_theta_patch(contexts[a], sol, j, dump_dir) for a in range(mesh.n_vertices)}
    for a in sampled_vertices:
        _check(checks, "theta_divergence", theta_divergence_residual(contexts[a], theta[a], sol, j), tolerance)

    delta = accumulate_delta(contexts, theta, mesh, p)
    data_scale = flux_scale(sol, j, sampled_tets)
    divergence, moments = delta_residuals(delta, sampled_tets, reference=data_scale)
    _check(checks, "delta_divergence", divergence, tolerance)
    _check(checks, "delta_moments", moments, tolerance)

    delta_local, stability = local_delta_fields(contexts, delta, p, dump_dir, data_scale)
    decomposition = delta_decomposition_residual(contexts, delta, delta_local, sampled_tets, data_scale)
    _check(checks, "delta_decomposition", decomposition, tolerance)

    currents = {a: patch_current(contexts[a], sol, j, theta[a], delta_local[a]) for a in range(mesh.n_vertices)}
    if polynomial:
        for a in sampled_vertices:
            _check(checks, "current_divergence", currents[a].divergence_residual(), tolerance)
            _check(checks, "current_normal_trace", currents[a].normal_trace_residual(), tolerance)
        _check(checks, "current_sum", current_sum_residual(contexts, currents, sol, j, sampled_tets), tolerance)

    element_oscillation = datum_oscillation(mesh, j, p_hat, sol.data_exactness)
    contributions, residuals = {}, {}
    osc_j, osc_extended, osc_jh = {}, {}, {}
    for a in range(mesh.n_vertices):
        contributions[a], residuals[a] = solve_equilibration_patch(currents[a], dump_dir)
        osc_j[a], osc_extended[a], osc_jh[a] = oscillation_terms(
            contexts[a].patch, element_oscillation, contributions[a], currents[a])
        if polynomial and a in sampled_vertices:
            _, worst, scale = curl_mismatch(contributions[a], currents[a])
            _check(checks, "patch_curl", worst / scale if scale > 0 else worst, tolerance)

    flux = assemble_flux(contexts, contributions, mesh, p)
    flux.constraint_residuals = residuals
    flux.equilibration_residual = equilibration_residual(flux.flux, j, sol.data_exactness)
    flux.tangential_jump = flux_tangential_jump(flux.flux, mesh.interior_faces[::stride])
    _check(checks, "flux_tangential_jump", flux.tangential_jump, tolerance)
    if polynomial:
        _check(checks, "equilibration", flux.equilibration_residual, tolerance)

    bundle = DecompositionBundle(
        theta=theta, delta=delta, delta_local=delta_local, patch_currents=currents,
        osc_j=osc_j, osc_j_extended=osc_extended, osc_jh=osc_jh, stability_ratio=stability,
    )
    logger.info("equilibration p=%d: %d patches, residual %.3e, max stability ratio %.3f",
                p, mesh.n_vertices, flux.equilibration_residual, stability)
    return EquilibrationReport(flux, bundle, checks)


def current_sum_residual(contexts: dict, currents: dict, sol: MagneticPotentialSolution,
                         j: CurrentDensity, tets=None) -> float:
    """max |sum_a j_h^a - (j - grad s_h)| over data-rule points, relative"""
    mesh = sol.mesh
    tets = range(mesh.n_tets) if tets is None else tets
    worst = scale = 0.0
    for t in tets:
        _, reference = effective_current(sol, j, int(t))
        total = np.zeros_like(reference)
        for a in mesh.tets[t]:
            total += currents[int(a)].values(contexts[int(a)].sub_index(int(t)))[1]
        worst = max(worst, float(np.abs(total - reference).max()))
        scale = max(scale, float(np.abs(reference).max()))
    return worst / scale if scale > 0 else worst
