"""
Domain types of the library.

Meshes, patches and spaces are immutable after construction (arrays are
flagged read-only), so they can be shared freely between patch workers.
"""
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from .config import Config
from .constants import DIRICHLET, NEUMANN, PATCH_DIRICHLET, PATCH_INTERIOR, VALID_CASES, VALID_STUDIES
from .exceptions import InvalidArgumentError

VectorField = Callable[[np.ndarray], np.ndarray]


def _freeze(*arrays):
    for array in arrays:
        if isinstance(array, np.ndarray):
            array.setflags(write=False)


@dataclass(frozen=True)
class TetMesh:
    """
    Conforming tetrahedral mesh.

    Every tetrahedron stores its vertices in ascending global order, so local
    edges (i < j) and faces (i < j < k) carry the global orientation: edges
    from lower to higher vertex index, faces by their sorted vertex triple.
    """
    vertices: np.ndarray          # (nv, 3)
    tets: np.ndarray              # (nt, 4), rows sorted
    edges: np.ndarray             # (ne, 2), rows sorted
    faces: np.ndarray             # (nf, 3), rows sorted
    tet_edges: np.ndarray         # (nt, 6) in LOCAL_EDGES order
    tet_faces: np.ndarray         # (nt, 4) in LOCAL_FACES order
    face_edges: np.ndarray        # (nf, 3) edges (i,j), (i,k), (j,k) of the sorted face (i,j,k)
    face_tets: np.ndarray         # (nf, 2), -1 where a face has one owner
    face_tags: np.ndarray         # (nf,) "" for interior faces, else dirichlet | neumann
    jacobians: np.ndarray         # (nt, 3, 3), columns v1-v0, v2-v0, v3-v0
    dets: np.ndarray              # (nt,) signed
    inv_jacobians: np.ndarray     # (nt, 3, 3)
    volumes: np.ndarray           # (nt,)
    diameters: np.ndarray         # (nt,) h_K
    inradii: np.ndarray           # (nt,) rho_K
    vertex_tet_offsets: np.ndarray
    vertex_tet_indices: np.ndarray
    # mesh size of structured meshes (half the cube diagonal); None means max h_K
    nominal_h: Optional[float] = None

    def __post_init__(self):
        _freeze(*(getattr(self, name) for name in self.__dataclass_fields__))

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_tets(self) -> int:
        return self.tets.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def h(self) -> float:
        if self.nominal_h is not None:
            return self.nominal_h
        return float(self.diameters.max())

    @property
    def kappa(self) -> float:
        """Shape regularity max_K h_K / rho_K"""
        return float(np.max(self.diameters / self.inradii))

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_tets[:, 1] < 0)

    @property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_tets[:, 1] >= 0)

    @property
    def boundary_vertex_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.faces[self.boundary_faces].ravel()] = True
        return mask

    @property
    def boundary_edge_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_edges, dtype=bool)
        mask[self.face_edges[self.boundary_faces].ravel()] = True
        return mask

    def faces_tagged(self, tag: str) -> np.ndarray:
        return np.flatnonzero(self.face_tags == tag)

    def tets_of_vertex(self, a: int) -> np.ndarray:
        start, stop = self.vertex_tet_offsets[a], self.vertex_tet_offsets[a + 1]
        return self.vertex_tet_indices[start:stop]

    def map_points(self, t: int, xhat: np.ndarray) -> np.ndarray:
        """Reference coordinates (n, 3) -> physical points of tetrahedron t"""
        return self.vertices[self.tets[t, 0]] + xhat @ self.jacobians[t].T

    def to_reference(self, t: int, x: np.ndarray) -> np.ndarray:
        return (x - self.vertices[self.tets[t, 0]]) @ self.inv_jacobians[t].T

    def barycentric_gradients(self, t: int) -> np.ndarray:
        """Constant gradients of the four barycentric coordinates, (4, 3)"""
        rows = self.inv_jacobians[t]
        return np.vstack([-rows.sum(axis=0), rows])


@dataclass(frozen=True)
class SubMesh:
    """A set of tetrahedra of a parent mesh, renumbered as a mesh of its own.

    Renumbering keeps the relative vertex order, so the local entity ordering
    of every tetrahedron is the same in the submesh and in the parent.
    """
    mesh: TetMesh
    parent_tets: np.ndarray
    parent_vertices: np.ndarray
    parent_edges: np.ndarray
    parent_faces: np.ndarray

    def __post_init__(self):
        _freeze(self.parent_tets, self.parent_vertices, self.parent_edges, self.parent_faces)

    def local_face_mask(self, parent_face_ids) -> np.ndarray:
        return np.isin(self.parent_faces, np.asarray(parent_face_ids, dtype=int))


@dataclass(frozen=True)
class VertexPatch:
    center: int
    tets: np.ndarray              # T_a, global tet ids (ascending)
    vertices: np.ndarray          # vertices of T_a
    diameter: float               # h_omega_a
    kind: str                     # interior | neumann | dirichlet
    boundary_faces: np.ndarray    # faces of the patch boundary (global ids)
    dirichlet_faces: np.ndarray   # gamma_D, empty unless kind == dirichlet
    extended_tets: np.ndarray     # tilde T_a

    def __post_init__(self):
        _freeze(self.tets, self.vertices, self.boundary_faces, self.dirichlet_faces, self.extended_tets)

    @property
    def is_dirichlet(self) -> bool:
        return self.kind == PATCH_DIRICHLET

    @property
    def is_interior(self) -> bool:
        return self.kind == PATCH_INTERIOR

    @property
    def constrained_faces(self) -> np.ndarray:
        """Patch boundary faces carrying a homogeneous trace condition (boundary minus gamma_D)"""
        return np.setdiff1d(self.boundary_faces, self.dirichlet_faces)


@dataclass(frozen=True)
class QuadratureRule:
    dim: int
    points: np.ndarray            # reference coordinates (n, dim)
    weights: np.ndarray
    degree: int

    def __post_init__(self):
        _freeze(self.points, self.weights)

    @property
    def barycentric(self) -> np.ndarray:
        return np.hstack([1.0 - self.points.sum(axis=1, keepdims=True), self.points])

    @property
    def n_points(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class GlobalFeSpace:
    """
    Conforming space P_q, ND_q or RT_q on a mesh.

    cell_dofs[t] lists the global DOF of every local shape function of t; the
    local order is vertex, edge, face and interior blocks, each in local entity
    order. All orientation signs are +1 because local and global entity
    orientations coincide.
    """
    mesh: TetMesh
    kind: str
    degree: int
    cell_dofs: np.ndarray          # (nt, n_local)
    n_dofs: int
    constrained: np.ndarray        # (n_dofs,) bool
    entity_dofs: tuple             # DOFs per (vertex, edge, face, interior)

    def __post_init__(self):
        _freeze(self.cell_dofs, self.constrained)

    @property
    def n_local(self) -> int:
        return self.cell_dofs.shape[1]

    @property
    def free_dofs(self) -> np.ndarray:
        return np.flatnonzero(~self.constrained)

    @property
    def n_free(self) -> int:
        return int(np.count_nonzero(~self.constrained))

    @property
    def free_index(self) -> np.ndarray:
        """Global DOF -> position among the free DOFs, -1 for constrained DOFs"""
        index = -np.ones(self.n_dofs, dtype=int)
        index[self.free_dofs] = np.arange(self.n_free)
        return index


@dataclass
class CoefficientField:
    space: GlobalFeSpace
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.space.n_dofs,):
            raise InvalidArgumentError(
                f"coefficient vector of length {self.values.shape} does not match "
                f"{self.space.kind}_{self.space.degree} with {self.space.n_dofs} DOFs"
            )

    @classmethod
    def zeros(cls, space: GlobalFeSpace, label: str = "") -> "CoefficientField":
        return cls(space, np.zeros(space.n_dofs), label)

    @classmethod
    def from_free(cls, space: GlobalFeSpace, free_values: np.ndarray, label: str = "") -> "CoefficientField":
        values = np.zeros(space.n_dofs)
        values[space.free_dofs] = free_values
        return cls(space, values, label)

    def local(self, t: int) -> np.ndarray:
        return self.values[self.space.cell_dofs[t]]


@dataclass(frozen=True)
class CurrentDensity:
    """Datum j: pointwise callback plus what is known about its regularity"""
    func: VectorField
    rt_degree: Optional[int] = None
    divergence: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.func(x)

    def is_piecewise_rt(self, p: int) -> bool:
        return self.rt_degree is not None and self.rt_degree <= p


@dataclass
class MagneticPotentialSolution:
    potential: CoefficientField    # A_h in ND_p with H_D(curl) conditions
    multiplier: CoefficientField   # s_h in P_{p+1} with H^1_D conditions
    degree: int
    galerkin_residual: float
    multiplier_norm: float
    curl_norm: float
    data_exactness: int = 0       # quadrature exactness used for every integral of j

    @property
    def mesh(self) -> TetMesh:
        return self.potential.space.mesh


@dataclass
class PatchStep1Data:
    patch: VertexPatch
    submesh: SubMesh
    degree: int                           # p hat
    divergence_moments: np.ndarray        # (n_patch_tets, dim P_phat): (-grad psi_a . j, mu)_K
    target_moments: np.ndarray            # (n_patch_tets, 3): (tau_h^a, e_m)_K
    mean_divergence: float                # (g^a, 1)_omega_a


@dataclass
class EquilibratedFlux:
    flux: CoefficientField                     # sigma_h in ND_{p+1}, H_N(curl)
    contributions: dict = field(default_factory=dict)   # vertex -> CoefficientField on the patch space
    constraint_residuals: dict = field(default_factory=dict)
    equilibration_residual: float = float("nan")
    tangential_jump: float = float("nan")


@dataclass
class DecompositionBundle:
    theta: dict                        # vertex -> CoefficientField (RT_phat on the patch)
    delta: CoefficientField            # global RT_phat, H_N(div)
    delta_local: dict                  # vertex -> CoefficientField (RT_qhat on the patch)
    patch_currents: dict               # vertex -> PatchCurrent
    osc_j: dict = field(default_factory=dict)
    osc_j_extended: dict = field(default_factory=dict)
    osc_jh: dict = field(default_factory=dict)
    stability_ratio: float = 0.0


@dataclass
class EstimatorReport:
    eta_elements: np.ndarray
    eta: float
    eta_osc: float
    eta_total: float
    exact_error: Optional[float] = None
    effectivity: Optional[float] = None
    c_lift: float = Config.C_LIFT
    c_pf: float = Config.C_PF
    c_lift_certified: bool = Config.C_LIFT_CERTIFIED
    metadata: dict = field(default_factory=dict)

    @property
    def guaranteed(self) -> bool:
        """The bound is constant-free only when the oscillation term vanishes"""
        return self.eta_osc == 0.0 or self.c_lift_certified


@dataclass(frozen=True)
class CaseDefinition:
    case_id: str
    current: CurrentDensity
    exact_potential: Optional[VectorField] = None
    exact_curl: Optional[VectorField] = None
    domain: Optional[Callable[[int], TetMesh]] = None
    description: str = ""


@dataclass
class ExperimentConfig:
    case: str = Config.CASE
    study: str = Config.STUDY
    mesh_n: list = field(default_factory=lambda: list(Config.MESH_N))
    mesh_file: Optional[str] = Config.MESH_FILE
    degrees: list = field(default_factory=lambda: list(Config.DEGREES))
    series_terms: int = Config.SERIES_TERMS
    doerfler_theta: float = Config.DOERFLER_THETA
    volume_quad_extra: int = Config.VOLUME_QUAD_EXTRA
    data_quad_extra: int = Config.DATA_QUAD_EXTRA
    c_lift: float = Config.C_LIFT
    c_pf: float = Config.C_PF
    out: str = Config.OUT
    verify: bool = Config.VERIFY
    record_timing: bool = Config.RECORD_TIMING
    dump_dir: Optional[str] = Config.DUMP_DIR

    @classmethod
    def from_mapping(cls, mapping) -> "ExperimentConfig":
        """Build from an upper-case config mapping such as app.config"""
        names = [f.name for f in fields(cls)]
        return cls(**{name: mapping[name.upper()] for name in names if name.upper() in mapping})

    def validate(self) -> None:
        if self.case not in VALID_CASES:
            raise InvalidArgumentError(f"unknown case {self.case!r}, expected one of {VALID_CASES}")
        if self.study not in VALID_STUDIES:
            raise InvalidArgumentError(f"unknown study {self.study!r}, expected one of {VALID_STUDIES}")
        if not self.degrees:
            raise InvalidArgumentError("degree list is empty")
        if not self.mesh_n and not self.mesh_file:
            raise InvalidArgumentError("no mesh given: set mesh_n or mesh_file")
        if self.series_terms < 1:
            raise InvalidArgumentError("series_terms must be >= 1")
        if not 0.0 <= self.doerfler_theta <= 1.0:
            raise InvalidArgumentError("doerfler_theta must lie in [0, 1]")


@dataclass
class StudyRow:
    case: str
    p: int
    N: int
    h: float
    dofs: int
    err: float
    eta: float
    eta_osc: float
    eff: float
    equil_res: float
    seconds: float
    marked: int = 0

    def as_csv(self) -> list:
        return [
            self.case, self.p, self.N, f"{self.h:.6e}", self.dofs, f"{self.err:.10e}",
            f"{self.eta:.10e}", f"{self.eta_osc:.10e}", f"{self.eff:.6f}",
            f"{self.equil_res:.3e}", f"{self.seconds:.3f}",
        ]


__all__ = [
    "TetMesh", "SubMesh", "VertexPatch", "QuadratureRule", "GlobalFeSpace", "CoefficientField",
    "CurrentDensity", "MagneticPotentialSolution", "PatchStep1Data", "EquilibratedFlux",
    "DecompositionBundle", "EstimatorReport", "CaseDefinition", "ExperimentConfig", "StudyRow",
    "DIRICHLET", "NEUMANN",
]
