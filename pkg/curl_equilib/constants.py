"""
Constants for the library - centralized option tables and fixed values.
This keeps the mesh format, the CLI, the config files and the CSV output consistent.
"""

# Boundary tags as written in the ASCII mesh format
BOUNDARY_TAGS = {
    "D": {
        "value": "dirichlet",
        "label": "Dirichlet (tangential trace of A vanishes)",
    },
    "N": {
        "value": "neumann",
        "label": "Neumann (tangential trace of curl A vanishes)",
    },
}
DIRICHLET = "dirichlet"
NEUMANN = "neumann"
VALID_BOUNDARY_TAGS = [tag["value"] for tag in BOUNDARY_TAGS.values()]

# Vertex patch classification
PATCH_KINDS = {
    "interior": {"value": "interior", "label": "Interior vertex"},
    "neumann": {"value": "neumann", "label": "Boundary vertex, all faces on Gamma_N"},
    "dirichlet": {"value": "dirichlet", "label": "Boundary vertex touching Gamma_D"},
}
PATCH_INTERIOR = "interior"
PATCH_NEUMANN = "neumann"
PATCH_DIRICHLET = "dirichlet"

# Finite element space kinds
SPACE_KINDS = {
    "P": {"value": "P", "label": "Lagrange P_q (H1)", "differential": "grad"},
    "ND": {"value": "ND", "label": "Nedelec ND_q (H(curl))", "differential": "curl"},
    "RT": {"value": "RT", "label": "Raviart-Thomas RT_q (H(div))", "differential": "div"},
}
VALID_SPACE_KINDS = list(SPACE_KINDS.keys())

# Which boundary part a global space constrains
BC_NONE = "none"
BC_DIRICHLET = "dirichlet"
BC_NEUMANN = "neumann"
BC_ALL = "all"
VALID_BC = [BC_NONE, BC_DIRICHLET, BC_NEUMANN, BC_ALL]

# Local entity numbering of a tetrahedron with vertices sorted by global index
LOCAL_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
LOCAL_FACES = ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3))
# local face -> the three local edges bounding it
LOCAL_FACE_EDGES = ((0, 1, 3), (0, 2, 4), (1, 2, 5), (3, 4, 5))

# Quadrature
MAX_QUADRATURE_DEGREE = 30

# Manufactured cases
CASES = {
    "const_j": {"value": "const_j", "label": "j = (0,0,1), series solution", "piecewise_rt": True},
    "sine": {"value": "sine", "label": "j = 8 pi^2 (sin sin, 0, 0), analytic solution", "piecewise_rt": False},
    "lshape": {"value": "lshape", "label": "L-shape singular solution (exploratory)", "piecewise_rt": False},
    "custom": {"value": "custom", "label": "user-registered case", "piecewise_rt": False},
}
VALID_CASES = list(CASES.keys())

STUDIES = {
    "convergence": {"value": "convergence", "label": "Uniform mesh refinement"},
    "p_sweep": {"value": "p_sweep", "label": "Uniform polynomial degree refinement"},
}
VALID_STUDIES = list(STUDIES.keys())

# CSV output
CSV_HEADER = ["case", "p", "N", "h", "dofs", "err", "eta", "eta_osc", "eff", "equil_res", "seconds"]

# Config file schema: key -> value type
CONFIG_KEYS = {
    "case": "str",
    "study": "str",
    "mesh_n": "int_list",
    "mesh_file": "str",
    "degrees": "int_list",
    "series_terms": "int",
    "doerfler_theta": "float",
    "volume_quad_extra": "int",
    "data_quad_extra": "int",
    "c_lift": "float",
    "c_pf": "float",
    "out": "str",
    "verify": "bool",
    "record_timing": "bool",
    "dump_dir": "str",
}

TRUE_STRINGS = ("1", "true", "yes", "on")
FALSE_STRINGS = ("0", "false", "no", "off")
