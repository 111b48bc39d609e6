import math


class Config:
    LOG_LEVEL = "INFO"

    # Degree caps: p is the discretization degree, spaces go up to p + 1
    MAX_DISCRETIZATION_DEGREE = 4
    MAX_SPACE_DEGREE = {"P": 5, "ND": 5, "RT": 5}

    # Quadrature exactness offsets: volume integrals 2q + VOLUME_QUAD_EXTRA,
    # integrals against non-polynomial data 2q + DATA_QUAD_EXTRA
    VOLUME_QUAD_EXTRA = 4
    DATA_QUAD_EXTRA = 8

    # Mesh validation
    DEGENERATE_VOLUME_RATIO = 1e-14

    # Constrained least squares
    CONSISTENCY_TOLERANCE = 1e-8
    MULTIPLIER_REGULARIZATION = 1e-12
    DENSE_SOLVE_LIMIT = 500
    REFINEMENT_STEPS = 2
    # Constraint rows below this fraction of the largest row norm are roundoff
    NEGLIGIBLE_ROW_RATIO = 1e-10

    # Curl-curl solver: relative size of the gauge multiplier above which j is
    # reported as not discretely divergence-free
    MULTIPLIER_TOLERANCE = 1e-8

    # Post-checks
    POST_CHECK_TOLERANCE = 1e-9
    COMPATIBILITY_TOLERANCE = 1e-10
    # Normal jumps of piecewise RT data are sampled this far (times h_K) off each face
    DATA_JUMP_OFFSET = 1e-7
    DATA_JUMP_TOLERANCE = 1e-5
    FAST_MODE_SAMPLE_EVERY = 10

    # Estimator constants; C_LIFT has no certified value
    C_LIFT = 1.0
    C_LIFT_CERTIFIED = False
    C_PF = 1.0 / math.pi

    # Experiments
    CASE = "const_j"
    STUDY = "convergence"
    MESH_N = [1, 2]
    MESH_FILE = None
    DEGREES = [1]
    SERIES_TERMS = 100
    DOERFLER_THETA = 0.5
    OUT = "results.csv"
    VERIFY = False
    RECORD_TIMING = False

    # Optional directory for patch problem dumps (None disables)
    DUMP_DIR = None
