"""Sparse optimization under three-view cardinality structures."""

from .structure import (
    ConstraintSystem,
    Group,
    StructureError,
    TvcsStructure,
    build_constraint_system,
    check_totally_unimodular,
    is_feasible_support,
    validate_structure,
)
from .penalty import OpCounter, estimate_step_size, penalty_gradient, penalty_value
from .projection import (
    FAST_CONFIG,
    PrimalDualIterate,
    ProjectionConfig,
    ProjectionNonConvergence,
    ProjectionResult,
    certify_rounding,
    perturb_objective,
    project,
    project_bruteforce,
    solve_feasibility,
    squared_magnitudes,
)

__version__ = "0.1.0"
