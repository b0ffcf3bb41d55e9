"""Finsler p-Laplace solver for Hamilton-Jacobi boundary-obstacle problems.

Solves a ladder of anisotropic p-Laplace minimizations whose large-p limit
is the maximal viscosity subsolution of a quasi-convex Hamilton-Jacobi
equation with obstacle constraints on the boundary, and verifies the
associated Kantorovich-Rubinstein / Beckmann duality chain and the
Monge-Kantorovich optimality system on the computed bundle.
"""

from .geometry import (
    BoundaryMeasure,
    Grid,
    GridMismatch,
    ScalarField,
    VectorField,
    boundary_part,
    cell_gradient,
    divergence_residual,
    integrate,
)
from .metric import (
    FinslerMetric,
    GridField,
    IdentityReport,
    Polytope,
    Riemannian,
    Shifted,
    SublevelSet,
    WeightedEuclidean,
    ZeroVector,
    check_identities,
    support_function,
)
from .distance import (
    Compatibility,
    CompatibilityResult,
    Direction,
    DistanceField,
    EmptySource,
    IncompatibleData,
    STENCIL_8,
    STENCIL_16,
    check_compatibility,
    finsler_dijkstra,
    lower_envelope,
    maximal_subsolution,
    read_distance_field,
    stencil_relative_error,
    write_distance_field,
)
from .solver import (
    DiagnosticsReport,
    IncompatibleSpec,
    InfeasibleTestFunction,
    LadderResult,
    ProblemSpec,
    PSolution,
    energy_and_gradient,
    estimate_diagnostics,
    mass_balance_gap,
    solve_ladder,
    solve_p,
    verify_variational_inequality,
)
from .transport import (
    DualityReport,
    NonpositiveWeight,
    beckmann_objective,
    duality_report,
    kr_feasibility,
    kr_objective,
    mk_residuals,
    potential_identity,
    run_weighted_euclidean,
)

__version__ = "0.1.0"
