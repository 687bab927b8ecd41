"""Constrained Hamiltonian dynamics on observation-induced fiber bundles."""

from .constraints import (
    DiracReport,
    RegularizationParams,
    classify_dirac,
    constrained_rhs,
    decay_bound,
    regularized_lambda,
    regularized_multiplier,
)
from .eigen import symmetric_spectrum
from .errors import (
    BundleError,
    DegenerateStructureError,
    DomainError,
    InsufficientSamplesError,
    InvalidInputError,
    InvalidParameterError,
    ProjectionFailureError,
    ProjectionNonConvergenceError,
    SingularMetricError,
    StepFailureError,
)
from .geometry import (
    BundleState,
    ObservationSystemSpec,
    fiber_norm,
    metric_compat_residual,
    mixed_connection,
    mixed_curvature,
    radial_clamp,
    validate_properness,
)
from .integrator import (
    IntegratorConfig,
    OrderReport,
    StepDiagnostics,
    Trajectory,
    convergence_study,
    geometric_error,
    integrate,
    predict,
    project_constraint,
    step,
)
from .poisson import MixingModel, assemble_omega, bracket_matrix, poisson_bracket
from .toda import TodaParams, build_lax, epsilon_crit, flaschka_lax, toda_rhs, toda_system_spec

__version__ = "0.1.0"
