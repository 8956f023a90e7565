"""Forward and inverse flow matching for Gaussian and one-dimensional discrete couplings."""
from .core import (
    ATOM_TOL,
    MASS_TOL,
    PD_TOL,
    PSD_TOL,
    SYM_TOL,
    AffineVelocityField,
    AtomicMeasure1D,
    DimensionMismatch,
    DiscretePlan1D,
    EmptyNeighborhood,
    GaussianDistribution,
    GaussianPlan,
    IllPosed,
    InconsistentField,
    Infeasible,
    InverseFMError,
    MarginalMismatch,
    NonFinite,
    NotApplicableInOneDimension,
    NumericalError,
    PSDViolation,
    SingularCovariance,
    SingularMarginal,
    ValidationError,
    ValidationReport,
    symmetric_part,
    validate_gaussian_plan,
)
from .gaussian import (
    counterexample_pair,
    gaussian_flow,
    marginal_at,
    marginal_curve,
    recover_plan_from_v0,
    velocity_at_zero,
    velocity_field,
)
from .onedim import (
    CFQuery,
    SnapshotSet,
    char_fn,
    default_snapshot_times,
    forward_snapshot,
    invert_from_snapshots,
    invert_with_diagnostics,
    marginal_cf,
    ray_identity_residual,
    uniqueness_certificate,
)
from .transport import (
    estimate_velocity,
    integrate_particles,
    marginal_moment_check,
    sample_plan,
    silverman_bandwidth,
)

__version__ = "0.1.0"
