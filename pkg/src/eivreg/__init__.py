"""Closed-form estimation for the multivariate errors-in-variables regression
model: slope, intercept, and mean vectors, with the corrected least-squares
mean-vector estimator, a whitening path for known error-covariance shapes,
an independent numerical certification layer, and Monte Carlo tooling.
"""

__version__ = "0.1.0"

from .estimators import (
    FitDiagnostics,
    FitResult,
    ResidualPair,
    estimate_alpha,
    estimate_b,
    estimate_u1_corrected,
    estimate_u1_projection,
    estimate_u2,
    fit,
    glse_residual,
    legacy_means,
    legacy_u1,
    residual_matrix,
    residual_pair,
    residual_scale,
    sigma0_symmetric_roots,
    whiten,
)
from .exceptions import (
    DegenerateSubspaceWarning,
    DimensionMismatchError,
    ExcessiveSkipsError,
    NotPositiveDefiniteError,
    ParseError,
    UnidentifiableError,
    ValidationError,
)
from .model_core import (
    EigenStructure,
    ModelKind,
    ModelSpec,
    ObservedData,
    center_columns,
    scatter_matrix,
    signal_eigenstructure,
)
from .oracle import (
    OracleReport,
    glse_gradient_check,
    perturbation_probe,
    project_columns_oracle,
)
from .simulate import (
    ConsistencyReport,
    ErrorKind,
    SyntheticTruth,
    consistency_experiment,
    default_mean_grid,
    generate_dataset,
    random_truth,
)

__all__ = [
    "__version__",
    "ConsistencyReport",
    "DegenerateSubspaceWarning",
    "DimensionMismatchError",
    "EigenStructure",
    "ErrorKind",
    "ExcessiveSkipsError",
    "FitDiagnostics",
    "FitResult",
    "ModelKind",
    "ModelSpec",
    "NotPositiveDefiniteError",
    "ObservedData",
    "OracleReport",
    "ParseError",
    "ResidualPair",
    "SyntheticTruth",
    "UnidentifiableError",
    "ValidationError",
    "center_columns",
    "consistency_experiment",
    "default_mean_grid",
    "estimate_alpha",
    "estimate_b",
    "estimate_u1_corrected",
    "estimate_u1_projection",
    "estimate_u2",
    "fit",
    "generate_dataset",
    "glse_gradient_check",
    "glse_residual",
    "legacy_means",
    "legacy_u1",
    "perturbation_probe",
    "project_columns_oracle",
    "random_truth",
    "residual_matrix",
    "residual_pair",
    "residual_scale",
    "scatter_matrix",
    "sigma0_symmetric_roots",
    "signal_eigenstructure",
    "whiten",
]
