"""Exception types and warnings shared across the package."""


class ValidationError(ValueError):
    """An input fails a structural, dimensional, or finiteness requirement."""


class ParseError(ValidationError):
    """A dataset or matrix file has a malformed cell.

    Carries the 1-based data row index and the column name when known.
    """

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DimensionMismatchError(ValidationError):
    """Declared dimensions disagree with the actual file or array contents."""


class UnidentifiableError(RuntimeError):
    """The slope estimate is not computable: the predictor block of the signal
    basis is singular or numerically close to it."""


class NotPositiveDefiniteError(RuntimeError):
    """A covariance-shape matrix is not symmetric positive definite."""


class ExcessiveSkipsError(RuntimeError):
    """More than the tolerated share of simulation replicates had to be skipped."""


class DegenerateSubspaceWarning(UserWarning):
    """The signal subspace is not uniquely determined: the eigengap at the
    signal/noise cut is at or below roundoff scale. Computation proceeds."""
