"""Observed-data model, column centering, scatter matrix, and its eigenstructure.

Everything the estimators consume but do not own lives here: the stacked
observation blocks, the intercept/no-intercept model choice, the centering
operator, the scatter matrix W of the (optionally centered) observations, and
the descending-ordered symmetric eigendecomposition of W partitioned into the
four blocks used by the slope and mean-vector estimators.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import (
    DegenerateSubspaceWarning,
    NotPositiveDefiniteError,
    UnidentifiableError,
    ValidationError,
)

# Relative eigengap below which the signal subspace is flagged as degenerate
# (warning only; computation proceeds).
DEGENERATE_EIGENGAP_RTOL = 1e-10

# Conditioning limit for inverting the predictor block of the signal basis.
# Beyond this the slope matrix is declared not computable.
G11_CONDITION_LIMIT = 1e12


class ModelKind(Enum):
    """Intercept vs. no-intercept variant of the errors-in-variables model."""

    NO_INTERCEPT = "no-intercept"
    INTERCEPT = "intercept"


def _as_matrix(value, name: str) -> np.ndarray:
    """Return a read-only float64 copy of a 2-D array with finite entries."""
    arr = np.array(value, dtype=float, copy=True)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be a 2-D matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _as_vector(value, name: str) -> np.ndarray:
    """Return a read-only float64 copy of a 1-D array with finite entries."""
    arr = np.array(value, dtype=float, copy=True)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a 1-D vector, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ObservedData:
    """Stacked observation blocks.

    ``x1`` is the p-by-n predictor block and ``x2`` the r-by-n response block;
    column i of each holds the i-th observed vector. Entries must be finite.
    Fitting additionally requires n >= 2 (and n >= p + 1 for the intercept
    model); those checks live at the fit/ingestion boundary so that partial
    objects (e.g. a single column) can still flow through the centering and
    scatter operations.
    """

    x1: np.ndarray
    x2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x1", _as_matrix(self.x1, "x1"))
        object.__setattr__(self, "x2", _as_matrix(self.x2, "x2"))
        if self.x1.shape[0] < 1 or self.x2.shape[0] < 1:
            raise ValidationError("x1 and x2 must each have at least one row")
        if self.x1.shape[1] != self.x2.shape[1]:
            raise ValidationError(
                f"x1 and x2 must share the observation count, got "
                f"{self.x1.shape[1]} != {self.x2.shape[1]}"
            )
        if self.n < 1:
            raise ValidationError("at least one observation column is required")

    @property
    def p(self) -> int:
        return self.x1.shape[0]

    @property
    def r(self) -> int:
        return self.x2.shape[0]

    @property
    def n(self) -> int:
        return self.x1.shape[1]

    def stacked(self) -> np.ndarray:
        """The (p+r)-by-n matrix with x1 on top of x2."""
        return np.vstack([self.x1, self.x2])


@dataclass(frozen=True)
class ModelSpec:
    """Model choice: intercept flag plus an optional known error-covariance shape.

    ``sigma0``, when present, is the known shape of the error covariance
    (errors have covariance proportional to it). It must be symmetric to
    1e-12 relative and positive definite; ``None`` means the identity.
    """

    kind: ModelKind
    sigma0: np.ndarray | None = None

    def __post_init__(self):
        if not isinstance(self.kind, ModelKind):
            raise ValidationError(f"kind must be a ModelKind, got {self.kind!r}")
        if self.sigma0 is None:
            return
        s = _as_matrix(self.sigma0, "sigma0")
        if s.shape[0] != s.shape[1]:
            raise ValidationError(f"sigma0 must be square, got shape {s.shape}")
        scale = max(1.0, float(np.max(np.abs(s))))
        if float(np.max(np.abs(s - s.T))) > 1e-12 * scale:
            raise ValidationError("sigma0 is not symmetric to 1e-12 relative")
        eigenvalues = np.linalg.eigvalsh((s + s.T) / 2.0)
        if eigenvalues[0] <= 0.0:
            raise NotPositiveDefiniteError(
                f"sigma0 is not positive definite (min eigenvalue {eigenvalues[0]:.3e})"
            )
        object.__setattr__(self, "sigma0", s)


@dataclass(frozen=True)
class EigenStructure:
    """Ordered eigendecomposition of the scatter matrix, with block partition.

    ``w = g @ diag(eigenvalues) @ g.T`` with eigenvalues sorted descending and
    eigenvector columns aligned. ``g11`` is the top-left p-by-p block of ``g``;
    ``g21``, ``g12``, ``g22`` complete the 2-by-2 partition. ``eigengap`` is
    the separation between the p-th and (p+1)-th eigenvalues;
    ``g11_condition`` estimates the conditioning of inverting ``g11``
    (1/sigma_min, which bounds the classical condition number since the
    singular values of an orthogonal matrix's block never exceed 1).
    """

    w: np.ndarray
    eigenvalues: np.ndarray
    g: np.ndarray
    g11: np.ndarray
    g12: np.ndarray
    g21: np.ndarray
    g22: np.ndarray
    eigengap: float
    g11_condition: float
    degenerate: bool

    @classmethod
    def from_decomposition(cls, w, eigenvalues, g, p: int) -> "EigenStructure":
        """Assemble the block partition and diagnostics from (w, eigenvalues, g).

        Does not verify that (eigenvalues, g) actually decompose w; that is
        the producing operation's contract.
        """
        w = _as_matrix(w, "w")
        eigenvalues = _as_vector(eigenvalues, "eigenvalues")
        g = _as_matrix(g, "g")
        m = w.shape[0]
        if not 1 <= p < m:
            raise ValidationError(f"p must satisfy 1 <= p < {m}, got {p}")
        g11 = g[:p, :p].copy()
        g12 = g[:p, p:].copy()
        g21 = g[p:, :p].copy()
        g22 = g[p:, p:].copy()
        for block in (g11, g12, g21, g22):
            block.setflags(write=False)
        eigengap = float(eigenvalues[p - 1] - eigenvalues[p])
        degenerate = eigengap <= DEGENERATE_EIGENGAP_RTOL * max(float(eigenvalues[0]), 1.0)
        sigma_min = float(np.linalg.svd(g11, compute_uv=False)[-1])
        g11_condition = float(np.inf) if sigma_min == 0.0 else 1.0 / sigma_min
        return cls(
            w=w,
            eigenvalues=eigenvalues,
            g=g,
            g11=g11,
            g12=g12,
            g21=g21,
            g22=g22,
            eigengap=eigengap,
            g11_condition=g11_condition,
            degenerate=degenerate,
        )


def center_columns(x, kind: ModelKind) -> np.ndarray:
    """Apply the model's column-centering operator to an m-by-n matrix.

    For the no-intercept model the operator is the identity and the input is
    returned unchanged. For the intercept model each row's mean is subtracted
    from that row, which equals right-multiplication by the centering
    projector without ever materializing the n-by-n matrix.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ValidationError(f"expected an m-by-n matrix with n >= 1, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("matrix contains non-finite entries")
    if kind is ModelKind.NO_INTERCEPT:
        return x
    return x - x.mean(axis=1, keepdims=True)


def scatter_matrix(data: ObservedData, kind: ModelKind) -> np.ndarray:
    """Scatter matrix W of the (centered) stacked observations.

    Formed as the outer product of the centered matrix with itself, so
    symmetry and positive semidefiniteness hold by construction (the centering
    projector is idempotent); the result is symmetrized to absorb roundoff.
    """
    centered = center_columns(data.stacked(), kind)
    w = centered @ centered.T
    return (w + w.T) / 2.0


def signal_eigenstructure(w, p: int) -> EigenStructure:
    """Full eigendecomposition of the scatter matrix, sorted descending.

    The leading p eigenvectors span the fitted signal subspace. Emits a
    ``DegenerateSubspaceWarning`` when the eigengap at the signal/noise cut
    vanishes relative to the leading eigenvalue, and raises
    ``UnidentifiableError`` when the predictor block of the signal basis is
    too ill-conditioned for the slope matrix to be computable.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValidationError(f"w must be square, got shape {w.shape}")
    scale = max(1.0, float(np.max(np.abs(w))))
    if float(np.max(np.abs(w - w.T))) > 1e-10 * scale:
        raise ValidationError("w is not symmetric to 1e-10 relative")
    eigenvalues, g = np.linalg.eigh((w + w.T) / 2.0)
    # stable sort keeps the solver's tie order for repeated eigenvalues
    order = np.argsort(-eigenvalues, kind="stable")
    eigenvalues = eigenvalues[order]
    g = g[:, order]
    structure = EigenStructure.from_decomposition(w, eigenvalues, g, p)
    if structure.degenerate:
        warnings.warn(
            "signal subspace not uniquely determined "
            f"(eigengap {structure.eigengap:.3e} at leading eigenvalue "
            f"{float(eigenvalues[0]):.3e})",
            DegenerateSubspaceWarning,
            stacklevel=2,
        )
    if structure.g11_condition > G11_CONDITION_LIMIT:
        raise UnidentifiableError(
            "predictor block of the signal basis is numerically singular "
            f"(condition estimate {structure.g11_condition:.3e})"
        )
    return structure
