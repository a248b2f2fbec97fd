"""Closed-form estimators for the errors-in-variables regression model.

The slope matrix comes from the leading eigenvectors of the scatter matrix,
the intercept from the sample means, and the mean-vector matrix from either of
two algebraically equivalent routes: an eigenvector-basis expression carrying
an explicit mean-shift correction term, or a direct projection of the
offset-adjusted observations onto the fitted graph subspace. The historically
published eigenvector-basis expression without the mean-shift term is kept as
a first-class, clearly labeled operation because demonstrating that correction
is a primary purpose of this package.

All estimators are pure functions; no matrix inverse is ever formed
explicitly (inverse-like expressions go through linear solves).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import NotPositiveDefiniteError, UnidentifiableError, ValidationError
from .model_core import (
    G11_CONDITION_LIMIT,
    EigenStructure,
    ModelKind,
    ModelSpec,
    ObservedData,
    center_columns,
    scatter_matrix,
    signal_eigenstructure,
)


@dataclass(frozen=True)
class FitDiagnostics:
    """Spectral diagnostics copied from the eigenstructure behind a fit."""

    eigengap: float
    g11_condition: float
    degenerate: bool


@dataclass(frozen=True)
class FitResult:
    """Complete fit: slope, intercept, fitted mean matrices, and objectives.

    ``u2_hat`` always equals ``alpha_hat 1' + b_hat u1_hat`` as computed, and
    ``alpha_hat`` is exactly zero for the no-intercept model. For a fit under
    a known covariance shape the objectives and the residual scale are
    reported in whitened coordinates; the parameter and mean estimates are in
    original coordinates.
    """

    kind: ModelKind
    b_hat: np.ndarray
    alpha_hat: np.ndarray
    u1_hat: np.ndarray
    u2_hat: np.ndarray
    olse_objective: float
    glse_objective: float
    residual_scale: float
    diagnostics: FitDiagnostics


@dataclass(frozen=True)
class ResidualPair:
    """The stacked full residual and the normalized response residual.

    ``r_matrix`` is (p+r)-by-n: observations minus offset minus the graph map
    of the mean vectors. ``q_matrix`` is r-by-n: the response residual
    normalized by the symmetric square root of (I + B B').
    """

    r_matrix: np.ndarray
    q_matrix: np.ndarray

    def __post_init__(self):
        for name in ("r_matrix", "q_matrix"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 2 or not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} must be a finite 2-D matrix")
            object.__setattr__(self, name, arr)
        if self.r_matrix.shape[1] != self.q_matrix.shape[1]:
            raise ValidationError("r_matrix and q_matrix must share the column count")


def estimate_b(es: EigenStructure) -> np.ndarray:
    """Slope matrix: response block of the signal basis over its predictor block.

    Computed by solving g11' Z' = g21' rather than inverting g11.
    """
    if es.g11_condition > G11_CONDITION_LIMIT:
        raise UnidentifiableError(
            f"predictor block of the signal basis is too ill-conditioned "
            f"(condition estimate {es.g11_condition:.3e})"
        )
    try:
        return np.linalg.solve(es.g11.T, es.g21.T).T
    except np.linalg.LinAlgError as exc:
        raise UnidentifiableError("predictor block of the signal basis is singular") from exc


def estimate_alpha(b_hat, data: ObservedData, kind: ModelKind) -> np.ndarray:
    """Intercept: zero for the no-intercept model, else the response sample
    mean minus the slope applied to the predictor sample mean."""
    b_hat = np.asarray(b_hat, dtype=float)
    if kind is ModelKind.NO_INTERCEPT:
        return np.zeros(data.r)
    return data.x2.mean(axis=1) - b_hat @ data.x1.mean(axis=1)


def _signal_projection(data: ObservedData, es: EigenStructure, kind: ModelKind) -> np.ndarray:
    """Shared eigenvector-basis expression: g11 (g11' X1c + g21' X2c) with the
    centering operator applied for the intercept model."""
    x1c = center_columns(data.x1, kind)
    x2c = center_columns(data.x2, kind)
    return es.g11 @ (es.g11.T @ x1c) + es.g11 @ (es.g21.T @ x2c)


def _mean_shift_term(data: ObservedData) -> np.ndarray:
    """The per-row mean of the predictor block broadcast over all columns."""
    return np.broadcast_to(
        data.x1.mean(axis=1, keepdims=True), (data.p, data.n)
    ).copy()


def estimate_u1_corrected(data: ObservedData, es: EigenStructure, kind: ModelKind) -> np.ndarray:
    """Least-squares estimate of the predictor mean vectors, eigenvector route.

    For the intercept model this is the centered eigenvector-basis projection
    plus the mean-shift term (the per-row predictor means), the term whose
    omission makes the legacy form incorrect. For the no-intercept model no
    centering or shift applies and the legacy form is already correct.
    """
    projected = _signal_projection(data, es, kind)
    if kind is ModelKind.NO_INTERCEPT:
        return projected
    return _mean_shift_term(data) + projected


def estimate_u1_projection(data: ObservedData, alpha_hat, b_hat) -> np.ndarray:
    """Least-squares estimate of the predictor mean vectors, projection route.

    Projects the offset-adjusted observations onto the graph subspace of the
    slope: solves (I + B'B) U = X1 + B'(X2 - alpha 1'). Algebraically
    identical to the corrected eigenvector route; kept as an independent path.
    """
    alpha_hat = np.asarray(alpha_hat, dtype=float)
    b_hat = np.asarray(b_hat, dtype=float)
    rhs = data.x1 + b_hat.T @ (data.x2 - alpha_hat[:, None])
    return np.linalg.solve(np.eye(data.p) + b_hat.T @ b_hat, rhs)


def legacy_u1(data: ObservedData, es: EigenStructure, kind: ModelKind) -> np.ndarray:
    """The historically published mean-vector estimate, without the mean shift.

    Known-incorrect for the intercept model: it differs from the true
    least-squares estimate by exactly the per-row predictor means. For the
    no-intercept model it coincides with the corrected estimate. Retained so
    the defect can be demonstrated and reported side by side.
    """
    return _signal_projection(data, es, kind)


def estimate_u2(u1_hat, alpha_hat, b_hat) -> np.ndarray:
    """Response mean vectors implied by the model: alpha 1' + B U1."""
    u1_hat = np.asarray(u1_hat, dtype=float)
    alpha_hat = np.asarray(alpha_hat, dtype=float)
    b_hat = np.asarray(b_hat, dtype=float)
    return alpha_hat[:, None] + b_hat @ u1_hat


def residual_matrix(data: ObservedData, alpha, b, u1) -> np.ndarray:
    """Full stacked residual: X minus the offset minus the graph map of U1."""
    alpha = np.asarray(alpha, dtype=float)
    b = np.asarray(b, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    return np.vstack([data.x1 - u1, data.x2 - alpha[:, None] - b @ u1])


def _inverse_sqrt_spd(m: np.ndarray) -> np.ndarray:
    """Symmetric positive-definite inverse square root via eigendecomposition."""
    lam, v = np.linalg.eigh((m + m.T) / 2.0)
    return (v / np.sqrt(lam)) @ v.T


def glse_residual(data: ObservedData, alpha, b) -> np.ndarray:
    """Normalized response residual: (I + BB')^{-1/2} (X2 - alpha 1' - B X1).

    Uses the symmetric positive-definite square root; the Frobenius norm of
    the result, the only quantity consumed downstream, is invariant to the
    choice of square root.
    """
    alpha = np.asarray(alpha, dtype=float)
    b = np.asarray(b, dtype=float)
    normalizer = _inverse_sqrt_spd(np.eye(data.r) + b @ b.T)
    return normalizer @ (data.x2 - alpha[:, None] - b @ data.x1)


def residual_pair(data: ObservedData, alpha, b, u1) -> ResidualPair:
    """Both residual matrices at the given parameters."""
    return ResidualPair(
        r_matrix=residual_matrix(data, alpha, b, u1),
        q_matrix=glse_residual(data, alpha, b),
    )


def residual_scale(r_matrix, p: int, r: int, n: int) -> float:
    """Squared Frobenius norm of the residual per entry.

    Ad hoc scale diagnostic only; it is not a derived estimator of the error
    variance and is labeled accordingly in reports.
    """
    r_matrix = np.asarray(r_matrix, dtype=float)
    if r_matrix.shape != (p + r, n):
        raise ValidationError(
            f"residual matrix shape {r_matrix.shape} does not match ({p + r}, {n})"
        )
    return float(np.sum(r_matrix * r_matrix)) / (n * (p + r))


def sigma0_symmetric_roots(sigma0) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric square root and inverse square root of a covariance shape.

    Raises ``NotPositiveDefiniteError`` if any eigenvalue is nonpositive.
    """
    s = np.asarray(sigma0, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValidationError(f"sigma0 must be square, got shape {s.shape}")
    lam, v = np.linalg.eigh((s + s.T) / 2.0)
    if lam[0] <= 0.0:
        raise NotPositiveDefiniteError(
            f"covariance shape is not positive definite (min eigenvalue {lam[0]:.3e})"
        )
    root = (v * np.sqrt(lam)) @ v.T
    inv_root = (v / np.sqrt(lam)) @ v.T
    return root, inv_root


def whiten(data: ObservedData, sigma0) -> ObservedData:
    """Transform observations so the error covariance shape becomes identity."""
    _, inv_root = sigma0_symmetric_roots(sigma0)
    xw = inv_root @ data.stacked()
    return ObservedData(x1=xw[: data.p], x2=xw[data.p :])


def _graph_slope(m: np.ndarray, p: int) -> np.ndarray:
    """Slope of the graph form of the subspace spanned by the columns of m:
    bottom block times the inverse of the top block, via a linear solve."""
    m1 = m[:p]
    m2 = m[p:]
    singular_values = np.linalg.svd(m1, compute_uv=False)
    if singular_values[-1] == 0.0 or singular_values[0] / singular_values[-1] > G11_CONDITION_LIMIT:
        raise UnidentifiableError(
            "predictor block of the back-mapped signal basis is numerically singular"
        )
    return np.linalg.solve(m1.T, m2.T).T


def _validate_for_fit(data: ObservedData, spec: ModelSpec) -> None:
    if data.n < 2:
        raise ValidationError(f"fitting requires n >= 2 observations, got n={data.n}")
    if spec.kind is ModelKind.INTERCEPT and data.n < data.p + 1:
        raise ValidationError(
            f"the intercept model requires n >= p + 1 (centering removes one "
            f"degree of freedom), got n={data.n}, p={data.p}"
        )
    if spec.sigma0 is not None and spec.sigma0.shape != (data.p + data.r, data.p + data.r):
        raise ValidationError(
            f"sigma0 shape {spec.sigma0.shape} does not match "
            f"(p+r, p+r) = ({data.p + data.r}, {data.p + data.r})"
        )


def fit(data: ObservedData, spec: ModelSpec) -> FitResult:
    """Fit the errors-in-variables model and return all estimates.

    With no covariance shape: center, form the scatter matrix, take its
    eigenstructure, and evaluate the closed forms. With a known shape: whiten
    the observations by its inverse symmetric root, run the identity-shape
    machinery on the whitened data, map the signal basis and the fitted means
    back to the original coordinates, and recompute intercept and response
    means there. Objectives are reported in whitened coordinates in that case.
    """
    _validate_for_fit(data, spec)
    if spec.sigma0 is None:
        return _fit_identity(data, spec.kind)
    return _fit_whitened(data, spec.kind, spec.sigma0)


def _assemble(data, kind, es, b_hat, alpha_hat, u1_hat, objective_data, objective_alpha,
              objective_b, objective_u1) -> FitResult:
    u2_hat = estimate_u2(u1_hat, alpha_hat, b_hat)
    r_mat = residual_matrix(objective_data, objective_alpha, objective_b, objective_u1)
    q_mat = glse_residual(objective_data, objective_alpha, objective_b)
    return FitResult(
        kind=kind,
        b_hat=b_hat,
        alpha_hat=alpha_hat,
        u1_hat=u1_hat,
        u2_hat=u2_hat,
        olse_objective=float(np.sum(r_mat * r_mat)),
        glse_objective=float(np.sum(q_mat * q_mat)),
        residual_scale=residual_scale(r_mat, data.p, data.r, data.n),
        diagnostics=FitDiagnostics(
            eigengap=es.eigengap,
            g11_condition=es.g11_condition,
            degenerate=es.degenerate,
        ),
    )


def _fit_identity(data: ObservedData, kind: ModelKind) -> FitResult:
    w = scatter_matrix(data, kind)
    es = signal_eigenstructure(w, data.p)
    b_hat = estimate_b(es)
    alpha_hat = estimate_alpha(b_hat, data, kind)
    u1_hat = estimate_u1_corrected(data, es, kind)
    return _assemble(data, kind, es, b_hat, alpha_hat, u1_hat,
                     data, alpha_hat, b_hat, u1_hat)


def _fit_whitened(data: ObservedData, kind: ModelKind, sigma0: np.ndarray) -> FitResult:
    root, inv_root = sigma0_symmetric_roots(sigma0)
    xw = inv_root @ data.stacked()
    wdata = ObservedData(x1=xw[: data.p], x2=xw[data.p :])

    w = scatter_matrix(wdata, kind)
    es = signal_eigenstructure(w, data.p)
    b_white = estimate_b(es)
    alpha_white = estimate_alpha(b_white, wdata, kind)
    u1_white = estimate_u1_corrected(wdata, es, kind)
    u2_white = estimate_u2(u1_white, alpha_white, b_white)

    # signal basis and fitted means back in original coordinates
    b_hat = _graph_slope(root @ es.g[:, : data.p], data.p)
    alpha_hat = estimate_alpha(b_hat, data, kind)
    u1_hat = (root @ np.vstack([u1_white, u2_white]))[: data.p]
    return _assemble(data, kind, es, b_hat, alpha_hat, u1_hat,
                     wdata, alpha_white, b_white, u1_white)


def legacy_means(data: ObservedData, spec: ModelSpec) -> np.ndarray:
    """Predictor mean vectors per the legacy formula, routed like ``fit``.

    Identity shape: the legacy eigenvector expression on the raw data. Known
    shape: the same expression in whitened coordinates, mapped back through
    the fitted whitened graph. Incorrect for the intercept model either way;
    provided so reports can show the defect next to the corrected fit.
    """
    _validate_for_fit(data, spec)
    if spec.sigma0 is None:
        es = signal_eigenstructure(scatter_matrix(data, spec.kind), data.p)
        return legacy_u1(data, es, spec.kind)
    root, inv_root = sigma0_symmetric_roots(spec.sigma0)
    xw = inv_root @ data.stacked()
    wdata = ObservedData(x1=xw[: data.p], x2=xw[data.p :])
    es = signal_eigenstructure(scatter_matrix(wdata, spec.kind), data.p)
    u1_white = legacy_u1(wdata, es, spec.kind)
    b_white = estimate_b(es)
    alpha_white = estimate_alpha(b_white, wdata, spec.kind)
    u2_white = estimate_u2(u1_white, alpha_white, b_white)
    return (root @ np.vstack([u1_white, u2_white]))[: data.p]
