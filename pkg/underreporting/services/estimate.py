"""
Least squares fitting and population-level predictions of the parameter
bias caused by under-reporting in one feature.

Feature 0 of a MomentSet is always the under-reported feature; use
MomentSet.from_population to move another target feature into that slot.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from underreporting.errors import UnderReportingError
from underreporting.models.linear_model import LinearModel
from underreporting.models.population import GaussianPopulation

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-10
ORTHOGONALITY_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class MomentSet:
    """Mean and covariance of Z and the reporting rate E[xi_1] of feature 0."""

    mean: np.ndarray
    cov: np.ndarray
    reporting_rate: float

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "reporting_rate", float(self.reporting_rate))
        if cov.shape != (mean.size, mean.size):
            raise UnderReportingError(f"Covariance shape {cov.shape} does not match {mean.size} means", "validation_error")
        if not np.allclose(cov, cov.T, atol=1e-10, rtol=0.0):
            raise UnderReportingError("Covariance matrix is not symmetric", "validation_error")
        eigenvalues = np.linalg.eigvalsh(cov)
        if eigenvalues.min() <= 1e-10 * max(1.0, eigenvalues.max()):
            raise UnderReportingError("Covariance matrix is not positive definite", "validation_error")
        # E[xi_1] = 0 is accepted here and rejected by the estimators, where it is a numerical failure.
        if not 0.0 <= self.reporting_rate <= 1.0:
            raise UnderReportingError(f"Reporting rate {self.reporting_rate} outside [0,1]", "validation_error")

    @property
    def d(self) -> int:
        return int(self.mean.size)

    def with_rate(self, reporting_rate: float) -> "MomentSet":
        return MomentSet(self.mean, self.cov, reporting_rate)

    @classmethod
    def from_population(cls, pop: GaussianPopulation, target_feature: int = 0) -> Tuple["MomentSet", LinearModel, np.ndarray]:
        """Moments of a population with the target feature moved to position 0.

        Returns:
            (moments, true model in the same order, column order used)
        """
        if not 0 <= target_feature < pop.d:
            raise UnderReportingError(f"Invalid target feature {target_feature}", "validation_error")
        order = np.array([target_feature] + [j for j in range(pop.d) if j != target_feature])
        moments = cls(pop.mu[order], pop.sigma[np.ix_(order, order)], pop.blended_rate(target_feature))
        model = LinearModel(pop.alpha, pop.beta[order], tuple(f"z{j + 1}" for j in order))
        return moments, model, order


@dataclass(frozen=True, eq=False)
class OmittedVariableResult:
    """Omitted variable view of the biased estimates.

    omitted_model is the m -> 0 limit (feature 0 dropped); decomposition
    holds beta_k + beta_1*gamma(Z1,Zk) - beta1_hat*gamma(X1,Zk) at the
    moment set's reporting rate.
    """

    omitted_model: LinearModel
    decomposition: np.ndarray
    beta1_hat: float


def check_full_rank(X: np.ndarray, feature_names: Optional[Sequence[str]] = None) -> None:
    """Raise a rank error when the centred design is numerically rank deficient."""
    X = np.asarray(X, dtype=float)
    names = list(feature_names) if feature_names is not None else [f"x{j + 1}" for j in range(X.shape[1])]
    centred = X - X.mean(axis=0)
    singular_values = linalg.svd(centred, compute_uv=False)
    if singular_values.size == 0 or singular_values.min() <= RANK_TOLERANCE * singular_values.max():
        raise UnderReportingError(
            f"Design matrix is rank deficient; near-collinear columns: {', '.join(_collinear_columns(centred, names))}",
            "rank_error",
        )


def _collinear_columns(centred: np.ndarray, names: List[str]) -> List[str]:
    norms = np.linalg.norm(centred, axis=0)
    constant = [names[j] for j in np.flatnonzero(norms <= RANK_TOLERANCE * max(1.0, norms.max()))]
    if constant:
        return constant
    _, _, vt = linalg.svd(centred, full_matrices=False)
    null_direction = np.abs(vt[-1])
    return [names[j] for j in np.flatnonzero(null_direction > 0.1 * null_direction.max())]


def ols_fit(X: np.ndarray, y: np.ndarray, feature_names: Optional[Sequence[str]] = None) -> LinearModel:
    """Fit intercept and slopes by least squares.

    Solved with a pivoted QR decomposition of the centred design.

    Args:
        X: n x d feature matrix
        y: length-n outcome vector
        feature_names: Optional names carried into the model

    Returns:
        The fitted LinearModel
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise UnderReportingError(f"Design {X.shape} and outcome length {y.size} disagree", "validation_error")
    n, d = X.shape
    if d == 0:
        raise UnderReportingError("No features to fit", "validation_error")
    if n <= d:
        raise UnderReportingError(f"Need more rows than features (n={n}, d={d})", "validation_error")

    check_full_rank(X, feature_names)
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    q, r, pivot = linalg.qr(X - x_mean, mode="economic", pivoting=True)
    beta = np.empty(d)
    beta[pivot] = linalg.solve_triangular(r, q.T @ (y - y_mean))
    alpha = y_mean - x_mean @ beta
    return LinearModel(alpha=alpha, beta=beta, feature_names=tuple(feature_names or ()))


def r2_score(y: np.ndarray, y_pred: np.ndarray) -> float:
    """Coefficient of determination of predictions y_pred for outcomes y."""
    y = np.asarray(y, dtype=float)
    residual = np.sum((y - np.asarray(y_pred, dtype=float)) ** 2)
    total = np.sum((y - y.mean()) ** 2)
    if total == 0.0:
        return 1.0 if residual == 0.0 else float("-inf")
    return float(1.0 - residual / total)


def observed_moments(moments: MomentSet) -> Tuple[float, np.ndarray, np.ndarray]:
    """Var(X_1), Cov(X_1, Z) and E[X] implied by Z independent of xi.

    Var(Z1*xi1) = Var(Z1)E[xi]^2 + Var(xi)E[Z1^2] and Cov(X1, Zk) = E[xi]Cov(Z1, Zk).
    """
    m = moments.reporting_rate
    var_z1 = moments.cov[0, 0]
    second_moment = var_z1 + moments.mean[0] ** 2
    var_x1 = var_z1 * m ** 2 + m * (1.0 - m) * second_moment
    cov_x1_z = m * moments.cov[0]
    mean_x = moments.mean.copy()
    mean_x[0] *= m
    return var_x1, cov_x1_z, mean_x


def _require_rate(moments: MomentSet) -> None:
    if moments.reporting_rate <= 0.0:
        raise UnderReportingError("Reporting rate E[xi_1] = 0 leaves X_1 without variance", "numerical_error")


def _require_orthogonal_tail(moments: MomentSet) -> None:
    tail = moments.cov[1:, 1:]
    scale = np.sqrt(np.outer(np.diag(tail), np.diag(tail)))
    off_diagonal = np.abs(tail - np.diag(np.diag(tail))) / scale
    if off_diagonal.size and off_diagonal.max() > ORTHOGONALITY_TOLERANCE:
        i, j = np.unravel_index(np.argmax(off_diagonal), off_diagonal.shape)
        raise UnderReportingError(
            f"Features {i + 2} and {j + 2} are correlated; orthogonalize the tail features first",
            "validation_error",
        )


def _check_dimensions(moments: MomentSet, true_model: LinearModel) -> None:
    if true_model.d != moments.d:
        raise UnderReportingError(
            f"Model has {true_model.d} coefficients but moments describe {moments.d} features", "validation_error"
        )


def _biased_intercept(moments: MomentSet, true_model: LinearModel, beta_hat: np.ndarray) -> float:
    _, _, mean_x = observed_moments(moments)
    return float(true_model.alpha + moments.mean @ true_model.beta - mean_x @ beta_hat)


def population_biased_params(moments: MomentSet, true_model: LinearModel) -> LinearModel:
    """Population least squares estimates on under-reported data, in closed form.

    Requires features 2..d to be mutually uncorrelated (see orthogonalize_tail).

    Args:
        moments: Moments of Z with the under-reported feature first
        true_model: Data generating model y = alpha + beta^T z

    Returns:
        LinearModel holding alpha_hat and beta_hat
    """
    _check_dimensions(moments, true_model)
    _require_rate(moments)
    _require_orthogonal_tail(moments)

    beta = true_model.beta
    cov = moments.cov
    var_z = np.diag(cov)
    var_x1, cov_x1_z, _ = observed_moments(moments)

    rho_x1_z1 = cov_x1_z[0] / np.sqrt(var_x1 * var_z[0])
    rho_x1_tail = cov_x1_z[1:] / np.sqrt(var_x1 * var_z[1:])
    rho_z1_tail = cov[0, 1:] / np.sqrt(var_z[0] * var_z[1:])
    r2 = float(np.sum(rho_x1_tail ** 2))
    if r2 >= 1.0:
        raise UnderReportingError(f"R^2 = {r2} >= 1: Z_1 is a linear combination of the other features", "numerical_error")

    inner = rho_x1_z1 - np.sum(rho_x1_tail * rho_z1_tail)
    beta_hat = np.empty_like(beta)
    beta_hat[0] = beta[0] / (1.0 - r2) * np.sqrt(var_z[0] / var_x1) * inner
    beta_hat[1:] = beta[0] * np.sqrt(var_z[0] / var_z[1:]) * (rho_z1_tail - rho_x1_tail * inner / (1.0 - r2)) + beta[1:]

    logger.debug(f"Closed-form estimates with E[xi]={moments.reporting_rate}: R^2={r2:.6g}, beta_hat={beta_hat}")
    return LinearModel(_biased_intercept(moments, true_model, beta_hat), beta_hat, true_model.feature_names)


def population_biased_params_general(moments: MomentSet, true_model: LinearModel) -> LinearModel:
    """Population estimates beta_hat = Cov(X)^-1 Cov(X, Z) beta, for any covariance structure."""
    _check_dimensions(moments, true_model)
    _require_rate(moments)
    m = moments.reporting_rate
    var_x1, _, _ = observed_moments(moments)

    cov_xz = moments.cov.copy()
    cov_xz[0, :] *= m
    cov_x = moments.cov.copy()
    cov_x[0, :] *= m
    cov_x[:, 0] *= m
    cov_x[0, 0] = var_x1
    try:
        beta_hat = linalg.solve(cov_x, cov_xz @ true_model.beta, assume_a="pos")
    except linalg.LinAlgError as e:
        raise UnderReportingError("Observed covariance is singular", "numerical_error", e)
    return LinearModel(_biased_intercept(moments, true_model, beta_hat), beta_hat, true_model.feature_names)


def orthogonalize_tail(moments: MomentSet, true_model: LinearModel) -> Tuple[MomentSet, LinearModel, np.ndarray]:
    """Rotate features 2..d so they are uncorrelated (Cholesky / Gram-Schmidt).

    The rotated features are W z_tail with W = L^-1 and L L^T = Cov(z_tail);
    beta_tail is re-expressed as L^T beta_tail so predictions are unchanged.

    Returns:
        (rotated moments, rotated model, W)
    """
    _check_dimensions(moments, true_model)
    d = moments.d
    if d < 3:
        return moments, true_model, np.eye(max(d - 1, 0))
    try:
        chol = linalg.cholesky(moments.cov[1:, 1:], lower=True)
    except linalg.LinAlgError as e:
        raise UnderReportingError("Tail covariance is not positive definite", "validation_error", e)
    w = linalg.solve_triangular(chol, np.eye(d - 1), lower=True)

    cov = np.empty((d, d))
    cov[0, 0] = moments.cov[0, 0]
    cov[0, 1:] = w @ moments.cov[1:, 0]
    cov[1:, 0] = cov[0, 1:]
    cov[1:, 1:] = np.eye(d - 1)
    mean = np.concatenate([[moments.mean[0]], w @ moments.mean[1:]])
    beta = np.concatenate([[true_model.beta[0]], chol.T @ true_model.beta[1:]])
    rotated = MomentSet(mean, cov, moments.reporting_rate)
    return rotated, LinearModel(true_model.alpha, beta, true_model.feature_names), w


def restore_tail(model: LinearModel, w: np.ndarray) -> LinearModel:
    """Map coefficients of rotated tail features back to the original basis."""
    beta = np.concatenate([[model.beta[0]], w.T @ model.beta[1:]])
    return LinearModel(model.alpha, beta, model.feature_names)


def onedim_attenuation_factor(mean: float, var: float, m: float) -> float:
    """Factor by which under-reporting shrinks a single slope: Var(Z) / (E[Z^2] - m E[Z]^2)."""
    if var <= 0.0:
        raise UnderReportingError(f"Variance must be positive, got {var}", "validation_error")
    if not 0.0 < m <= 1.0:
        raise UnderReportingError(f"Reporting rate m={m} must lie in (0,1]", "validation_error")
    return var / (var + mean ** 2 - m * mean ** 2)


def omitted_variable_params(moments: MomentSet, true_model: LinearModel) -> OmittedVariableResult:
    """Omitted variable bias view of the biased estimates.

    Args:
        moments: Moments of Z with the under-reported feature first
        true_model: Data generating model

    Returns:
        OmittedVariableResult with the m -> 0 model and the decomposition at m
    """
    _check_dimensions(moments, true_model)
    _require_orthogonal_tail(moments)
    if moments.d < 2:
        raise UnderReportingError("Omitting the only feature leaves nothing to estimate", "validation_error")

    beta = true_model.beta
    var_tail = np.diag(moments.cov)[1:]
    gamma_z1 = moments.cov[0, 1:] / var_tail
    omitted_beta = beta[1:] + beta[0] * gamma_z1
    omitted_alpha = true_model.alpha + moments.mean @ beta - moments.mean[1:] @ omitted_beta
    omitted = LinearModel(omitted_alpha, omitted_beta, true_model.feature_names[1:])

    biased = population_biased_params(moments, true_model)
    gamma_x1 = moments.reporting_rate * moments.cov[0, 1:] / var_tail
    decomposition = beta[1:] + beta[0] * gamma_z1 - biased.beta[0] * gamma_x1
    return OmittedVariableResult(omitted_model=omitted, decomposition=decomposition, beta1_hat=float(biased.beta[0]))
