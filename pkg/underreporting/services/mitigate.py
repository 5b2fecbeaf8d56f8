"""
Correction methods for an under-reported feature and the standard
missing-data baselines they are compared against.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Protocol

import numpy as np
from scipy import linalg
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.ensemble import GradientBoostingClassifier
from sklearn.utils.validation import check_is_fitted

from underreporting.errors import UnderReportingError
from underreporting.models.dataset import Dataset
from underreporting.models.linear_model import LinearModel
from underreporting.models.results import RateEstimate
from underreporting.services.estimate import ols_fit
from underreporting.services.ingest import fit_logistic_irls

logger = logging.getLogger(__name__)

GROUP_DEPENDENT = "group_dependent"
GROUP_BLIND = "group_blind"
MODES = (GROUP_DEPENDENT, GROUP_BLIND)

DEFINITENESS_RATIO = 1e-8
RIDGE_SCALE = 1e-4
VARIANCE_FLOOR = 1e-12
MIN_RATE = 1e-6


class ProbabilityClassifier(Protocol):
    def fit(self, X: np.ndarray, y: np.ndarray) -> Any: ...

    def predict_proba(self, X: np.ndarray) -> np.ndarray: ...


class LogisticIRLSClassifier(ClassifierMixin, BaseEstimator):
    """Unpenalized logistic regression fit by IRLS, with the ridge fallback of fit_logistic_irls."""

    def __init__(self, tol: float = 1e-8, max_iter: int = 100):
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        if self.classes_.size != 2:
            raise UnderReportingError(f"Need two classes to fit, got {self.classes_.size}", "data_error")
        positive = (y == self.classes_[1]).astype(float)
        self.intercept_, self.coef_, self.diagnostics_ = fit_logistic_irls(X, positive, self.tol, self.max_iter)
        self.n_iter_ = self.diagnostics_["iterations"]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "coef_")
        p = expit(self.intercept_ + np.asarray(X, dtype=float) @ self.coef_)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return self.classes_[(self.predict_proba(X)[:, 1] >= 0.5).astype(int)]


def make_classifier(name: str = "logistic", seed: int = 0) -> ProbabilityClassifier:
    """Build a propensity classifier by name ("logistic" or "gradient_boosting")."""
    if name == "logistic":
        return LogisticIRLSClassifier()
    if name == "gradient_boosting":
        return GradientBoostingClassifier(n_estimators=100, max_depth=3, learning_rate=0.1, random_state=seed)
    raise UnderReportingError(f"Unknown classifier: {name}", "config_error")


@dataclass(frozen=True)
class AugmentedFitReport:
    model: LinearModel
    hessian_definite: bool
    fallback_ridge: float
    rates_used: Dict[int, float]
    mode: str


@dataclass(frozen=True)
class ImputationValues:
    """Values substituted for a zero in the under-reported feature at prediction time.

    None marks a group whose training rows had no zero entries; its zeros are left alone.
    """

    mode: str
    group_blind: Optional[float] = None
    per_group: Dict[int, Optional[float]] = field(default_factory=dict)

    def value_for(self, g: Optional[int] = None) -> Optional[float]:
        if self.mode == GROUP_BLIND:
            return self.group_blind
        if g is None:
            raise UnderReportingError("Group-dependent imputation needs a group", "validation_error")
        return self.per_group.get(int(g))

    def to_dict(self) -> Dict[str, Any]:
        return {"mode": self.mode, "group_blind": self.group_blind, "per_group": dict(self.per_group)}


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise UnderReportingError(f"Unknown mode '{mode}'; expected one of {MODES}", "validation_error")


def _check_rate(name: str, m: float) -> None:
    if not 0.0 < m <= 1.0:
        raise UnderReportingError(f"{name}={m} must lie in (0,1]", "validation_error")


def _check_target(data: Dataset, target_feature: int) -> None:
    if not 0 <= target_feature < data.d:
        raise UnderReportingError(f"Invalid target feature {target_feature}", "validation_error")


def _row_rates(G: np.ndarray, m0: float, m1: float, mode: str) -> np.ndarray:
    if mode == GROUP_DEPENDENT:
        return np.where(G == 1.0, m1, m0)
    share = float(np.mean(G)) if G.size else 0.0
    return np.full(G.shape, share * m1 + (1.0 - share) * m0)


def _zeroed(X: np.ndarray, target_feature: int) -> np.ndarray:
    X0 = np.array(X, dtype=float)
    X0[..., target_feature] = 0.0
    return X0


def _require_outcome(data: Dataset) -> np.ndarray:
    if data.Y is None:
        raise UnderReportingError("Dataset has no outcome", "data_error")
    return data.Y


def augmented_loss(model: LinearModel, x, y, m: float, target_feature: int = 0):
    """Squared loss corrected for under-reporting of the target feature.

    (1/m)(f(x) - y)^2 - ((1-m)/m)(f(x0) - y)^2, with x0 = x whose target entry is 0.
    Its expectation over the reporting indicator equals the loss on the true features.

    Returns:
        A float for a single row, an array of per-row losses for a matrix
    """
    _check_rate("m", m)
    x = np.asarray(x, dtype=float)
    full = model.predict(x) - y
    reduced = model.predict(_zeroed(x, target_feature)) - y
    loss = full ** 2 / m - (1.0 - m) / m * reduced ** 2
    return float(loss) if np.ndim(loss) == 0 else loss


def augmented_fit(
    train: Dataset, m0_hat: float, m1_hat: float, mode: str = GROUP_DEPENDENT, target_feature: int = 0
) -> AugmentedFitReport:
    """Minimize the mean augmented squared loss over intercept and slopes.

    Args:
        train: Training data (observed features only are used)
        m0_hat: Reporting rate of group 0
        m1_hat: Reporting rate of group 1
        mode: "group_dependent" (per-row rate by group) or "group_blind" (blended rate)
        target_feature: The under-reported feature

    Returns:
        AugmentedFitReport
    """
    _check_mode(mode)
    _check_rate("m0_hat", m0_hat)
    _check_rate("m1_hat", m1_hat)
    _check_target(train, target_feature)
    y = _require_outcome(train)
    rates_used = {0: float(m0_hat), 1: float(m1_hat)}
    m = _row_rates(train.G, m0_hat, m1_hat, mode)

    if np.all(m == 1.0):
        model = ols_fit(train.X, y, train.feature_names)
        return AugmentedFitReport(model, True, 0.0, rates_used, mode)

    A = np.column_stack([np.ones(train.n), train.X])
    A0 = _zeroed(A, target_feature + 1)
    w = 1.0 / m
    v = (1.0 - m) / m
    hessian = ((A * w[:, None]).T @ A - (A0 * v[:, None]).T @ A0) / train.n
    rhs = ((A * w[:, None]).T @ y - (A0 * v[:, None]).T @ y) / train.n

    eigenvalues = linalg.eigvalsh(hessian)
    definite = eigenvalues.min() > DEFINITENESS_RATIO * eigenvalues.max()
    ridge = 0.0
    if not definite:
        ridge = RIDGE_SCALE * float(np.trace(hessian)) / hessian.shape[0]
        penalty = np.full(hessian.shape[0], ridge)
        penalty[0] = 0.0
        hessian = hessian + np.diag(penalty)
        logger.warning(f"Augmented objective is not positive definite; adding ridge {ridge:.3g}")
        if linalg.eigvalsh(hessian).min() <= 0.0:
            raise UnderReportingError("Augmented objective is singular even after the ridge fallback", "numerical_error")
    try:
        theta = linalg.solve(hessian, rhs, assume_a="sym")
    except linalg.LinAlgError as e:
        raise UnderReportingError("Failed to solve the augmented normal equations", "numerical_error", e)

    model = LinearModel(theta[0], theta[1:], train.feature_names)
    return AugmentedFitReport(model, bool(definite), ridge, rates_used, mode)


def _imputation_value(column: np.ndarray, m: float) -> Optional[float]:
    if column.size == 0:
        return None
    nonzero = column != 0.0
    p_zero = 1.0 - nonzero.mean()
    if p_zero == 0.0:
        return None
    mean_nonzero = column[nonzero].mean() if nonzero.any() else 0.0
    return float((column.mean() / m - nonzero.mean() * mean_nonzero) / p_zero)


def optimal_imputation_values(
    train: Dataset, m0_hat: float, m1_hat: float, mode: str = GROUP_DEPENDENT, target_feature: int = 0
) -> ImputationValues:
    """Value to predict with in place of an observed zero, E[Z1 | X1 = 0] under the reporting model.

    ((1/m) mean(X1) - P(X1 != 0) mean(X1 | X1 != 0)) / P(X1 = 0)
    """
    _check_mode(mode)
    _check_rate("m0_hat", m0_hat)
    _check_rate("m1_hat", m1_hat)
    _check_target(train, target_feature)
    column = train.X[:, target_feature]

    if mode == GROUP_BLIND:
        m = float(_row_rates(train.G, m0_hat, m1_hat, mode)[0]) if train.n else m1_hat
        return ImputationValues(mode=mode, group_blind=_imputation_value(column, m))
    per_group = {
        0: _imputation_value(column[train.G == 0.0], m0_hat),
        1: _imputation_value(column[train.G == 1.0], m1_hat),
    }
    return ImputationValues(mode=mode, per_group=per_group)


def predict_with_imputation(
    model: LinearModel, X: np.ndarray, G: Optional[np.ndarray], vals: ImputationValues, target_feature: int = 0
) -> np.ndarray:
    """Predict after substituting the imputation value wherever the target feature is 0."""
    X = np.array(X, dtype=float)
    zero = X[:, target_feature] == 0.0
    if vals.mode == GROUP_BLIND:
        if vals.group_blind is not None:
            X[zero, target_feature] = vals.group_blind
        return model.predict(X)

    if G is None:
        raise UnderReportingError("Group-dependent imputation needs group labels", "validation_error")
    G = np.asarray(G, dtype=float)
    if G.shape != (X.shape[0],):
        raise UnderReportingError(f"{G.size} group labels for {X.shape[0]} rows", "validation_error")
    for g in (0, 1):
        value = vals.value_for(g)
        if value is not None:
            X[zero & (G == g), target_feature] = value
    return model.predict(X)


def _positive_column(classifier: ProbabilityClassifier) -> int:
    classes = list(getattr(classifier, "classes_", [0, 1]))
    return classes.index(1) if 1 in classes else len(classes) - 1


def estimate_reporting_rate(
    data: Dataset,
    g: Optional[int] = None,
    classifier: Optional[ProbabilityClassifier] = None,
    seed: int = 0,
    target_feature: int = 0,
) -> RateEstimate:
    """Estimate the reporting rate of the target feature from observed data alone.

    A classifier learns P(x1 != 0 | other features, y) on half of the rows;
    its mean prediction over the other half's rows with x1 != 0 estimates m.

    Args:
        data: Observed data with outcomes
        g: Restrict to this group, or None for all rows
        classifier: Probability classifier; IRLS logistic regression by default
        seed: Seed of the 50/50 split
        target_feature: The under-reported feature

    Returns:
        RateEstimate
    """
    _check_target(data, target_feature)
    y = _require_outcome(data)
    rows = np.arange(data.n) if g is None else data.group_rows(g)
    # canonical order by row id so the estimate does not depend on row order
    rows = rows[np.argsort(data.row_ids[rows], kind="stable")]
    rows = rows[np.random.default_rng(seed).permutation(rows.size)]
    n_train = rows.size // 2
    train_rows, eval_rows = rows[:n_train], rows[n_train:]

    others = [j for j in range(data.d) if j != target_feature]
    features = np.column_stack([data.X[:, others], y])
    reported = (data.X[:, target_feature] != 0.0).astype(int)
    if np.unique(reported[train_rows]).size < 2:
        raise UnderReportingError(
            f"Training half of group {g} has a single class of reported/unreported rows", "data_error"
        )
    positives = eval_rows[reported[eval_rows] == 1]
    if positives.size == 0:
        raise UnderReportingError(f"No reported rows in the evaluation half of group {g}", "data_error")

    if classifier is None:
        classifier = make_classifier("logistic")
    elif hasattr(classifier, "get_params"):
        classifier = clone(classifier)
    try:
        classifier.fit(features[train_rows], reported[train_rows])
        column = _positive_column(classifier)
        propensity_train = classifier.predict_proba(features[train_rows])[:, column]
        propensity_eval = classifier.predict_proba(features[eval_rows])[:, column]
    except UnderReportingError:
        raise
    except Exception as e:
        raise UnderReportingError(f"Propensity classifier failed: {str(e)}", "numerical_error", e)

    raw = float(propensity_eval[reported[eval_rows] == 1].mean())
    m_hat = float(np.clip(raw, MIN_RATE, 1.0))
    clamped = m_hat != raw
    if clamped:
        logger.warning(f"Reporting rate estimate {raw:.4g} for group {g} clamped to {m_hat:.4g}")
    diagnostics = {
        "classifier": type(classifier).__name__,
        "mean_propensity_train": float(propensity_train.mean()),
        "brier_eval": float(np.mean((propensity_eval - reported[eval_rows]) ** 2)),
        "n_positive_eval": int(positives.size),
    }
    return RateEstimate(
        m_hat=m_hat,
        group=g,
        n_train=int(train_rows.size),
        n_eval=int(eval_rows.size),
        clamped=clamped,
        raw_estimate=raw,
        classifier_diagnostics=diagnostics,
    )


def baseline_feature_omission(train: Dataset, target_feature: int = 0) -> LinearModel:
    """Least squares without the target feature; its coefficient is reported as 0."""
    _check_target(train, target_feature)
    if train.d == 1:
        raise UnderReportingError("Cannot omit the only feature", "validation_error")
    others = [j for j in range(train.d) if j != target_feature]
    reduced = ols_fit(train.X[:, others], _require_outcome(train), [train.feature_names[j] for j in others])
    beta = np.insert(reduced.beta, target_feature, 0.0)
    return LinearModel(reduced.alpha, beta, train.feature_names)


def baseline_row_omission(train: Dataset, target_feature: int = 0) -> LinearModel:
    """Least squares on the rows whose target feature is non-zero."""
    _check_target(train, target_feature)
    y = _require_outcome(train)
    keep = train.X[:, target_feature] != 0.0
    if keep.sum() <= train.d:
        raise UnderReportingError(f"Only {int(keep.sum())} rows with a reported value remain", "data_error")
    return ols_fit(train.X[keep], y[keep], train.feature_names)


def _gaussian_conditional(F: np.ndarray, target: np.ndarray, names: List[str]):
    """Linear-Gaussian model of target given F: (LinearModel, residual variance)."""
    if F.shape[1] == 0:
        model = LinearModel(float(target.mean()), np.empty(0), ())
        dof = max(target.size - 1, 1)
    else:
        model = ols_fit(F, target, names)
        dof = max(target.size - F.shape[1] - 1, 1)
    residuals = target - model.predict(F)
    return model, max(float(residuals @ residuals) / dof, VARIANCE_FLOOR)


@dataclass(frozen=True, eq=False)
class MultipleImputationEnsemble:
    """Least squares models fit on several stochastic imputations of the target feature.

    conditional models the target given the other features and Y (used while
    training); prediction_conditional drops Y, which is unknown at prediction time.
    """

    models: List[LinearModel]
    conditional: LinearModel
    conditional_variance: float
    prediction_conditional: LinearModel
    prediction_variance: float
    n_draws: int
    seed: int
    target_feature: int = 0

    def impute_for_prediction(self, X: np.ndarray, n_draws: Optional[int] = None) -> List[np.ndarray]:
        """Copies of X whose zero target entries are replaced by independent conditional draws."""
        X = np.asarray(X, dtype=float)
        n_draws = self.n_draws if n_draws is None else n_draws
        others = [j for j in range(X.shape[1]) if j != self.target_feature]
        zero = X[:, self.target_feature] == 0.0
        means = self.prediction_conditional.predict(X[zero][:, others])
        sd = np.sqrt(self.prediction_variance)
        imputed = []
        for child in np.random.SeedSequence([self.seed, 1]).spawn(n_draws):
            rng = np.random.default_rng(child)
            draw = X.copy()
            draw[zero, self.target_feature] = means + rng.normal(0.0, sd, size=means.size)
            imputed.append(draw)
        return imputed

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Average of each run's model applied to its own imputation of X."""
        imputations = self.impute_for_prediction(X, len(self.models))
        return np.mean([model.predict(Xk) for model, Xk in zip(self.models, imputations)], axis=0)


def baseline_multiple_imputation(
    train: Dataset, n_draws: int = 5, seed: int = 0, target_feature: int = 0
) -> MultipleImputationEnsemble:
    """Multiple imputation of every zero in the target feature, then least squares per run.

    Args:
        train: Training data with outcomes
        n_draws: Number of imputation runs
        seed: Root seed; run k uses the k-th SeedSequence child
        target_feature: The under-reported feature

    Returns:
        MultipleImputationEnsemble
    """
    _check_target(train, target_feature)
    if n_draws < 1:
        raise UnderReportingError(f"n_draws={n_draws} must be at least 1", "validation_error")
    y = _require_outcome(train)
    others = [j for j in range(train.d) if j != target_feature]
    other_names = [train.feature_names[j] for j in others]
    observed = train.X[:, target_feature] != 0.0
    if observed.sum() <= train.d + 1:
        raise UnderReportingError(f"Only {int(observed.sum())} rows with a reported value remain", "data_error")

    column = train.X[observed, target_feature]
    with_outcome = np.column_stack([train.X[:, others], y])
    conditional, variance = _gaussian_conditional(with_outcome[observed], column, other_names + ["y"])
    prediction_conditional, prediction_variance = _gaussian_conditional(
        train.X[observed][:, others], column, other_names
    )

    missing = ~observed
    means = conditional.predict(with_outcome[missing])
    models = []
    for child in np.random.SeedSequence(seed).spawn(n_draws):
        rng = np.random.default_rng(child)
        X = np.array(train.X)
        X[missing, target_feature] = means + rng.normal(0.0, np.sqrt(variance), size=means.size)
        models.append(ols_fit(X, y, train.feature_names))
    logger.debug(f"Multiple imputation: {int(missing.sum())} cells imputed {n_draws} times, residual variance {variance:.4g}")
    return MultipleImputationEnsemble(
        models=models,
        conditional=conditional,
        conditional_variance=variance,
        prediction_conditional=prediction_conditional,
        prediction_variance=prediction_variance,
        n_draws=n_draws,
        seed=seed,
        target_feature=target_feature,
    )
