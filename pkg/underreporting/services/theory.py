"""
Gaussian-mixture analysis of selection rates under differential under-reporting.

When one feature is under-reported, the biased model's score of a group is
a two-component mixture: rows whose target cell was reported (full
component) and rows where it silently defaulted to 0 (reduced component).
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import optimize, stats

from underreporting.errors import UnderReportingError
from underreporting.models.linear_model import LinearModel
from underreporting.models.population import GaussianPopulation
from underreporting.models.results import ExcessSelectionResult
from underreporting.services.estimate import (
    MomentSet,
    observed_moments,
    orthogonalize_tail,
    population_biased_params,
    restore_tail,
)

logger = logging.getLogger(__name__)

BOUNDARY_TOLERANCE = 1e-12

CASE_OVERSELECTED = "Case1_overselected"
CASE_UNDERSELECTED = "Case2_underselected"
CASE_BOUNDARY = "Boundary"


@dataclass(frozen=True)
class TheoryReport:
    """Case analysis of a population with one under-reported feature."""

    r2: float
    s2: float
    turning_point: Optional[float]
    c: float
    q: float
    case_label: str
    variance_full: float
    variance_reduced: float
    biased_model: LinearModel
    more_underreported_group: Optional[int]

    def to_dict(self) -> Dict[str, Any]:
        result = asdict(self)
        result["biased_model"] = self.biased_model.to_dict()
        return result


def _component_moments(model: LinearModel, pop: GaussianPopulation, target_feature: int) -> Tuple[float, float, float, float]:
    """(mean, sd) of the full and the reduced score components."""
    if model.d != pop.d:
        raise UnderReportingError(f"Model has {model.d} coefficients, population {pop.d} features", "validation_error")
    if not 0 <= target_feature < pop.d:
        raise UnderReportingError(f"Invalid target feature {target_feature}", "validation_error")
    beta = model.beta
    tail = np.array([j for j in range(pop.d) if j != target_feature], dtype=int)
    mean_full = model.alpha + beta @ pop.mu
    var_full = float(beta @ pop.sigma @ beta)
    mean_reduced = model.alpha + beta[tail] @ pop.mu[tail]
    var_reduced = float(beta[tail] @ pop.sigma[np.ix_(tail, tail)] @ beta[tail]) if tail.size else 0.0
    return mean_full, np.sqrt(max(var_full, 0.0)), mean_reduced, np.sqrt(max(var_reduced, 0.0))


def _normal_cdf(x: np.ndarray, mean: float, sd: float) -> np.ndarray:
    if sd == 0.0:
        return (x >= mean).astype(float)
    return stats.norm.cdf(x, loc=mean, scale=sd)


def mixture_cdf(model: LinearModel, pop: GaussianPopulation, g: int, x, target_feature: int = 0):
    """P(score <= x) in group g for the given model under the population's reporting rates.

    Args:
        model: Model applied to the observed (under-reported) features
        pop: Gaussian population
        g: Group (0 or 1)
        x: Scalar or array of score values
        target_feature: The under-reported feature

    Returns:
        Probabilities with the shape of x
    """
    m = float(pop.rates(g)[target_feature])
    mean_full, sd_full, mean_reduced, sd_reduced = _component_moments(model, pop, target_feature)
    values = np.asarray(x, dtype=float)
    cdf = (1.0 - m) * _normal_cdf(values, mean_reduced, sd_reduced) + m * _normal_cdf(values, mean_full, sd_full)
    return float(cdf) if np.ndim(x) == 0 else cdf


def population_cdf(model: LinearModel, pop: GaussianPopulation, x, target_feature: int = 0):
    """Score CDF of the whole population, r*F_1 + (1-r)*F_0."""
    return pop.r * mixture_cdf(model, pop, 1, x, target_feature) + (1.0 - pop.r) * mixture_cdf(
        model, pop, 0, x, target_feature
    )


def mixture_quantile(
    model: LinearModel, pop: GaussianPopulation, p: float, g: Optional[int] = None, target_feature: int = 0
) -> float:
    """Inverse of the group (or, with g=None, population) mixture CDF.

    Args:
        model: Model applied to the observed features
        pop: Gaussian population
        p: Probability in (0,1)
        g: Group, or None for the population mixture
        target_feature: The under-reported feature

    Returns:
        The score x with F(x) = p
    """
    if not 0.0 < p < 1.0:
        raise UnderReportingError(f"Quantile level {p} must lie in (0,1)", "validation_error")
    mean_full, sd_full, mean_reduced, sd_reduced = _component_moments(model, pop, target_feature)
    spread = max(sd_full, sd_reduced, 1e-12)
    lower = min(mean_full, mean_reduced) - 40.0 * spread
    upper = max(mean_full, mean_reduced) + 40.0 * spread

    if g is None:
        def excess(x):
            return population_cdf(model, pop, x, target_feature) - p
    else:
        def excess(x):
            return mixture_cdf(model, pop, g, x, target_feature) - p

    try:
        return float(optimize.brentq(excess, lower, upper, xtol=1e-12, rtol=1e-14, maxiter=500))
    except (ValueError, RuntimeError) as e:
        raise UnderReportingError(f"Failed to invert the mixture CDF at p={p}: {str(e)}", "numerical_error", e)


def turning_point(model: LinearModel, pop: GaussianPopulation, target_feature: int = 0) -> float:
    """Score at which the full and reduced component CDFs cross.

    T = alpha_hat + beta_tail^T mu_tail + sd_red / (sd_red - sd_full) * beta1_hat * mu_1
    """
    mean_full, sd_full, mean_reduced, sd_reduced = _component_moments(model, pop, target_feature)
    if abs(sd_reduced - sd_full) <= BOUNDARY_TOLERANCE * max(1.0, sd_full, sd_reduced):
        raise UnderReportingError(
            "Full and reduced score components have equal spread; no turning point", "undefined_turning_point"
        )
    shift = mean_full - mean_reduced
    return float(mean_reduced + sd_reduced / (sd_reduced - sd_full) * shift)


def corollary_constant(var_z1: float, mean_z1: float, m: float, s2: float) -> float:
    """Constant c separating the two cases: overselection iff q < -c."""
    if var_z1 <= 0.0:
        raise UnderReportingError(f"Variance must be positive, got {var_z1}", "validation_error")
    if not 0.0 < m <= 1.0:
        raise UnderReportingError(f"Reporting rate m={m} must lie in (0,1]", "validation_error")
    if not 0.0 <= s2 < 1.0:
        raise UnderReportingError(f"S^2={s2} must lie in [0,1)", "validation_error")
    second_moment = var_z1 + mean_z1 ** 2
    numerator = var_z1 ** 2 * (1.0 - s2) + 2.0 * (1.0 - m) * second_moment * var_z1 * s2
    denominator = 2.0 * var_z1 * (1.0 - s2) * m + 2.0 * (1.0 - m) * second_moment
    return numerator / denominator


def _unpermute(model: LinearModel, order: np.ndarray) -> LinearModel:
    beta = np.empty(order.size)
    beta[order] = model.beta
    return LinearModel(model.alpha, beta, tuple(f"z{j + 1}" for j in range(order.size)))


def biased_population_model(pop: GaussianPopulation, target_feature: int = 0) -> Tuple[LinearModel, MomentSet, LinearModel]:
    """Population least squares model on data where target_feature is under-reported.

    Returns:
        (biased model in the population's feature order, rotated moments, rotated true model)
    """
    moments, true_model, order = MomentSet.from_population(pop, target_feature)
    rotated, rotated_model, w = orthogonalize_tail(moments, true_model)
    biased = restore_tail(population_biased_params(rotated, rotated_model), w)
    return _unpermute(biased, order), rotated, rotated_model


def classify_case(pop: GaussianPopulation, target_feature: int = 0) -> TheoryReport:
    """Decide whether the more under-reported group is over- or under-selected at high thresholds.

    Args:
        pop: Gaussian population with per-group reporting rates
        target_feature: The under-reported feature

    Returns:
        TheoryReport
    """
    if not 0 <= target_feature < pop.d:
        raise UnderReportingError(f"Invalid target feature {target_feature}", "validation_error")
    beta1 = float(pop.beta[target_feature])
    if beta1 == 0.0:
        raise UnderReportingError("The under-reported feature has a zero coefficient", "validation_error")

    biased, rotated, rotated_model = biased_population_model(pop, target_feature)
    var_z1 = rotated.cov[0, 0]
    m = rotated.reporting_rate
    # tail is uncorrelated but only unit-variance when it was rotated (d >= 3)
    var_tail = np.diag(rotated.cov)[1:]
    s2 = float(np.sum(rotated.cov[0, 1:] ** 2 / (var_z1 * var_tail)))
    q = float(rotated_model.beta[1:] @ rotated.cov[0, 1:] / beta1)
    c = corollary_constant(var_z1, rotated.mean[0], m, s2)
    var_x1, cov_x1_z, _ = observed_moments(rotated)
    r2 = float(np.sum(cov_x1_z[1:] ** 2 / (var_x1 * var_tail)))

    _, sd_full, _, sd_reduced = _component_moments(biased, pop, target_feature)
    variance_full, variance_reduced = sd_full ** 2, sd_reduced ** 2

    gap = q + c
    if abs(gap) <= BOUNDARY_TOLERANCE * max(1.0, abs(c)):
        label = CASE_BOUNDARY
    elif gap < 0.0:
        label = CASE_OVERSELECTED
    else:
        label = CASE_UNDERSELECTED
    if label != CASE_BOUNDARY:
        variance_gap = variance_reduced - variance_full
        if abs(variance_gap) > 1e-9 * max(1.0, variance_full) and (variance_gap > 0.0) != (label == CASE_OVERSELECTED):
            raise UnderReportingError(
                f"Case label {label} disagrees with component variances "
                f"(full {variance_full:.6g}, reduced {variance_reduced:.6g})",
                "numerical_error",
            )

    try:
        turning = turning_point(biased, pop, target_feature)
    except UnderReportingError as e:
        logger.warning(f"Turning point undefined: {e.message}")
        turning = None

    m0, m1 = float(pop.m0[target_feature]), float(pop.m1[target_feature])
    more_underreported = None if m0 == m1 else (0 if m0 < m1 else 1)
    return TheoryReport(
        r2=r2,
        s2=s2,
        turning_point=turning,
        c=c,
        q=q,
        case_label=label,
        variance_full=variance_full,
        variance_reduced=variance_reduced,
        biased_model=biased,
        more_underreported_group=more_underreported,
    )


def population_excess_selection(pop: GaussianPopulation, C: float, target_feature: int = 0) -> ExcessSelectionResult:
    """Excess selection rate of each group when the top C share is selected, in the population limit.

    The reference ranks by the true outcome alpha + beta^T Z, which has the
    same distribution in both groups, so each group's reference rate is C.
    """
    if not 0.0 < C < 1.0:
        raise UnderReportingError(f"Selection share C={C} must lie in (0,1)", "validation_error")
    biased, _, _ = biased_population_model(pop, target_feature)

    true_mean = pop.alpha + pop.beta @ pop.mu
    true_sd = float(np.sqrt(pop.beta @ pop.sigma @ pop.beta))
    threshold_reference = float(true_mean + true_sd * stats.norm.ppf(1.0 - C))
    threshold_corrupted = mixture_quantile(biased, pop, 1.0 - C, None, target_feature)

    rate_corrupted = {g: float(1.0 - mixture_cdf(biased, pop, g, threshold_corrupted, target_feature)) for g in (0, 1)}
    rate_reference = {0: float(C), 1: float(C)}
    return ExcessSelectionResult(
        C=float(C),
        delta={g: rate_corrupted[g] - C for g in (0, 1)},
        rate_corrupted=rate_corrupted,
        rate_reference=rate_reference,
        threshold_corrupted=threshold_corrupted,
        threshold_reference=threshold_reference,
    )
