"""
Thresholding, group selection rates and the excess selection rate metric.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from underreporting.errors import UnderReportingError
from underreporting.models.results import ExcessSelectionResult

logger = logging.getLogger(__name__)

CURVE_COLUMNS = [
    "C",
    "group",
    "rate_corrupted",
    "rate_reference",
    "delta",
    "threshold_corrupted",
    "threshold_reference",
    "tie_flag",
]


@dataclass(frozen=True)
class ThresholdResult:
    threshold: float
    selected_fraction: float
    tie_flag: bool


def threshold_for_rate(predictions: np.ndarray, C: float) -> ThresholdResult:
    """Threshold that selects the top C share of the predictions.

    Returns the k-th largest prediction with k = floor(n*C), or +inf when
    k = 0. All predictions tied with the threshold value are selected; when
    that selects more than k items the tie flag is set.

    Args:
        predictions: Prediction vector
        C: Selection share in (0,1)

    Returns:
        ThresholdResult
    """
    predictions = np.asarray(predictions, dtype=float).reshape(-1)
    n = predictions.size
    if n == 0:
        raise UnderReportingError("Cannot threshold an empty prediction vector", "validation_error")
    if not 0.0 < C < 1.0:
        raise UnderReportingError(f"Selection share C={C} must lie in (0,1)", "validation_error")

    k = math.floor(round(n * C, 9))
    if k == 0:
        return ThresholdResult(threshold=math.inf, selected_fraction=0.0, tie_flag=False)
    threshold = float(np.sort(predictions)[n - k])
    selected = int(np.count_nonzero(predictions >= threshold))
    tie_flag = selected > k
    if tie_flag:
        logger.debug(f"Tie at threshold {threshold}: {selected} selected for a target of {k}")
    return ThresholdResult(threshold=threshold, selected_fraction=selected / n, tie_flag=tie_flag)


def selection_rates(predictions: np.ndarray, groups: np.ndarray, t: float) -> Dict[int, float]:
    """Share of each group with prediction >= t."""
    predictions = np.asarray(predictions, dtype=float).reshape(-1)
    groups = np.asarray(groups, dtype=float).reshape(-1)
    if predictions.size != groups.size:
        raise UnderReportingError(
            f"{predictions.size} predictions but {groups.size} group labels", "validation_error"
        )
    rates = {}
    for g in (0, 1):
        members = groups == g
        if not members.any():
            raise UnderReportingError(f"Group {g} has no rows", "data_error")
        rates[g] = float(np.mean(predictions[members] >= t))
    return rates


def excess_selection_rate(
    pred_corrupted: np.ndarray, pred_reference: np.ndarray, groups: np.ndarray, C: float
) -> ExcessSelectionResult:
    """Excess selection rate of each group at share C.

    Each prediction vector gets its own threshold at share C; the excess
    rate of group g is its selection rate under the corrupted predictions
    minus its rate under the reference predictions.
    """
    pred_corrupted = np.asarray(pred_corrupted, dtype=float).reshape(-1)
    pred_reference = np.asarray(pred_reference, dtype=float).reshape(-1)
    if pred_corrupted.size != pred_reference.size:
        raise UnderReportingError(
            f"Prediction vectors are misaligned ({pred_corrupted.size} vs {pred_reference.size} rows)",
            "validation_error",
        )
    corrupted = threshold_for_rate(pred_corrupted, C)
    reference = threshold_for_rate(pred_reference, C)
    rate_corrupted = selection_rates(pred_corrupted, groups, corrupted.threshold)
    rate_reference = selection_rates(pred_reference, groups, reference.threshold)
    return ExcessSelectionResult(
        C=float(C),
        delta={g: rate_corrupted[g] - rate_reference[g] for g in (0, 1)},
        rate_corrupted=rate_corrupted,
        rate_reference=rate_reference,
        threshold_corrupted=corrupted.threshold,
        threshold_reference=reference.threshold,
        tie_flag=corrupted.tie_flag or reference.tie_flag,
    )


def excess_curve(
    pred_corrupted: np.ndarray, pred_reference: np.ndarray, groups: np.ndarray, grid: Iterable[float]
) -> List[ExcessSelectionResult]:
    """excess_selection_rate over a grid of shares, ordered by C."""
    return [excess_selection_rate(pred_corrupted, pred_reference, groups, C) for C in sorted(grid)]


def independent_case_comparison(result: ExcessSelectionResult) -> Dict[int, int]:
    """Sign of delta(g) - delta(1-g) for each group.

    Only meaningful when the features are independent of the group.
    """
    return {g: int(np.sign(result.delta[g] - result.delta[1 - g])) for g in (0, 1)}


def curve_to_frame(
    results: Iterable[ExcessSelectionResult], extra_columns: Optional[Dict[str, Any]] = None
) -> pd.DataFrame:
    """Long-format table of curve results, one row per (C, group).

    Args:
        results: Curve results
        extra_columns: Constant columns (cell coordinates, seeds) placed before the curve columns
    """
    extra_columns = extra_columns or {}
    rows = [{**extra_columns, **row} for result in results for row in result.to_rows()]
    return pd.DataFrame(rows, columns=list(extra_columns) + CURVE_COLUMNS)
