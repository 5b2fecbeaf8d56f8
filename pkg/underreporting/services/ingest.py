"""
Loading tabular data and manufacturing semi-synthetic linear outcomes.
"""

import json
import logging
import os
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.special import expit

from underreporting.errors import UnderReportingError
from underreporting.models.dataset import Dataset
from underreporting.models.linear_model import LinearModel
from underreporting.models.specs import NoiseSpec
from underreporting.services.estimate import check_full_rank, ols_fit

logger = logging.getLogger(__name__)

COEFFICIENT_NORM_CAP = 1e4
SEPARATION_RIDGE = 1e-6
MODEL_MATCH_TOLERANCE = 1e-10


def load_schema(path: str) -> Dict[str, Any]:
    """Read a JSON schema file describing which CSV columns to use."""
    if not os.path.exists(path):
        raise UnderReportingError(f"Schema file not found: {path}", "file_error")
    try:
        with open(path, "r", encoding="utf-8") as f:
            schema = json.load(f)
    except json.JSONDecodeError as e:
        raise UnderReportingError(f"Schema {path} is not valid JSON: {str(e)}", "schema_error", e)
    except OSError as e:
        raise UnderReportingError(f"Failed to read schema {path}: {str(e)}", "file_error", e)
    _check_schema(schema)
    return schema


def _check_schema(schema: Dict[str, Any]) -> None:
    if not isinstance(schema, dict):
        raise UnderReportingError("Schema must be a JSON object", "schema_error")
    for key in ("features", "group"):
        if key not in schema:
            raise UnderReportingError(f"Schema is missing '{key}'", "schema_error")
    if not schema["features"]:
        raise UnderReportingError("Schema declares no features", "schema_error")
    unknown = set(schema.get("continuous", [])) - set(schema["features"])
    if unknown:
        raise UnderReportingError(f"Continuous columns not among the features: {sorted(unknown)}", "schema_error")


def _map_column(raw: pd.Series, mapping: Optional[Dict[str, Any]]) -> pd.Series:
    if mapping is None:
        return pd.to_numeric(raw, errors="coerce")
    lookup = {str(k): float(v) for k, v in mapping.items()}
    return raw.astype(str).str.strip().map(lookup)


def load_csv(path: str, schema: Union[str, Dict[str, Any]]) -> Dataset:
    """Load a CSV file into a Dataset.

    Args:
        path: CSV file with a header row
        schema: Schema dict or path to a schema JSON file

    Returns:
        Dataset with X from the feature columns, G from the group column and
        Y from the binary label (when declared)
    """
    if isinstance(schema, str):
        schema = load_schema(schema)
    _check_schema(schema)
    if not os.path.exists(path):
        raise UnderReportingError(f"Data file not found: {path}", "file_error")

    try:
        # header=None keeps duplicate names unmangled so they can be reported
        header = pd.read_csv(path, header=None, nrows=1, dtype=str, keep_default_na=False).iloc[0].str.strip().tolist()
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as e:
        raise UnderReportingError(f"{path} is empty or has no header row", "schema_error", e)
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise UnderReportingError(f"Failed to parse {path}: {str(e)}", "schema_error", e)
    except OSError as e:
        raise UnderReportingError(f"Failed to read {path}: {str(e)}", "file_error", e)

    duplicates = sorted({name for name in header if header.count(name) > 1})
    if duplicates:
        raise UnderReportingError(f"Duplicate header columns in {path}: {duplicates}", "schema_error")
    if any(name == "" for name in header):
        raise UnderReportingError(f"{path} has a blank header column", "schema_error")
    raw.columns = header

    features = list(schema["features"])
    declared = features + [schema["group"]] + ([schema["binary_label"]] if schema.get("binary_label") else [])
    missing = [column for column in declared if column not in raw.columns]
    if missing:
        raise UnderReportingError(f"Declared columns absent from {path}: {missing}", "schema_error")

    X = np.empty((len(raw), len(features)))
    for j, column in enumerate(features):
        values = pd.to_numeric(raw[column].str.strip(), errors="coerce")
        bad = np.flatnonzero(values.isna().to_numpy())
        if bad.size:
            row = int(bad[0])
            raise UnderReportingError(
                f"Non-numeric value {raw[column].iloc[row]!r} in column '{column}' at data row {row + 1}",
                "data_error",
            )
        X[:, j] = values.to_numpy(dtype=float)

    G = _map_column(raw[schema["group"]], schema.get("group_map"))
    bad = np.flatnonzero(~G.isin([0.0, 1.0]).to_numpy())
    if bad.size:
        row = int(bad[0])
        raise UnderReportingError(
            f"Group value {raw[schema['group']].iloc[row]!r} at data row {row + 1} is not binary after mapping",
            "data_error",
        )

    Y = None
    if schema.get("binary_label"):
        label = _map_column(raw[schema["binary_label"]], schema.get("label_map"))
        bad = np.flatnonzero(label.isna().to_numpy())
        if bad.size:
            raise UnderReportingError(
                f"Label column '{schema['binary_label']}' has an unusable value at data row {int(bad[0]) + 1}",
                "data_error",
            )
        Y = label.to_numpy(dtype=float)

    continuous = set(schema.get("continuous", features))
    logger.info(f"Loaded {len(raw)} rows with {len(features)} features from {path}")
    return Dataset(
        X=X,
        G=G.to_numpy(dtype=float),
        feature_names=tuple(features),
        continuous_flags=tuple(name in continuous for name in features),
        Y=Y,
        provenance={"source": os.path.abspath(path), "outcome": "label" if Y is not None else None},
    )


def _irls(A: np.ndarray, y: np.ndarray, ridge: float, tol: float, max_iter: int) -> Tuple[np.ndarray, Dict[str, Any]]:
    w = np.zeros(A.shape[1])
    penalty = np.full(A.shape[1], ridge)
    penalty[0] = 0.0
    gradient_norm = np.inf
    for iteration in range(1, max_iter + 1):
        p = expit(A @ w)
        weights = p * (1.0 - p)
        gradient = A.T @ (y - p) - penalty * w
        gradient_norm = float(np.linalg.norm(gradient))
        hessian = (A * weights[:, None]).T @ A + np.diag(penalty)
        if not np.all(np.isfinite(hessian)) or weights.max() < 1e-300:
            return w, {"iterations": iteration, "gradient_norm": gradient_norm, "separated": True}
        try:
            step = linalg.solve(hessian, gradient, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            return w, {"iterations": iteration, "gradient_norm": gradient_norm, "separated": True}
        w = w + step
        if np.linalg.norm(w[1:]) > COEFFICIENT_NORM_CAP:
            return w, {"iterations": iteration, "gradient_norm": gradient_norm, "separated": True}
        if np.max(np.abs(step)) < tol * (1.0 + np.max(np.abs(w))):
            p = expit(A @ w)
            gradient_norm = float(np.linalg.norm(A.T @ (y - p) - penalty * w))
            return w, {"iterations": iteration, "gradient_norm": gradient_norm, "converged": True}
    return w, {"iterations": max_iter, "gradient_norm": gradient_norm, "converged": False}


def fit_logistic_irls(
    X: np.ndarray, y: np.ndarray, tol: float = 1e-8, max_iter: int = 100
) -> Tuple[float, np.ndarray, Dict[str, Any]]:
    """Fit a logistic regression by Newton's method (IRLS).

    Falls back to a small ridge penalty when the classes are separable.

    Args:
        X: n x d features
        y: Binary 0/1 labels
        tol: Relative step tolerance
        max_iter: Iteration cap per attempt

    Returns:
        (intercept, coefficients, diagnostics)
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise UnderReportingError(f"Design {X.shape} and label length {y.size} disagree", "validation_error")
    A = np.column_stack([np.ones(len(y)), X])

    w, diagnostics = _irls(A, y, 0.0, tol, max_iter)
    ridge = 0.0
    if not diagnostics.get("converged"):
        ridge = SEPARATION_RIDGE
        logger.debug(
            f"IRLS stopped after {diagnostics['iterations']} iterations (separation suspected); "
            f"refitting with ridge {ridge}"
        )
        w, diagnostics = _irls(A, y, ridge, tol, max_iter)
        if not diagnostics.get("converged"):
            raise UnderReportingError(
                f"Logistic regression did not converge after {diagnostics['iterations']} iterations "
                f"(gradient norm {diagnostics['gradient_norm']:.3g})",
                "convergence_error",
            )
    diagnostics = {"iterations": diagnostics["iterations"], "gradient_norm": diagnostics["gradient_norm"], "ridge": ridge}
    logger.debug(f"IRLS converged: {diagnostics}")
    return float(w[0]), w[1:], diagnostics


def _features_of(data: Dataset) -> np.ndarray:
    return data.Z if data.Z is not None else data.X


def make_semisynthetic_outcomes(data: Dataset, rescale: Optional[Sequence[float]] = None) -> Tuple[Dataset, LinearModel]:
    """Replace a binary label with a linear ground-truth outcome.

    The label is fit with a logistic regression, the fitted probabilities
    are optionally rescaled with an affine map a + b*p, and a least squares
    fit of those probabilities becomes both the new outcome and the true model.

    Args:
        data: Dataset whose Y holds a binary label
        rescale: Optional (a, b)

    Returns:
        (dataset with the new Y, true model)
    """
    if data.Y is None:
        raise UnderReportingError("Dataset has no label to synthesize outcomes from", "data_error")
    if not np.all(np.isin(data.Y, (0.0, 1.0))):
        raise UnderReportingError("Semi-synthetic outcomes need a binary 0/1 label", "data_error")
    features = _features_of(data)
    check_full_rank(features, data.feature_names)

    intercept, coef, diagnostics = fit_logistic_irls(features, data.Y)
    p = expit(intercept + features @ coef)
    a, b = (0.0, 1.0) if rescale is None else (float(rescale[0]), float(rescale[1]))
    p = a + b * p

    true_model = ols_fit(features, p, data.feature_names)
    provenance = dict(data.provenance)
    provenance.update(
        {
            "outcome": "semisynthetic",
            "logistic_intercept": intercept,
            "logistic_coef": coef.tolist(),
            "logistic_iterations": diagnostics["iterations"],
            "rescale": [a, b],
        }
    )
    logger.info(f"Semi-synthetic outcomes built for {data.n} rows")
    return data.with_changes(Y=true_model.predict(features), provenance=provenance), true_model


def add_outcome_noise(data: Dataset, true_model: LinearModel, spec: NoiseSpec) -> Dataset:
    """Add Gaussian noise so the true model explains target_r2 of the outcome variance.

    Args:
        data: Dataset whose Y equals true_model applied to its features
        true_model: The noiseless outcome model
        spec: Target R^2 and seed

    Returns:
        Dataset with noisy Y; sigma^2 and the target are recorded in provenance
    """
    if data.Y is None:
        raise UnderReportingError("Dataset has no outcome to add noise to", "data_error")
    fitted = true_model.predict(_features_of(data))
    scale = max(1.0, float(np.max(np.abs(fitted)))) if fitted.size else 1.0
    if np.max(np.abs(data.Y - fitted)) > MODEL_MATCH_TOLERANCE * scale:
        raise UnderReportingError("Outcome does not equal the true model's predictions", "data_error")

    fitted_variance = float(np.var(fitted))
    if fitted_variance == 0.0 and spec.target_r2 < 1.0:
        raise UnderReportingError("True model predictions have zero variance", "numerical_error")
    sigma_sq = spec.sigma_sq if spec.sigma_sq is not None else spec.derive_sigma_sq(fitted_variance)

    Y = data.Y
    if sigma_sq > 0.0:
        rng = np.random.default_rng(spec.seed)
        Y = data.Y + rng.normal(0.0, np.sqrt(sigma_sq), size=data.n)
    provenance = dict(data.provenance)
    provenance.update({"noise_sigma_sq": sigma_sq, "target_r2": spec.target_r2, "noise_seed": spec.seed})
    logger.info(f"Added outcome noise with sigma^2={sigma_sq:.6g} (target R^2 {spec.target_r2})")
    return data.with_changes(Y=Y, provenance=provenance)
