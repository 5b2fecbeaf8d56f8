"""
Config-driven experiment runner.

A run loads data, builds the linear ground truth, splits it once, and then
evaluates every (feature, group, rate, rep) cell: train and test are
corrupted with independently seeded draws at the same rate, each method is
fit on the corrupted train part and audited on the corrupted test part.
"""

import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from underreporting import __version__
from underreporting.errors import UnderReportingError
from underreporting.models.dataset import Dataset
from underreporting.models.linear_model import LinearModel
from underreporting.models.population import GaussianPopulation
from underreporting.models.specs import NoiseSpec, SelectionPolicy, UnderReportingConfig, default_grid
from underreporting.services.corrupt import inject_underreporting, split_train_test
from underreporting.services.estimate import ols_fit, r2_score
from underreporting.services.fairness import curve_to_frame, excess_curve, independent_case_comparison
from underreporting.services.ingest import add_outcome_noise, load_csv, make_semisynthetic_outcomes
from underreporting.services.mitigate import (
    GROUP_DEPENDENT,
    augmented_fit,
    baseline_feature_omission,
    baseline_multiple_imputation,
    baseline_row_omission,
    estimate_reporting_rate,
    make_classifier,
    optimal_imputation_values,
    predict_with_imputation,
)

logger = logging.getLogger(__name__)

METHODS = (
    "plain",
    "feature_omission",
    "row_omission",
    "multiple_imputation",
    "augmented_imputation",
    "true_params",
)
OUTCOME_MODES = ("semisynthetic", "label")
RATE_SOURCES = ("true", "estimated")
CLASSIFIERS = ("logistic", "gradient_boosting")
REFERENCES = ("model", "outcome")

FAILED_CELL_LIMIT = 0.10
CORRUPTION_ORDER = "after_split"
FLOAT_FORMAT = "%.17g"

# seed stream tags
SPLIT_STREAM = 0
NOISE_STREAM = 1
CELL_STREAM = 2
SAMPLE_STREAM = 3

CELL_COLUMNS = ["feature", "corrupted_group", "rate", "method", "rep"]


def derive_seed(base_seed: int, *coordinates: int) -> int:
    """Seed for a unit of work, derived from the run seed and the unit's coordinates.

    Kept to 63 bits so seeds stay exact in int64 table columns.
    """
    entropy = [int(base_seed)] + [int(c) for c in coordinates]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0]) >> 1


def _file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class ExperimentConfig:
    """Experiment definition, usually read from JSON.

    Either dataset (a CSV with schema) or population (Gaussian moments
    sampled into n_rows rows) supplies the data.
    """

    features: List[str]
    dataset: Optional[str] = None
    schema: Any = None
    population: Optional[Dict[str, Any]] = None
    n_rows: int = 10000
    outcome_mode: str = "semisynthetic"
    noise_r2: Optional[float] = None
    rescale: Optional[List[float]] = None
    groups: List[int] = field(default_factory=lambda: [1])
    rates: List[float] = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(10)])
    methods: List[str] = field(default_factory=lambda: list(METHODS))
    reps: int = 30
    C_grid: List[float] = field(default_factory=lambda: list(default_grid()))
    seed: int = 0
    test_frac: float = 0.2
    n_draws: int = 5
    rate_source: str = "estimated"
    classifier: str = "logistic"
    reference: str = "model"
    independent_groups: bool = False

    def __post_init__(self):
        problems = []
        if (self.dataset is None) == (self.population is None):
            problems.append("exactly one of 'dataset' and 'population' is required")
        if self.dataset is not None and self.schema is None:
            problems.append("'schema' is required with 'dataset'")
        if not self.features:
            problems.append("'features' must name at least one feature to corrupt")
        for name, value, allowed in (
            ("outcome_mode", self.outcome_mode, OUTCOME_MODES),
            ("rate_source", self.rate_source, RATE_SOURCES),
            ("classifier", self.classifier, CLASSIFIERS),
            ("reference", self.reference, REFERENCES),
        ):
            if value not in allowed:
                problems.append(f"{name}={value!r} not in {allowed}")
        unknown_methods = [m for m in self.methods if m not in METHODS]
        if unknown_methods:
            problems.append(f"unknown methods {unknown_methods}")
        if any(g not in (0, 1) for g in self.groups):
            problems.append("groups must be 0 or 1")
        if any(not 0.0 <= r <= 1.0 for r in self.rates):
            problems.append("rates must lie in [0,1]")
        if self.reps < 1:
            problems.append("reps must be at least 1")
        if not self.C_grid:
            problems.append("C_grid must name at least one selection share")
        else:
            try:
                SelectionPolicy(grid=self.C_grid)
            except UnderReportingError as e:
                problems.append(f"C_grid: {e.message}")
            except (TypeError, ValueError):
                problems.append("C_grid must be a list of numbers")
        if self.noise_r2 is not None and not 0.0 < self.noise_r2 <= 1.0:
            problems.append("noise_r2 must lie in (0,1]")
        if self.rescale is not None and len(self.rescale) != 2:
            problems.append("rescale must be [a, b]")
        label_only = self.population is None and self.outcome_mode == "label"
        if label_only and ("true_params" in self.methods or self.noise_r2 is not None):
            problems.append("true_params and noise_r2 need a linear ground truth (outcome_mode 'semisynthetic')")
        if problems:
            raise UnderReportingError(f"Invalid experiment config: {'; '.join(problems)}", "config_error")

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: str = ".") -> "ExperimentConfig":
        """Build a config, resolving relative paths against base_dir."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise UnderReportingError(f"Unknown experiment config keys: {unknown}", "config_error")
        data = dict(data)
        for key in ("dataset", "schema"):
            if isinstance(data.get(key), str) and not os.path.isabs(data[key]):
                data[key] = os.path.normpath(os.path.join(base_dir, data[key]))
        try:
            return cls(**data)
        except TypeError as e:
            raise UnderReportingError(f"Invalid experiment config: {str(e)}", "config_error", e)

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError as e:
            raise UnderReportingError(f"Experiment config not found: {path}", "file_error", e)
        except json.JSONDecodeError as e:
            raise UnderReportingError(f"Experiment config {path} is not valid JSON: {str(e)}", "config_error", e)
        if not isinstance(data, dict):
            raise UnderReportingError("Experiment config must be a JSON object", "config_error")
        return cls.from_dict(data, os.path.dirname(os.path.abspath(path)))


@dataclass
class RunSummary:
    out_dir: str
    n_cells: int
    n_failed: int
    files: Dict[str, str]

    @property
    def failed_share(self) -> float:
        return self.n_failed / self.n_cells if self.n_cells else 0.0


@dataclass
class CellOutput:
    """Everything one (feature, group, rate, rep) unit produced, across methods."""

    curves: List[pd.DataFrame] = field(default_factory=list)
    params: List[Dict[str, Any]] = field(default_factory=list)
    r2: List[Dict[str, Any]] = field(default_factory=list)
    rates: List[Dict[str, Any]] = field(default_factory=list)
    failures: List[Dict[str, Any]] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class PreparedData:
    train: Dataset
    test: Dataset
    true_model: Optional[LinearModel]
    reference_model: LinearModel
    seeds: Dict[str, int]


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    """Load or sample the data, build outcomes, add noise and split."""
    seeds = {"base": cfg.seed, "split": derive_seed(cfg.seed, SPLIT_STREAM)}
    if cfg.population is not None:
        pop = GaussianPopulation.from_dict(cfg.population)
        seeds["sample"] = derive_seed(cfg.seed, SAMPLE_STREAM)
        sampled = pop.sample(cfg.n_rows, seeds["sample"])
        # fully reported latent features; under-reporting is injected per cell
        data = sampled.with_changes(X=sampled.Z, Z=None, xi_mask=None)
        true_model = LinearModel(pop.alpha, pop.beta, data.feature_names)
    else:
        data = load_csv(cfg.dataset, cfg.schema)
        true_model = None
        if cfg.outcome_mode == "semisynthetic":
            data, true_model = make_semisynthetic_outcomes(data, cfg.rescale)
        elif data.Y is None:
            raise UnderReportingError("outcome_mode 'label' needs a binary_label in the schema", "config_error")

    if cfg.noise_r2 is not None:
        seeds["noise"] = derive_seed(cfg.seed, NOISE_STREAM)
        data = add_outcome_noise(data, true_model, NoiseSpec(cfg.noise_r2, seed=seeds["noise"]))

    train, test = split_train_test(data, cfg.test_frac, seeds["split"])
    reference_model = ols_fit(train.X, train.Y, train.feature_names)
    return PreparedData(train, test, true_model, reference_model, seeds)


def _group_rates(group: int, rate: float) -> Tuple[float, float]:
    return (rate, 0.0) if group == 0 else (0.0, rate)


def _reporting_rates(
    cfg: ExperimentConfig, train: Dataset, feature: int, group: int, rate: float, seed: int, out: CellOutput,
    coordinates: Dict[str, Any],
) -> Dict[int, float]:
    """Reporting rate of each group for the augmented method: true or estimated."""
    rates = {0: 1.0, 1: 1.0}
    rates[group] = 1.0 - rate
    if cfg.rate_source == "true":
        return rates
    members = train.group_rows(group)
    if np.all(train.X[members, feature] != 0.0):
        # nothing to learn from; a group without zeros reports fully
        logger.debug(f"Group {group} has no zero entries in '{train.feature_names[feature]}'; using m_hat = 1")
        rates[group] = 1.0
        return rates
    estimate = estimate_reporting_rate(
        train, g=group, classifier=make_classifier(cfg.classifier, seed), seed=seed, target_feature=feature
    )
    out.rates.append(
        {
            **coordinates,
            "m_true": rates[group],
            "m_hat": estimate.m_hat,
            "raw_estimate": estimate.raw_estimate,
            "clamped": estimate.clamped,
            "n_train": estimate.n_train,
            "n_eval": estimate.n_eval,
            "brier_eval": estimate.classifier_diagnostics["brier_eval"],
        }
    )
    rates[group] = estimate.m_hat
    return rates


def _fit_and_predict(
    method: str, cfg: ExperimentConfig, prepared: PreparedData, train: Dataset, test: Dataset, feature: int,
    rates_for: Any, seed: int,
) -> Tuple[LinearModel, np.ndarray]:
    if method == "plain":
        model = ols_fit(train.X, train.Y, train.feature_names)
        return model, model.predict(test.X)
    if method == "feature_omission":
        model = baseline_feature_omission(train, feature)
        return model, model.predict(test.X)
    if method == "row_omission":
        model = baseline_row_omission(train, feature)
        return model, model.predict(test.X)
    if method == "multiple_imputation":
        ensemble = baseline_multiple_imputation(train, cfg.n_draws, seed, feature)
        alpha = float(np.mean([m.alpha for m in ensemble.models]))
        beta = np.mean([m.beta for m in ensemble.models], axis=0)
        return LinearModel(alpha, beta, train.feature_names), ensemble.predict(test.X)
    if method == "augmented_imputation":
        rates = rates_for()
        report = augmented_fit(train, rates[0], rates[1], GROUP_DEPENDENT, feature)
        values = optimal_imputation_values(train, rates[0], rates[1], GROUP_DEPENDENT, feature)
        return report.model, predict_with_imputation(report.model, test.X, test.G, values, feature)
    model = prepared.true_model
    return model, model.predict(test.X)


def run_cell(
    cfg: ExperimentConfig, prepared: PreparedData, feature_name: str, group: int, rate_index: int, rep: int
) -> CellOutput:
    """Corrupt, fit every method and audit one (feature, group, rate, rep) unit."""
    out = CellOutput()
    feature = prepared.train.feature_index(feature_name)
    rate = float(cfg.rates[rate_index])
    coords = (cfg.features.index(feature_name), group, rate_index, rep)
    train_seed = derive_seed(cfg.seed, CELL_STREAM, *coords, 0)
    test_seed = derive_seed(cfg.seed, CELL_STREAM, *coords, 1)
    base = {"feature": feature_name, "corrupted_group": group, "rate": rate, "rep": rep}

    try:
        rate_g0, rate_g1 = _group_rates(group, rate)
        train = inject_underreporting(prepared.train, UnderReportingConfig(feature, rate_g0, rate_g1, train_seed))
        test = inject_underreporting(prepared.test, UnderReportingConfig(feature, rate_g0, rate_g1, test_seed))
    except UnderReportingError as e:
        for method in cfg.methods:
            out.failures.append({**base, "method": method, "error_type": e.error_type, "message": e.message})
        return out
    train = train.estimation_view()
    test_observed = test.estimation_view()

    if cfg.reference == "outcome":
        reference = prepared.test.Y
    else:
        reference = prepared.reference_model.predict(prepared.test.X)

    cached_rates: Dict[str, Dict[int, float]] = {}

    def rates_for() -> Dict[int, float]:
        if "rates" not in cached_rates:
            rate_seed = derive_seed(cfg.seed, CELL_STREAM, *coords, 2)
            cached_rates["rates"] = _reporting_rates(cfg, train, feature, group, rate, rate_seed, out, base)
        return cached_rates["rates"]

    for method_index, method in enumerate(cfg.methods):
        cell = {**base, "method": method}
        method_seed = derive_seed(cfg.seed, CELL_STREAM, *coords, 3 + method_index)
        try:
            model, predictions = _fit_and_predict(
                method, cfg, prepared, train, test_observed, feature, rates_for, method_seed
            )
            curve = excess_curve(predictions, reference, test_observed.G, cfg.C_grid)
        except UnderReportingError as e:
            logger.warning(f"Cell {cell} failed: {e.error_type}: {e.message}")
            out.failures.append({**cell, "error_type": e.error_type, "message": e.message})
            continue

        frame = curve_to_frame(curve, {**cell, "seed_train": train_seed, "seed_test": test_seed})
        if cfg.independent_groups:
            frame["delta_sign_vs_other"] = [
                independent_case_comparison(result)[g] for result in curve for g in sorted(result.delta)
            ]
        out.curves.append(frame)
        out.r2.append({**cell, "r2": r2_score(test_observed.Y, predictions)})
        truth = prepared.true_model
        terms = [("intercept", model.alpha, truth.alpha if truth else np.nan)] + [
            (name, model.beta[j], truth.beta[j] if truth else np.nan) for j, name in enumerate(model.feature_names)
        ]
        out.params.extend({**cell, "term": t, "estimate": float(v), "true_value": float(tv)} for t, v, tv in terms)
    return out


def _write_csv(frame: pd.DataFrame, path: str) -> str:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def _order_key(cfg: ExperimentConfig) -> Dict[str, Dict[Any, int]]:
    return {
        "feature": {name: i for i, name in enumerate(cfg.features)},
        "method": {name: i for i, name in enumerate(cfg.methods)},
    }


def _canonical_sort(frame: pd.DataFrame, cfg: ExperimentConfig, extra: List[str]) -> pd.DataFrame:
    """Sort rows by cell coordinates in config order, then by the extra columns."""
    if frame.empty:
        return frame
    keys = _order_key(cfg)
    frame = frame.copy()
    sort_columns = []
    for column in [c for c in CELL_COLUMNS if c in frame.columns] + extra:
        if column in keys:
            frame[f"_{column}_order"] = frame[column].map(keys[column])
            sort_columns.append(f"_{column}_order")
        else:
            sort_columns.append(column)
    frame = frame.sort_values(sort_columns, kind="mergesort").reset_index(drop=True)
    return frame.drop(columns=[c for c in frame.columns if c.startswith("_") and c.endswith("_order")])


def summarize_params(params: pd.DataFrame) -> pd.DataFrame:
    """Mean and standard deviation of every coefficient over reps."""
    if params.empty:
        return pd.DataFrame(columns=CELL_COLUMNS[:-1] + ["term", "mean", "sd", "n", "true_value"])
    grouped = params.groupby(CELL_COLUMNS[:-1] + ["term"], sort=False)
    summary = grouped["estimate"].agg(mean="mean", sd="std", n="count").reset_index()
    summary["true_value"] = grouped["true_value"].first().to_numpy()
    return summary


def run_experiment(config_path: str, out_dir: str, threads: int = 1, show_progress: bool = True) -> RunSummary:
    """Run a full experiment and write its result bundle.

    Args:
        config_path: ExperimentConfig JSON file
        out_dir: Output directory, created if needed
        threads: Worker threads
        show_progress: Show a progress bar when attached to a terminal

    Returns:
        RunSummary; raises a numerical error after writing outputs when more than 10% of cells failed
    """
    cfg = ExperimentConfig.from_file(config_path)
    os.makedirs(out_dir, exist_ok=True)
    prepared = prepare_data(cfg)
    for name in cfg.features:
        prepared.train.feature_index(name)

    units = [
        (feature_name, group, rate_index, rep)
        for feature_name in cfg.features
        for group in cfg.groups
        for rate_index in range(len(cfg.rates))
        for rep in range(cfg.reps)
    ]
    logger.info(f"Running {len(units)} units x {len(cfg.methods)} methods with {threads} thread(s)")

    outputs: List[CellOutput] = []
    progress = show_progress and sys.stderr.isatty()
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        futures = [executor.submit(run_cell, cfg, prepared, *unit) for unit in units]
        for unit, future in zip(units, tqdm(futures, desc="Experiment cells", unit="cell", disable=not progress)):
            try:
                outputs.append(future.result())
            except Exception as e:
                logger.error(f"Unexpected failure in unit {unit}: {str(e)}")
                failed = CellOutput()
                feature_name, group, rate_index, rep = unit
                for method in cfg.methods:
                    failed.failures.append(
                        {
                            "feature": feature_name, "corrupted_group": group, "rate": float(cfg.rates[rate_index]),
                            "method": method, "rep": rep, "error_type": type(e).__name__, "message": str(e),
                        }
                    )
                outputs.append(failed)

    files = _write_outputs(cfg, config_path, out_dir, prepared, outputs)
    failures = [f for out in outputs for f in out.failures]
    n_cells = len(units) * len(cfg.methods)
    summary = RunSummary(out_dir=out_dir, n_cells=n_cells, n_failed=len(failures), files=files)
    logger.info(f"Experiment finished: {n_cells - len(failures)} of {n_cells} cells succeeded; outputs in {out_dir}")
    if summary.failed_share > FAILED_CELL_LIMIT:
        raise UnderReportingError(
            f"{len(failures)} of {n_cells} cells failed (more than {FAILED_CELL_LIMIT:.0%})", "numerical_error"
        )
    return summary


def _write_outputs(
    cfg: ExperimentConfig, config_path: str, out_dir: str, prepared: PreparedData, outputs: List[CellOutput]
) -> Dict[str, str]:
    curves = [frame for out in outputs for frame in out.curves]
    results = pd.concat(curves, ignore_index=True) if curves else pd.DataFrame(columns=CELL_COLUMNS)
    results = _canonical_sort(results, cfg, ["C", "group"] if "C" in results.columns else [])
    params = _canonical_sort(pd.DataFrame([row for out in outputs for row in out.params]), cfg, [])
    r2 = _canonical_sort(pd.DataFrame([row for out in outputs for row in out.r2]), cfg, [])
    rates = _canonical_sort(pd.DataFrame([row for out in outputs for row in out.rates]), cfg, [])
    failures = _canonical_sort(pd.DataFrame([row for out in outputs for row in out.failures]), cfg, [])

    files = {
        "results": _write_csv(results, os.path.join(out_dir, "results.csv")),
        "params": _write_csv(params, os.path.join(out_dir, "params.csv")),
        "params_summary": _write_csv(summarize_params(params), os.path.join(out_dir, "params_summary.csv")),
        "r2": _write_csv(r2, os.path.join(out_dir, "r2.csv")),
        "rates": _write_csv(rates, os.path.join(out_dir, "rates.csv")),
    }

    manifest = {
        "library_version": __version__,
        "config_sha256": _file_sha256(config_path),
        "input_sha256": _file_sha256(cfg.dataset) if cfg.dataset else None,
        "config": asdict(cfg),
        "seeds": prepared.seeds,
        "corruption_order": CORRUPTION_ORDER,
        "reference": cfg.reference,
        "rate_source": cfg.rate_source,
        "n_train": prepared.train.n,
        "n_test": prepared.test.n,
        "failed_cells": failures.to_dict(orient="records"),
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    files["manifest"] = manifest_path
    for name, path in files.items():
        logger.info(f"Wrote {name}: {path}")
    return files
