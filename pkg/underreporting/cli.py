#!/usr/bin/env python3
"""
Command-line interface for the under-reporting audit tools.

Every subcommand reads and writes dataset bundles (see save_dataset) or
JSON/CSV files so the pipeline can be run one step at a time.
"""

import os
import sys
import json
import argparse
import logging
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from underreporting import __version__
from underreporting.errors import UnderReportingError
from underreporting.logging_config import setup_logging
from underreporting.models import (
    Dataset,
    GaussianPopulation,
    LinearModel,
    NoiseSpec,
    UnderReportingConfig,
    load_dataset,
    save_dataset,
)
from underreporting.models.specs import SelectionPolicy, default_grid
from underreporting.services.config_service import ConfigService
from underreporting.services.error_service import ErrorService

logger = logging.getLogger("underreporting.cli")

FIT_METHODS = ["plain", "feature_omission", "row_omission", "multiple_imputation", "augmented"]


def create_parser() -> argparse.ArgumentParser:
    """
    Create command-line argument parser.

    Returns:
        argparse.ArgumentParser: Configured argument parser
    """
    parser = argparse.ArgumentParser(
        prog="underreporting",
        description="Simulate, predict, measure and mitigate differential feature under-reporting"
    )

    parser.add_argument("--version", action="store_true", help="Display version information")
    parser.add_argument("--verbose", action="store_true", help="Enable debug logging")
    parser.add_argument("--quiet", action="store_true", help="Hide progress bars")
    parser.add_argument("--config", type=str, help="Settings JSON file")
    parser.add_argument("--save-config", type=str, help="Write the effective settings to this JSON file")
    parser.add_argument("--seed", type=int, help="Base seed (default: setting run/seed)")
    parser.add_argument("--out-dir", type=str, help="Directory for output files (default: setting output/directory)")
    parser.add_argument("--format", choices=["csv", "json"], help="Output format for tables and reports")
    parser.add_argument("--threads", type=int, help="Worker threads for experiment runs")

    subparsers = parser.add_subparsers(dest="command", help="Command to execute")

    ingest_parser = subparsers.add_parser("ingest", help="Load a CSV with a schema into a dataset bundle")
    ingest_parser.add_argument("data", help="CSV file with a header row")
    ingest_parser.add_argument("--schema", required=True, help="Schema JSON file")

    synth_parser = subparsers.add_parser("synthesize", help="Build semi-synthetic linear outcomes")
    synth_parser.add_argument("bundle", help="Dataset bundle with a binary label")
    synth_parser.add_argument("--rescale", type=float, nargs=2, metavar=("A", "B"), help="Affine rescale a + b*p")
    synth_parser.add_argument("--noise-r2", type=float, help="Add outcome noise to reach this R^2")

    corrupt_parser = subparsers.add_parser("corrupt", help="Inject group-dependent under-reporting")
    corrupt_parser.add_argument("bundle", help="Dataset bundle")
    corrupt_parser.add_argument("--feature", required=True, help="Feature name or column index")
    corrupt_parser.add_argument("--rate-g0", type=float, default=0.0, help="Under-reporting rate of group 0")
    corrupt_parser.add_argument("--rate-g1", type=float, default=0.0, help="Under-reporting rate of group 1")

    fit_parser = subparsers.add_parser("fit", help="Fit a model on a dataset bundle")
    fit_parser.add_argument("bundle", help="Training dataset bundle")
    fit_parser.add_argument("--method", choices=FIT_METHODS, default="plain", help="Estimation method")
    fit_parser.add_argument("--feature", default="0", help="Under-reported feature name or index")
    fit_parser.add_argument("--m0", type=float, help="Reporting rate of group 0 (augmented; estimated if omitted)")
    fit_parser.add_argument("--m1", type=float, help="Reporting rate of group 1 (augmented; estimated if omitted)")
    fit_parser.add_argument("--n-draws", type=int, help="Imputation runs (multiple_imputation)")
    fit_parser.add_argument("--predict", help="Bundle to write predictions for")

    audit_parser = subparsers.add_parser("audit", help="Excess selection curves between two prediction files")
    audit_parser.add_argument("corrupted", help="CSV with columns prediction and group")
    audit_parser.add_argument("reference", help="CSV with column prediction, same rows")
    audit_parser.add_argument("--grid", type=float, nargs="+", help="Selection shares (default 0.05..0.95)")

    theory_parser = subparsers.add_parser("theory", help="Case analysis of a Gaussian population")
    theory_parser.add_argument("moments", help="JSON with mu, sigma, alpha, beta, r, m0, m1, target_feature")
    theory_parser.add_argument("--C", type=float, nargs="*", help="Also report analytical excess selection at these shares")

    rate_parser = subparsers.add_parser("estimate-rate", help="Estimate the reporting rate of a feature")
    rate_parser.add_argument("bundle", help="Dataset bundle with outcomes")
    rate_parser.add_argument("--feature", default="0", help="Feature name or column index")
    rate_parser.add_argument("--group", type=int, choices=[0, 1], help="Restrict to one group")
    rate_parser.add_argument("--classifier", choices=["logistic", "gradient_boosting"], default="logistic")

    run_parser = subparsers.add_parser("run", help="Run a full experiment from a config file")
    run_parser.add_argument("experiment", help="ExperimentConfig JSON file")

    return parser


def _resolve_feature(data: Dataset, feature: str) -> int:
    if str(feature).isdigit():
        index = int(feature)
        if index >= data.d:
            raise UnderReportingError(f"Feature index {index} out of range for {data.d} features", "validation_error")
        return index
    return data.feature_index(feature)


def _out_path(args: argparse.Namespace, name: str) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _emit(args: argparse.Namespace, name: str, payload: Any) -> str:
    """Write a record (dict) or table (DataFrame) in the selected format and return the path."""
    if isinstance(payload, pd.DataFrame):
        if args.format == "json":
            path = _out_path(args, f"{name}.json")
            payload.to_json(path, orient="records", indent=2, double_precision=15)
        else:
            path = _out_path(args, f"{name}.csv")
            payload.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    else:
        if args.format == "csv":
            path = _out_path(args, f"{name}.csv")
            flat = pd.DataFrame({"key": list(payload), "value": [json.dumps(v, default=float) for v in payload.values()]})
            flat.to_csv(path, index=False, lineterminator="\n")
        else:
            path = _out_path(args, f"{name}.json")
            with open(path, "w", encoding="utf-8") as f:
                json.dump(payload, f, indent=2, default=float)
                f.write("\n")
    logger.info(f"Wrote {path}")
    return path


def handle_ingest(args: argparse.Namespace) -> int:
    """
    Handle the ingest command.

    Args:
        args: Command-line arguments

    Returns:
        int: Exit code
    """
    from underreporting.services.ingest import load_csv

    data = load_csv(args.data, args.schema)
    save_dataset(data, _out_path(args, "dataset"), seed=args.seed)
    print(f"{data.n} rows, {data.d} features: {', '.join(data.feature_names)}")
    return 0


def handle_synthesize(args: argparse.Namespace) -> int:
    """
    Handle the synthesize command.

    Args:
        args: Command-line arguments

    Returns:
        int: Exit code
    """
    from underreporting.services.ingest import add_outcome_noise, make_semisynthetic_outcomes

    data, true_model = make_semisynthetic_outcomes(load_dataset(args.bundle), args.rescale)
    if args.noise_r2 is not None:
        data = add_outcome_noise(data, true_model, NoiseSpec(args.noise_r2, seed=args.seed))
    save_dataset(data, _out_path(args, "dataset"), seed=args.seed)
    _emit(args, "true_model", true_model.to_dict())
    return 0


def handle_corrupt(args: argparse.Namespace) -> int:
    """
    Handle the corrupt command.

    Args:
        args: Command-line arguments

    Returns:
        int: Exit code
    """
    from underreporting.services.corrupt import inject_underreporting

    data = load_dataset(args.bundle)
    cfg = UnderReportingConfig(_resolve_feature(data, args.feature), args.rate_g0, args.rate_g1, args.seed)
    corrupted = inject_underreporting(data, cfg)
    save_dataset(corrupted, _out_path(args, "dataset"), seed=args.seed)
    masked = int((corrupted.xi_mask[:, cfg.feature_index] == 0).sum())
    print(f"Masked {masked} of {corrupted.n} cells in '{corrupted.feature_names[cfg.feature_index]}'")
    return 0


def _fit_model(args: argparse.Namespace, train: Dataset, feature: int, settings: ConfigService):
    """Fit the selected method; returns (model, predictor, extra report)."""
    from underreporting.services import estimate, mitigate

    if args.method == "plain":
        model = estimate.ols_fit(train.X, train.Y, train.feature_names)
        return model, lambda data: model.predict(data.X), {}
    if args.method == "feature_omission":
        model = mitigate.baseline_feature_omission(train, feature)
        return model, lambda data: model.predict(data.X), {}
    if args.method == "row_omission":
        model = mitigate.baseline_row_omission(train, feature)
        return model, lambda data: model.predict(data.X), {}
    if args.method == "multiple_imputation":
        n_draws = args.n_draws or int(settings.get_setting("mitigate/n_draws", 5))
        ensemble = mitigate.baseline_multiple_imputation(train, n_draws, args.seed, feature)
        model = LinearModel(
            float(np.mean([m.alpha for m in ensemble.models])),
            np.mean([m.beta for m in ensemble.models], axis=0),
            train.feature_names,
        )
        return model, lambda data: ensemble.predict(data.X), {"conditional_variance": ensemble.conditional_variance}

    rates = {}
    for g, given in ((0, args.m0), (1, args.m1)):
        if given is not None:
            rates[g] = given
        elif np.all(train.X[train.group_rows(g), feature] != 0.0):
            rates[g] = 1.0
        else:
            rates[g] = mitigate.estimate_reporting_rate(train, g=g, seed=args.seed, target_feature=feature).m_hat
    report = mitigate.augmented_fit(train, rates[0], rates[1], mitigate.GROUP_DEPENDENT, feature)
    values = mitigate.optimal_imputation_values(train, rates[0], rates[1], mitigate.GROUP_DEPENDENT, feature)
    extra = {
        "rates_used": report.rates_used,
        "hessian_definite": report.hessian_definite,
        "fallback_ridge": report.fallback_ridge,
        "imputation": values.to_dict(),
    }
    return report.model, lambda data: mitigate.predict_with_imputation(report.model, data.X, data.G, values, feature), extra


def handle_fit(args: argparse.Namespace, settings: ConfigService) -> int:
    """
    Handle the fit command.

    Args:
        args: Command-line arguments
        settings: Settings service

    Returns:
        int: Exit code
    """
    train = load_dataset(args.bundle).estimation_view()
    if train.Y is None:
        raise UnderReportingError("Training bundle has no outcome", "data_error")
    feature = _resolve_feature(train, args.feature)
    model, predictor, extra = _fit_model(args, train, feature, settings)
    _emit(args, "model", {**model.to_dict(), "method": args.method, **extra})

    if args.predict:
        target = load_dataset(args.predict).estimation_view()
        predictions = pd.DataFrame({"row_id": target.row_ids, "group": target.G, "prediction": predictor(target)})
        _emit(args, "predictions", predictions)
    return 0


def _read_predictions(path: str, need_group: bool) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError as e:
        raise UnderReportingError(f"Prediction file not found: {path}", "file_error", e)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise UnderReportingError(f"Failed to parse {path}: {str(e)}", "schema_error", e)
    required = ["prediction"] + (["group"] if need_group else [])
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise UnderReportingError(f"{path} is missing columns {missing}", "schema_error")
    return frame


def handle_audit(args: argparse.Namespace) -> int:
    """
    Handle the audit command.

    Args:
        args: Command-line arguments

    Returns:
        int: Exit code
    """
    from underreporting.services.fairness import curve_to_frame, excess_curve

    grid = args.grid or list(default_grid())
    try:
        SelectionPolicy(grid=grid)
    except UnderReportingError as e:
        raise UnderReportingError(f"Invalid --grid: {e.message}", "config_error", e)
    corrupted = _read_predictions(args.corrupted, need_group=True)
    reference = _read_predictions(args.reference, need_group=False)
    curve = excess_curve(corrupted["prediction"].to_numpy(), reference["prediction"].to_numpy(),
                         corrupted["group"].to_numpy(), grid)
    frame = curve_to_frame(curve)
    _emit(args, "audit", frame)
    print(frame.to_string(index=False))
    return 0


def handle_theory(args: argparse.Namespace) -> int:
    """
    Handle the theory command.

    Args:
        args: Command-line arguments

    Returns:
        int: Exit code
    """
    from underreporting.services.theory import classify_case, population_excess_selection

    try:
        with open(args.moments, "r", encoding="utf-8") as f:
            moments = json.load(f)
    except FileNotFoundError as e:
        raise UnderReportingError(f"Moments file not found: {args.moments}", "file_error", e)
    except json.JSONDecodeError as e:
        raise UnderReportingError(f"Moments file is not valid JSON: {str(e)}", "config_error", e)
    target = int(moments.pop("target_feature", 0))
    pop = GaussianPopulation.from_dict(moments)

    report = classify_case(pop, target).to_dict()
    if args.C:
        report["excess_selection"] = [
            row for C in args.C for row in population_excess_selection(pop, C, target).to_rows()
        ]
    _emit(args, "theory", report)
    print(json.dumps(report, indent=2, default=float))
    return 0


def handle_estimate_rate(args: argparse.Namespace) -> int:
    """
    Handle the estimate-rate command.

    Args:
        args: Command-line arguments

    Returns:
        int: Exit code
    """
    from underreporting.services.mitigate import estimate_reporting_rate, make_classifier

    data = load_dataset(args.bundle).estimation_view()
    feature = _resolve_feature(data, args.feature)
    estimate = estimate_reporting_rate(
        data, g=args.group, classifier=make_classifier(args.classifier, args.seed), seed=args.seed,
        target_feature=feature
    )
    _emit(args, "rate_estimate", estimate.to_dict())
    print(f"m_hat = {estimate.m_hat:.6f}" + (" (clamped)" if estimate.clamped else ""))
    return 0


def handle_run(args: argparse.Namespace) -> int:
    """
    Handle the run command.

    Args:
        args: Command-line arguments

    Returns:
        int: Exit code
    """
    from underreporting.services.harness import run_experiment

    summary = run_experiment(args.experiment, args.out_dir, threads=args.threads, show_progress=not args.quiet)
    print(f"{summary.n_cells - summary.n_failed} of {summary.n_cells} cells succeeded; results in {summary.out_dir}")
    return 0


def handle_version(args: argparse.Namespace) -> int:
    print(f"underreporting v{__version__}")
    return 0


def _apply_settings(args: argparse.Namespace, settings: ConfigService) -> None:
    """Fill unset global flags from the settings service."""
    if args.seed is None:
        args.seed = int(settings.get_setting("run/seed", 0))
    if args.out_dir is None:
        args.out_dir = str(settings.get_setting("output/directory", "output"))
    if args.format is None:
        args.format = str(settings.get_setting("output/format", "csv"))
    if args.threads is None:
        args.threads = int(settings.get_setting("run/threads", 1))
    for key, value in (("run/seed", args.seed), ("output/directory", args.out_dir),
                       ("output/format", args.format), ("run/threads", args.threads)):
        settings.set_setting(key, value)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the CLI."""
    parser = create_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits with 2 on bad usage; usage errors are exit code 1 here
        return 0 if e.code in (0, None) else 1

    if args.version:
        return handle_version(args)

    error_service = ErrorService()
    try:
        settings = ConfigService()
        if args.config and not settings.import_settings(args.config):
            raise UnderReportingError(f"Could not read settings from {args.config}", "config_error")
        _apply_settings(args, settings)
        if args.save_config and not settings.export_settings(args.save_config):
            raise UnderReportingError(f"Could not write settings to {args.save_config}", "config_error")
        if not args.command:
            if not args.save_config:
                parser.print_help()
            return 0
        level = "DEBUG" if args.verbose else settings.get_setting("logging/level", "INFO")
        setup_logging(args.out_dir if args.command == "run" else None, level)

        handlers: Dict[str, Any] = {
            "ingest": handle_ingest,
            "synthesize": handle_synthesize,
            "corrupt": handle_corrupt,
            "audit": handle_audit,
            "theory": handle_theory,
            "estimate-rate": handle_estimate_rate,
            "run": handle_run,
        }
        if args.command == "fit":
            return handle_fit(args, settings)
        return handlers[args.command](args)
    except Exception as e:
        return error_service.handle_error(e)


if __name__ == "__main__":
    sys.exit(main())
