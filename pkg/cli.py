"""Command-line entry point: analyze | learn | sweep | report."""
import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from dotenv import load_dotenv
from pydantic import ValidationError

from bellman import (
    contraction_constants,
    empirical_lipschitz,
    error_bound,
    lyapunov_check,
    q_learning_bound,
    solve_fixed_point,
    stability_at_infinity,
    weight_gap,
)
from config import Settings, load_settings
from envs import resolve_config, tabular_bundle
from errors import (
    AggregationError,
    AssumptionViolation,
    ConfigurationError,
    EnumerationLimitError,
    IterationLimitError,
    MultiQError,
    PreconditionError,
    ReportError,
    UnsupportedAnalysisError,
)
from features import covariance
from harness import aggregate, records_frame, report, run_experiment, write_records
from mdp import value_iteration
from schemas import ExperimentConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIGURATION = 2
EXIT_ASSUMPTION = 3
EXIT_REPORT = 4

_EXIT_CODES: list[tuple[type[BaseException], int]] = [
    (ConfigurationError, EXIT_CONFIGURATION),
    (UnsupportedAnalysisError, EXIT_CONFIGURATION),
    (AssumptionViolation, EXIT_ASSUMPTION),
    (ReportError, EXIT_REPORT),
    (AggregationError, EXIT_REPORT),
    (MultiQError, EXIT_FAILURE),
]


def exit_code_for(exc: BaseException) -> int:
    for family, code in _EXIT_CODES:
        if isinstance(exc, family):
            return code
    return EXIT_FAILURE


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat key=value lines; '#' starts a comment."""
    values: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"{source}:{number}: expected key=value, got '{raw.strip()}'")
        key = key.strip()
        if key in values:
            raise ConfigurationError(f"{source}:{number}: duplicate key '{key}'")
        values[key] = value.strip()
    return values


def parse_overrides(pairs: Sequence[str]) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"--set expects key=value, got '{pair}'")
        overrides[key.strip()] = value.strip()
    return overrides


def load_config(
    path: Optional[str],
    overrides: Sequence[str] = (),
    n_list: Optional[str] = None,
    out: Optional[str] = None,
) -> ExperimentConfig:
    values: dict[str, object] = {}
    if path:
        config_path = Path(path)
        try:
            text = config_path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_config_text(text, str(config_path)))
    values.update(parse_overrides(overrides))
    if n_list is not None:
        values["n_list"] = n_list
    if out is not None:
        values["out"] = out
    try:
        return ExperimentConfig.model_validate(values)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(part) for part in error['loc']) or 'config'}: {error['msg']}" for error in exc.errors()
        )
        raise ConfigurationError(f"invalid configuration: {problems}") from exc


def _aligned(frame: pd.DataFrame) -> str:
    return frame.to_string(index=False, float_format=lambda value: f"{value:.6g}")


def _emit(frame: pd.DataFrame, out: Optional[str]) -> None:
    print(_aligned(frame))
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.12g", lineterminator="\n")
        logger.info("wrote %s", path)
    else:
        print()
        print(frame.to_csv(index=False, float_format="%.12g", lineterminator="\n"), end="")


def analyze_rows(config: ExperimentConfig, settings: Settings) -> pd.DataFrame:
    """Contraction, fixed-point, bound and ODE diagnostics for every requested depth."""
    if not config.is_tabular:
        raise UnsupportedAnalysisError(f"exact analysis needs a tabular environment, got {config.env}")
    config = resolve_config(config)
    bundle = tabular_bundle(config)
    mdp, features, mu = bundle.mdp, bundle.features, bundle.mu
    rng = np.random.default_rng(settings.seed_base)
    stats = covariance(features, mu)
    q_star = value_iteration(mdp, tolerance=1e-12)
    rows: list[tuple[object, str, float]] = []

    stability = stability_at_infinity(features, mu)
    bound = q_learning_bound(features, mu, mdp.discount)
    rows += [
        ("-", "sigma_lambda_min", stability.lambda_min),
        ("-", "sigma_lambda_max", stability.lambda_max),
        ("-", "stable_at_infinity", float(stability.stable)),
        ("-", "q_learning_constant", bound.constant),
        ("-", "q_learning_factor", math.nan if bound.factor is None else bound.factor),
    ]

    for n in config.depths():
        report = contraction_constants(features, mu, mdp.discount, n, stats)
        report.empirical_lipschitz = empirical_lipschitz(mdp, features, mu, n, config.num_pairs, rng)
        report.pair_count = config.num_pairs
        rows += [
            (n, "sigma_max", report.sigma_max),
            (n, "phi_max", report.phi_max),
            (n, "mu_min", report.mu_min),
            (n, "lambda_n", report.lambda_n),
            (n, "sharp_lambda_n", report.sharp_lambda_n),
            (n, "threshold_n", float(report.threshold_n)),
            (n, "empirical_lipschitz", report.empirical_lipschitz),
        ]
        fixed = solve_fixed_point(mdp, features, mu, n)
        rows += [
            (n, "fixed_point_converged", float(fixed.converged)),
            (n, "fixed_point_iterations", float(fixed.iterations)),
            (n, "fixed_point_residual", fixed.residual),
        ]
        rows += [(n, f"fixed_point_w{index}", float(value)) for index, value in enumerate(fixed.weights)]

        lhs = rhs = gap = math.nan
        if fixed.converged:
            gap = weight_gap(mdp, features, mu, n, q_star)
            if n >= report.threshold_n:
                lhs, rhs = error_bound(mdp, features, mu, n, q_star)
        rows += [(n, "weight_gap", gap), (n, "error_lhs", lhs), (n, "error_rhs", rhs)]

        try:
            lyapunov = lyapunov_check(mdp, features, mu, n, config.num_probes, rng)
            rows += [
                (n, "lyapunov_max_ldot", lyapunov.max_ldot),
                (n, "lyapunov_passed", float(lyapunov.passed)),
                (n, "lyapunov_below_threshold", float(lyapunov.below_threshold)),
            ]
        except (PreconditionError, EnumerationLimitError, IterationLimitError) as exc:
            logger.warning("Lyapunov check skipped at depth %d: %s", n, exc)
            rows += [(n, "lyapunov_max_ldot", math.nan), (n, "lyapunov_passed", math.nan)]
    return pd.DataFrame(rows, columns=["n", "quantity", "value"]).astype({"n": str})


def cmd_analyze(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args.config, args.set, args.n_list, args.out)
    _emit(analyze_rows(config, settings), config.out)
    return EXIT_OK


def _require_out(config: ExperimentConfig) -> str:
    if not config.out:
        raise ConfigurationError("an output path is required (--out or out=...)")
    return config.out


def cmd_learn(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args.config, args.set, args.n_list, args.out)
    out = _require_out(config)
    records = run_experiment(config, settings)
    write_records(records, out)
    print(_aligned(aggregate(records, config.window_fraction)))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args.config, args.set, args.n_list, args.out)
    out = _require_out(config)
    if config.n_list is None:
        raise ConfigurationError("sweep needs a depth list (--n-list or n_list=...)")
    records = []
    for depth in config.depths():
        records += run_experiment(config.model_copy(update={"n": depth}), settings)
    write_records(records, out, tag_n=True)
    frame = records_frame(records, tag_n=True)
    logger.info("sweep wrote %d rows over depths %s", len(frame), config.depths())
    return EXIT_OK


def cmd_report(args: argparse.Namespace, settings: Settings) -> int:
    summary, curve = report(args.csv, args.window_fraction)
    print(_aligned(summary))
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        summary.to_csv(out, index=False, float_format="%.12g", lineterminator="\n")
        curve_path = out.with_name(out.stem + ".curves.csv")
        curve.to_csv(curve_path, index=False, float_format="%.12g", lineterminator="\n")
        logger.info("wrote %s and %s", out, curve_path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multi-q", description="Multi-step Q-learning with linear features.")
    commands = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value experiment file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--n-list", dest="n_list", help="comma-separated depths, e.g. 1,2,4")
    common.add_argument("--out", help="output CSV path")

    commands.add_parser("analyze", parents=[common], help="exact contraction and fixed-point analysis").set_defaults(
        handler=cmd_analyze
    )
    commands.add_parser("learn", parents=[common], help="run every seed of one experiment").set_defaults(
        handler=cmd_learn
    )
    commands.add_parser("sweep", parents=[common], help="run learn for each depth in the list").set_defaults(
        handler=cmd_sweep
    )
    report_parser = commands.add_parser("report", help="aggregate run CSVs into a summary table")
    report_parser.add_argument("csv", nargs="+", help="run or sweep CSV files")
    report_parser.add_argument("--out", help="summary CSV path; curves go next to it")
    report_parser.add_argument("--window-fraction", dest="window_fraction", type=float, default=0.05)
    report_parser.set_defaults(handler=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings()
    except (RuntimeError, ValidationError) as exc:
        logging.basicConfig(level=logging.INFO)
        logger.error("%s", exc)
        return EXIT_CONFIGURATION
    logging.basicConfig(level=settings.logging_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args, settings)
    except MultiQError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
