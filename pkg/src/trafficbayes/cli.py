"""Command-line pipeline: simulate → robbins → fit → reweight → report, plus validate."""

import argparse
import dataclasses
import json
import logging
import sys
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from . import __version__
from .analysis import (
    anova_table,
    cell_rate_summary,
    cramers_v_matrix,
    effect_intervals,
    effect_summary,
    interaction_association_matrix,
    interval_summary,
    mirror_diagnostic,
    model_based_ledger,
    population_share_scale,
    posterior_predictive_check,
)
from .config import PipelineConfig, SchemaConfig, load_config
from .core import (
    SELECTED_COLUMN,
    CategoryCodebook,
    CovariateSchema,
    RoadRecord,
    TypeCell,
    aggregate_cells,
    cells_from_frame,
    cells_to_frame,
    integral_column,
    read_frame,
    read_records,
    records_from_frame,
    records_to_frame,
    resolve_schema,
    road_selection,
    road_totals,
    split_periods,
)
from .diagnostics import summarize
from .eb import CountHistogram, expected_fatalities_selected, implied_change
from .exceptions import ConfigurationError, DataError, InputFileError, TrafficBayesError
from .manifest import RunManifest, read_manifest, verify_inputs, write_manifest
from .model import ModelPosterior, ModelSpec, prior_only_levels
from .sampler import PosteriorDraws, run_chains
from .sim import SelectionPolicy, TreatmentEffect, generate_city, select_roads, simulate_period
from .storage import atomic_directory, read_draws, write_draws
from .weights import FatalityProbabilityTable, build_probability_table, read_reports, reweighted_expectation

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
CODEBOOK_FILE = "codebook.json"
CELLS_FILE = "cells.csv"
MODEL_FILE = "model.toml"
HOLDOUT_FILE = "holdout.csv"


def _configure_logging(level: str) -> None:
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, stream=sys.stderr)


def _effective_config(args: argparse.Namespace) -> PipelineConfig:
    """Configuration file with command-line overrides applied."""
    config = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(
            config,
            run=dataclasses.replace(config.run, seed=args.seed),
            sampler=dataclasses.replace(config.sampler, seed=args.seed),
            city=dataclasses.replace(config.city, seed=args.seed),
        )
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigurationError("--workers must be at least 1")
        config = dataclasses.replace(config, sampler=dataclasses.replace(config.sampler, workers=args.workers))
    return config


def _write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, set):
        return list(value)
    msg = f"Cannot serialize {type(value).__name__}"
    raise TypeError(msg)


def _require(path: Path | None, flag: str) -> Path:
    if path is None:
        msg = f"{flag} is required for this subcommand"
        raise ConfigurationError(msg)
    return path


def _selected_totals(records: Sequence[RoadRecord], periods: Sequence[str]) -> tuple[int, int]:
    """(selected, unselected) fatality totals over the given periods."""
    selected = sum(r.fatalities for r in records if r.period in periods and r.selected)
    unselected = sum(r.fatalities for r in records if r.period in periods and not r.selected)
    return selected, unselected


def cmd_simulate(args: argparse.Namespace, config: PipelineConfig) -> RunManifest:
    """Generate a synthetic city, select roads and simulate before and after periods."""
    manifest = RunManifest.begin("simulate", config, __version__)
    spec = None
    if config.city.population == "schema":
        schema = resolve_schema(config.schema, CategoryCodebook({code: [] for code in config.schema.groups}))
        spec = ModelSpec(schema=schema, priors=config.model)
    city = generate_city(config.city, spec)
    generator = np.random.default_rng(config.run.seed)
    effect = TreatmentEffect(config.simulation.multiplier)
    counts: dict[str, np.ndarray] = {}
    for period in config.run.before_periods:
        counts[period] = simulate_period(city, TreatmentEffect(), None, generator)
    before_total = np.sum([counts[p] for p in config.run.before_periods], axis=0)
    policy = SelectionPolicy.from_config(config.selection)
    flags = select_roads(before_total, policy, city.subtypes, city.schema)
    for period in config.run.after_periods:
        counts[period] = simulate_period(city, effect, flags, generator)
    logger.info("Simulated %d roads, %d selected", len(city), int(flags.sum()))

    out = _require(args.out, "--out")
    with atomic_directory(out) as staging:
        schema = city.effective_schema
        codebook = city.codebook()
        records_to_frame(city.records(counts, flags), schema, codebook).to_csv(
            staging / "roads.csv", index=False, encoding="utf-8"
        )
        _write_json(staging / "truth.json", city.ground_truth(flags, effect))
        (staging / CODEBOOK_FILE).write_text(codebook.to_json(), encoding="utf-8")
        manifest.outputs = ["roads.csv", "truth.json", CODEBOOK_FILE]
        write_manifest(staging, manifest)
    return manifest


def _read_selected(path: Path, schema_config: SchemaConfig, selected_column: str) -> list[RoadRecord]:
    frame = read_frame(path, schema_config)
    if selected_column != SELECTED_COLUMN:
        if selected_column not in frame.columns:
            msg = f"{path}: missing selection column {selected_column}"
            raise DataError(msg)
        frame[SELECTED_COLUMN] = integral_column(frame, selected_column, path, maximum=1)
    codebook = CategoryCodebook.from_frame(frame, schema_config.groups)
    schema = resolve_schema(schema_config, codebook)
    return records_from_frame(frame, schema, codebook)


def cmd_robbins(args: argparse.Namespace, config: PipelineConfig) -> RunManifest:
    """Robbins adjustment of the selected roads, with the naive and mirror-image comparisons."""
    data = _require(args.input, "--input")
    manifest = RunManifest.begin("robbins", config, __version__, [data])
    records = _read_selected(data, config.schema, config.robbins.selected_column)
    before = config.run.before_periods
    after = config.run.after_periods
    totals = road_totals(records, before)
    flags = road_selection(records)
    hist = CountHistogram.from_counts(totals.values())
    selected_hist = CountHistogram.from_counts(v for road, v in totals.items() if flags[road])
    table = expected_fatalities_selected(
        hist, selected_hist, config.robbins.years, isotonic=config.robbins.isotonic
    )
    summary: dict[str, Any] = {"robbins": table.to_dict()}

    before_sel, before_unsel = _selected_totals(records, before)
    after_sel, after_unsel = _selected_totals(records, after)
    if any(r.period in after for r in records):
        observed = after_sel / len(after)
        summary["observed_after_per_period"] = observed
        summary["implied_change"] = implied_change(table, observed) if table.per_year > 0 else None
        summary["decomposition"] = model_based_ledger(
            before_sel / config.robbins.years, observed, table.per_year
        ).to_dict()
        if before_sel > 0 and before_unsel > 0:
            summary["mirror"] = mirror_diagnostic(
                before_sel / len(before),
                after_sel / len(after),
                before_unsel / len(before),
                after_unsel / len(after),
                config.analysis.mirror_ratio,
            ).to_dict()
        else:
            logger.warning("Mirror-image diagnostic skipped: a before-period total is zero")

    out = _require(args.out, "--out")
    with atomic_directory(out) as staging:
        table.to_frame().to_csv(staging / "robbins.csv", index=False, encoding="utf-8")
        _write_json(staging / "robbins.json", summary)
        manifest.outputs = ["robbins.csv", "robbins.json"]
        write_manifest(staging, manifest)
    return manifest


def _training_cells(records: Sequence[RoadRecord], schema: CovariateSchema) -> list[TypeCell]:
    cells = aggregate_cells(records, schema)
    kept = [cell for cell in cells if cell.count >= 1]
    if len(kept) < len(cells):
        logger.info("Dropped %d road types without fatalities (zero-truncated model)", len(cells) - len(kept))
    return [dataclasses.replace(cell, cell_id=position) for position, cell in enumerate(kept)]


def cmd_fit(args: argparse.Namespace, config: PipelineConfig) -> RunManifest:
    """Fit the hierarchical model to the before-period road types."""
    data = _require(args.input, "--input")
    manifest = RunManifest.begin("fit", config, __version__, [data])
    schema, codebook, records = read_records(data, config.schema)
    training, holdout = split_periods(records, config.run.before_periods, config.run.holdout_period)
    cells = _training_cells(training, schema)
    if not cells:
        raise DataError("No road type has a fatality in the training periods")
    spec = ModelSpec(schema=schema, priors=config.model)
    for batch, level in prior_only_levels(spec, cells):
        logger.warning("Level %d of %s never occurs in training; its effect follows the prior", level, batch)
    posterior = ModelPosterior(spec, cells)
    logger.info("Fitting %d cells, %d parameters", len(cells), posterior.dimension)
    draws = run_chains(
        posterior,
        posterior.dimension,
        config.sampler,
        generated=posterior.generated_quantities(),
        names=posterior.names,
    )
    diagnostics = summarize(draws)
    if diagnostics.max_rhat > 1.1:  # noqa: PLR2004
        logger.warning("Maximum R-hat %.3f exceeds 1.1", diagnostics.max_rhat)

    out = _require(args.out, "--out")
    with atomic_directory(out) as staging:
        manifest.layout = write_draws(staging, draws, config.run.draw_format)
        cells_to_frame(cells, schema, codebook).to_csv(staging / CELLS_FILE, index=False, encoding="utf-8")
        (staging / CODEBOOK_FILE).write_text(codebook.to_json(), encoding="utf-8")
        (staging / MODEL_FILE).write_text(spec.to_toml(), encoding="utf-8")
        diagnostics.table.to_csv(staging / "diagnostics.csv", encoding="utf-8")
        summary = diagnostics.to_dict()
        summary["prior_only_levels"] = [list(pair) for pair in prior_only_levels(spec, cells)]
        _write_json(staging / "diagnostics.json", summary)
        outputs = [CELLS_FILE, CODEBOOK_FILE, MODEL_FILE, "diagnostics.csv", "diagnostics.json"]
        if holdout:
            records_to_frame(holdout, schema, codebook).to_csv(staging / HOLDOUT_FILE, index=False, encoding="utf-8")
            outputs.append(HOLDOUT_FILE)
        manifest.outputs = outputs + [p.name for p in sorted(staging.glob("chain-*"))]
        write_manifest(staging, manifest)
    return manifest


@dataclass
class FitArtifacts:
    """Everything a fit directory holds, restored."""

    directory: Path
    manifest: RunManifest
    spec: ModelSpec
    codebook: CategoryCodebook
    cells: list[TypeCell]
    draws: PosteriorDraws

    @property
    def schema_config(self) -> SchemaConfig:
        schema = self.spec.schema
        return SchemaConfig(
            groups={g.code: g.cardinality for g in schema.groups},
            interactions=schema.interactions if schema.interactions else "none",
            offset=schema.offset_name,
        )

    def posterior(self) -> ModelPosterior:
        return ModelPosterior(self.spec, self.cells)

    def read_records(self, path: Path) -> list[RoadRecord]:
        """Records of a road file encoded with the fit's codebook."""
        _, _, records = read_records(path, self.schema_config, self.codebook)
        return records


def _read_fit_text(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise InputFileError(str(path)) from e


def load_fit(directory: Path) -> FitArtifacts:
    """
    Restore a fit directory.

    Raises:
        InputFileError: If a file is missing or unreadable
        DataError: If the directory was not written by ``fit`` or a file is malformed

    """
    manifest = read_manifest(directory)
    if manifest.subcommand != "fit" or manifest.layout is None:
        msg = f"{directory} is not a fit output directory"
        raise DataError(msg)
    if verify_inputs(manifest):
        logger.warning("The fit in %s was made from inputs that have since changed", directory)
    model_text = _read_fit_text(directory / MODEL_FILE)
    codebook_text = _read_fit_text(directory / CODEBOOK_FILE)
    try:
        cells_frame = pd.read_csv(directory / CELLS_FILE, encoding="utf-8")
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise InputFileError(str(directory / CELLS_FILE)) from e
    try:
        spec = ModelSpec.from_toml(model_text)
        codebook = CategoryCodebook.from_json(codebook_text)
        cells = cells_from_frame(cells_frame, spec.schema, codebook)
    except (KeyError, TypeError, AttributeError, ValueError) as e:
        msg = f"Malformed fit file in {directory}: {e}"
        raise DataError(msg) from e
    draws = read_draws(directory, manifest.layout)
    return FitArtifacts(directory, manifest, spec, codebook, cells, draws)


def _row_rates(
    fit: FitArtifacts, posterior: ModelPosterior, rows: Sequence[RoadRecord], rng: np.random.Generator
) -> np.ndarray:
    design = posterior.road_design([r.subtype for r in rows], [r.exposure for r in rows])
    return posterior.road_rates(fit.draws.flat(), design, rng)


def _observed_roads(records: Sequence[RoadRecord], periods: Sequence[str]) -> set[str]:
    """Roads with at least one fatality over the given periods, the ones a fatality file would list."""
    return {road for road, total in road_totals(records, periods).items() if total >= 1}


def _probability_table(
    path: Path | None, fit: FitArtifacts, config: PipelineConfig
) -> tuple[FatalityProbabilityTable, int]:
    """Fatality probabilities from a report file, or the empty table (every P̂ = 1) without one."""
    if path is None:
        return FatalityProbabilityTable(), 0
    reports = read_reports(path, fit.spec.schema, fit.codebook)
    return build_probability_table(reports, config.weights.smoothing, config.weights.form), len(reports)


def cmd_reweight(args: argparse.Namespace, config: PipelineConfig) -> RunManifest:
    """Reweight per-road posterior rates to the whole road population with survey fatality probabilities."""
    fit_dir = _require(args.fit, "--fit")
    data = _require(args.input, "--input")
    reports_path = _require(args.reports, "--reports")
    manifest = RunManifest.begin("reweight", config, __version__, [data, reports_path])
    fit = load_fit(fit_dir)
    before = config.run.before_periods
    records = [r for r in fit.read_records(data) if r.period in before]
    observed = _observed_roads(records, before)
    rows = [r for r in records if r.road_id in observed]
    if not rows:
        raise DataError("No road has a fatality in the before periods to reweight")
    skipped = len({r.road_id for r in records}) - len(observed)
    if skipped:
        logger.info("Left out %d roads without before-period fatalities; reweighting stands in for them", skipped)
    table, n_reports = _probability_table(reports_path, fit, config)
    posterior = fit.posterior()
    rates = _row_rates(fit, posterior, rows, np.random.default_rng(config.run.seed))
    result = reweighted_expectation(rates, [r.subtype for r in rows], table, config.analysis.intervals)
    summary: dict[str, Any] = {"reweighted": result.to_dict(), "reports": n_reports, "roads": len(observed)}
    if config.analysis.population_share < 1.0:
        summary["city_scaled"] = population_share_scale(
            result.intervals, config.analysis.population_share
        ).to_dict()

    out = _require(args.out, "--out")
    with atomic_directory(out) as staging:
        table.to_frame(fit.spec.schema).to_csv(staging / "probabilities.csv", index=False, encoding="utf-8")
        pd.DataFrame({"total": result.draws}).to_csv(staging / "reweighted_draws.csv", index=False, encoding="utf-8")
        _write_json(staging / "reweight.json", summary)
        manifest.outputs = ["probabilities.csv", "reweighted_draws.csv", "reweight.json"]
        write_manifest(staging, manifest)
    return manifest


def _holdout_check(
    fit: FitArtifacts, posterior: ModelPosterior, config: PipelineConfig, rng: np.random.Generator
) -> tuple[dict[str, Any], pd.DataFrame] | None:
    path = fit.directory / HOLDOUT_FILE
    if not path.exists():
        return None
    holdout = fit.read_records(path)
    cells = [c for c in aggregate_cells(holdout, fit.spec.schema) if c.count >= 1]
    if not cells:
        logger.warning("Held-out period has no fatalities; predictive check skipped")
        return None
    design = posterior.road_design([c.subtype for c in cells], [c.exposure for c in cells])
    design = dataclasses.replace(design, cell_index=np.full(len(cells), -1, dtype=np.intp))
    rates = posterior.road_rates(fit.draws.flat(), design, rng)
    keep = None
    analysis = config.analysis
    if analysis.ppc_group is not None and analysis.ppc_level is not None:
        level = fit.codebook.encode(analysis.ppc_group, analysis.ppc_level)
        if level is None:
            msg = f"Unknown code {analysis.ppc_level} of group {analysis.ppc_group}"
            raise ConfigurationError(msg)
        position = fit.spec.schema.position(analysis.ppc_group)
        keep = [c.subtype[position] == level for c in cells]
    check = posterior_predictive_check(rates, [c.count for c in cells], rng, keep)
    return check.to_dict(), check.histogram()


def cmd_report(args: argparse.Namespace, config: PipelineConfig) -> RunManifest:
    """Effect summary, decomposition, mirror diagnostic, ANOVA, association screens and predictive check."""
    fit_dir = _require(args.fit, "--fit")
    data = _require(args.input, "--input")
    inputs = [data] if args.reports is None else [data, args.reports]
    manifest = RunManifest.begin("report", config, __version__, inputs)
    fit = load_fit(fit_dir)
    records = fit.read_records(data)
    before = config.run.before_periods
    after = config.run.after_periods
    masses = config.analysis.intervals
    generator = np.random.default_rng(config.run.seed)
    posterior = fit.posterior()
    table, n_reports = _probability_table(args.reports, fit, config)
    if args.reports is None:
        logger.warning("No --reports given; the expected fatalities are not reweighted")

    report: dict[str, Any] = {
        "prior_only_levels": [list(p) for p in prior_only_levels(fit.spec, fit.cells)],
        "reports": n_reports,
    }
    before_sel, before_unsel = _selected_totals(records, before)
    after_sel, after_unsel = _selected_totals(records, after)
    observed = _observed_roads(records, before)
    after_rows = [r for r in records if r.period in after and r.selected]
    weighted_rows = [r for r in after_rows if r.road_id in observed]
    unobserved = len({r.road_id for r in after_rows}) - len({r.road_id for r in weighted_rows})
    if unobserved:
        logger.info("%d selected roads had no before-period fatality; reweighting stands in for them", unobserved)
    if weighted_rows:
        rates = _row_rates(fit, posterior, weighted_rows, generator)
        expected = reweighted_expectation(rates, [r.subtype for r in weighted_rows], table, masses).draws
        naive = config.analysis.naive_reduction
        if naive is None and before_sel > 0:
            naive = 1.0 - (after_sel / len(after)) / (before_sel / len(before))
        effect = effect_summary(
            expected, after_sel, naive, masses, observation_noise=config.analysis.observation_noise, rng=generator
        )
        report["effect"] = effect.to_dict()
        report["naive_reduction"] = naive
        report["selected_roads"] = len({r.road_id for r in weighted_rows})
        report["decomposition"] = model_based_ledger(
            before_sel / len(before) * len(after), after_sel, float(np.mean(expected))
        ).to_dict()
        if config.analysis.population_share < 1.0:
            report["city_scaled_expected"] = population_share_scale(
                interval_summary(expected, masses), config.analysis.population_share
            ).to_dict()
        if before_sel > 0 and before_unsel > 0:
            report["mirror"] = mirror_diagnostic(
                before_sel / len(before),
                after_sel / len(after),
                before_unsel / len(before),
                after_unsel / len(after),
                config.analysis.mirror_ratio,
            ).to_dict()
    else:
        logger.warning("No selected road with a before-period fatality in the after periods; effect summary skipped")

    outputs = ["report.json", "anova.csv", "effects.csv", "cell_rates.csv"]
    anova = anova_table(fit.draws, masses)
    effects = pd.concat(
        [effect_intervals(fit.draws, fit.spec, batch, masses) for batch in fit.spec.batches], ignore_index=True
    )
    cell_rates = cell_rate_summary(fit.draws, fit.cells, masses)
    training = [r for r in records if r.period in before]
    schema = fit.spec.schema
    association = None
    if len(schema.groups) >= 2:  # noqa: PLR2004
        association = (cramers_v_matrix(training, schema), interaction_association_matrix(training, schema))
        outputs += ["cramers_v.csv", "interaction_association.csv"]
    ppc = _holdout_check(fit, posterior, config, generator)
    if ppc is not None:
        report["predictive_check"] = ppc[0]
        outputs.append("ppc.csv")

    out = _require(args.out, "--out")
    with atomic_directory(out) as staging:
        _write_json(staging / "report.json", report)
        anova.to_csv(staging / "anova.csv", index=False, encoding="utf-8")
        effects.to_csv(staging / "effects.csv", index=False, encoding="utf-8")
        cell_rates.to_csv(staging / "cell_rates.csv", index=False, encoding="utf-8")
        if association is not None:
            association[0].to_csv(staging / "cramers_v.csv", encoding="utf-8")
            association[1].to_csv(staging / "interaction_association.csv", encoding="utf-8")
        if ppc is not None:
            ppc[1].to_csv(staging / "ppc.csv", index=False, encoding="utf-8")
        manifest.outputs = outputs
        write_manifest(staging, manifest)
    return manifest


def cmd_validate(args: argparse.Namespace, config: PipelineConfig) -> None:
    """Dry-run ingestion: schema resolution, cell aggregation and optional reports, summarized on stdout."""
    data = _require(args.input, "--input")
    schema, codebook, records = read_records(data, config.schema)
    training, holdout = split_periods(records, config.run.before_periods, config.run.holdout_period)
    cells = aggregate_cells(training, schema)
    summary: dict[str, Any] = {
        "rows": len(records),
        "roads": len({r.road_id for r in records}),
        "periods": sorted({r.period for r in records}),
        "groups": {g.code: g.cardinality for g in schema.groups},
        "interactions": [f"{a}:{b}" for a, b in schema.interactions],
        "training_rows": len(training),
        "holdout_rows": len(holdout),
        "cells": len(cells),
        "cells_with_fatalities": sum(1 for c in cells if c.count >= 1),
        "selected_roads": len({r.road_id for r in records if r.selected}),
    }
    if args.reports is not None:
        summary["reports"] = len(read_reports(args.reports, schema, codebook))
    sys.stdout.write(json.dumps(summary, indent=2) + "\n")


COMMANDS: dict[str, Callable[[argparse.Namespace, PipelineConfig], Any]] = {
    "simulate": cmd_simulate,
    "robbins": cmd_robbins,
    "fit": cmd_fit,
    "reweight": cmd_reweight,
    "report": cmd_report,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subparser per pipeline step."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides run, sampler and city seeds)")
    common.add_argument("--out", type=Path, help="output directory, replaced atomically")
    common.add_argument("--workers", type=int, help="parallel chain processes")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="trafficbayes", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help=cmd_simulate.__doc__)
    for name in ("robbins", "fit", "validate"):
        step = sub.add_parser(name, parents=[common], help=COMMANDS[name].__doc__)
        step.add_argument("--input", type=Path, help="road CSV")
        if name == "validate":
            step.add_argument("--reports", type=Path, help="survey report CSV to check as well")
    for name in ("reweight", "report"):
        step = sub.add_parser(name, parents=[common], help=COMMANDS[name].__doc__)
        step.add_argument("--input", type=Path, help="road CSV")
        step.add_argument("--fit", type=Path, help="output directory of a fit run")
        purpose = "" if name == "reweight" else " reweighting the expected fatalities"
        step.add_argument("--reports", type=Path, help=f"survey report CSV{purpose}")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """
    Run one subcommand.

    Returns:
        0 on success, otherwise the exit code of the raised error: 2 for
        configuration errors, 3 for data and schema errors, 4 for numerical failures

    """
    args = build_parser().parse_args(argv)
    _configure_logging(args.log_level)
    try:
        config = _effective_config(args)
        COMMANDS[args.command](args, config)
    except TrafficBayesError as e:
        logger.error("%s", e)  # noqa: TRY400
        return e.exit_code
    return 0
