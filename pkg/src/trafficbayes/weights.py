"""Survey weights and inverse-probability reweighting of observed roads to the whole road population."""

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from .analysis import IntervalSummary, interval_summary
from .core import CategoryCodebook, CovariateSchema, integral_column
from .exceptions import DataError, DomainError, InputFileError

logger = logging.getLogger(__name__)

FATAL_COLUMN = "FATAL"
TARGET_WEIGHT_COLUMN = "W_T"
STAGE_COLUMNS = ("P_PSU", "P_PJ", "P_PAR")
MEMBERSHIP_COLUMN = "MEMBERSHIP_P"
REPORT_ID_COLUMN = "REPORT_ID"


def _check_probability(name: str, value: float) -> None:
    if not 0.0 < value <= 1.0:
        msg = f"{name} must lie in (0, 1], got {value}"
        raise DomainError(msg)


def _numeric_column(frame: pd.DataFrame, column: str, source: str | Path) -> pd.Series:
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = ~np.isfinite(values.to_numpy(dtype=np.float64))
    if bad.any():
        first = frame[column][bad].iloc[0]
        msg = f"{source}: column {column} needs finite numbers, got {first!r}"
        raise DataError(msg)
    return values.astype("float64")


def national_weight(p_psu: float, p_pj: float, p_par: float) -> float:
    """
    Inverse of the three-stage inclusion probability of a report.

    Args:
        p_psu: Probability of the primary sampling unit
        p_pj: Probability of the police jurisdiction given the unit
        p_par: Probability of the report given the jurisdiction

    Raises:
        DomainError: If any probability lies outside (0, 1]

    """
    for name, value in (("p_psu", p_psu), ("p_pj", p_pj), ("p_par", p_par)):
        _check_probability(name, value)
    return 1.0 / (p_psu * p_pj * p_par)


def target_weight(national: float, membership_prob: float) -> float:
    """National weight scaled by the probability that the report belongs to the target city."""
    if not national > 0:
        msg = f"national weight must be positive, got {national}"
        raise DomainError(msg)
    _check_probability("membership_prob", membership_prob)
    return national * membership_prob


@dataclass(frozen=True)
class WeightedReport:
    """
    One prospectively sampled crash report.

    Args:
        report_id: Identifier
        subtype: Dense 1-based category index per schema group
        fatal: Whether the crash was fatal
        weight: Target weight w^t

    """

    report_id: str
    subtype: tuple[int, ...]
    fatal: bool
    weight: float

    def __post_init__(self) -> None:
        if not self.weight > 0:
            msg = f"Report {self.report_id}: target weight must be positive, got {self.weight}"
            raise DomainError(msg)


def fatality_probability(
    reports: Iterable[WeightedReport], smoothing: float = 1.0, form: Literal["ratio", "literal"] = "ratio"
) -> float:
    """
    Smoothed probability that a road of one type has at least one fatality.

    The ``ratio`` form is (Σ w·fatal + s) / (Σ w + s). The ``literal`` form sums
    the per-report ratios (w·fatal + s) / (w + s). Either is clamped to (0, 1];
    no reports give 1.

    Raises:
        DomainError: On negative weights or a nonpositive smoothing constant

    """
    if smoothing <= 0:
        msg = f"smoothing must be positive, got {smoothing}"
        raise DomainError(msg)
    members = list(reports)
    weights = np.array([r.weight for r in members], dtype=np.float64)
    fatal = np.array([r.fatal for r in members], dtype=np.float64)
    return _smoothed_probability(weights, fatal, smoothing, form)


def _smoothed_probability(
    weights: NDArray[np.float64], fatal: NDArray[np.float64], smoothing: float, form: str
) -> float:
    if weights.size == 0:
        return 1.0
    if np.any(weights < 0):
        raise DomainError("Report weights must be nonnegative")
    if form == "literal":
        value = float(np.sum((weights * fatal + smoothing) / (weights + smoothing)))
    else:
        value = float((weights @ fatal + smoothing) / (weights.sum() + smoothing))
    if value > 1.0:
        logger.warning("Fatality probability %.4f clamped to 1", value)
        value = 1.0
    return value


@dataclass
class FatalityProbabilityTable:
    """
    Smoothed P(X > 0) per road type.

    Args:
        probabilities: Road type (subtype vector) to probability
        report_counts: Road type to number of reports
        default: Probability of types without reports

    """

    probabilities: dict[tuple[int, ...], float] = field(default_factory=dict)
    report_counts: dict[tuple[int, ...], int] = field(default_factory=dict)
    default: float = 1.0

    def get(self, subtype: Sequence[int]) -> float:
        return self.probabilities.get(tuple(subtype), self.default)

    def to_frame(self, schema: CovariateSchema) -> pd.DataFrame:
        """One row per road type with its probability and report count."""
        rows = [
            {**dict(zip(schema.codes, key, strict=True)), "P_FATAL": p, "REPORTS": self.report_counts.get(key, 0)}
            for key, p in sorted(self.probabilities.items())
        ]
        return pd.DataFrame(rows, columns=[*schema.codes, "P_FATAL", "REPORTS"])


def build_probability_table(
    reports: Sequence[WeightedReport], smoothing: float = 1.0, form: Literal["ratio", "literal"] = "ratio"
) -> FatalityProbabilityTable:
    """Group reports by road type and smooth each group's fatality probability."""
    if smoothing <= 0:
        msg = f"smoothing must be positive, got {smoothing}"
        raise DomainError(msg)
    groups: dict[tuple[int, ...], list[WeightedReport]] = {}
    for report in reports:
        groups.setdefault(report.subtype, []).append(report)
    table = FatalityProbabilityTable()
    for subtype in sorted(groups):
        members = groups[subtype]
        weights = np.array([r.weight for r in members], dtype=np.float64)
        fatal = np.array([r.fatal for r in members], dtype=np.float64)
        table.probabilities[subtype] = _smoothed_probability(weights, fatal, smoothing, form)
        table.report_counts[subtype] = len(members)
    return table


def read_reports(path: str | Path, schema: CovariateSchema, codebook: CategoryCodebook) -> list[WeightedReport]:
    """
    Ingest prospective reports.

    Columns: the schema's group codes, ``FATAL``, and either ``W_T`` or the
    three stage probabilities ``P_PSU``, ``P_PJ``, ``P_PAR`` plus ``MEMBERSHIP_P``.
    Reports whose codes never occur among the observed roads are skipped.

    Raises:
        InputFileError: If the file cannot be read
        DataError: If required columns are missing, ``FATAL`` is not 0/1 or a weight is not a number

    """
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise InputFileError(str(path)) from e
    missing = [c for c in (*schema.codes, FATAL_COLUMN) if c not in frame.columns]
    has_weight = TARGET_WEIGHT_COLUMN in frame.columns
    has_stages = all(c in frame.columns for c in (*STAGE_COLUMNS, MEMBERSHIP_COLUMN))
    if missing or not (has_weight or has_stages):
        required = [*schema.codes, FATAL_COLUMN]
        msg = f"{path}: needs columns {required} plus {TARGET_WEIGHT_COLUMN} or stage probabilities"
        raise DataError(msg)
    frame[FATAL_COLUMN] = integral_column(frame, FATAL_COLUMN, path, maximum=1)
    weight_columns = [TARGET_WEIGHT_COLUMN] if has_weight else [*STAGE_COLUMNS, MEMBERSHIP_COLUMN]
    for column in weight_columns:
        frame[column] = _numeric_column(frame, column, path)
    reports, skipped = [], 0
    for position, row in enumerate(frame.to_dict("records")):
        report_id = str(row.get(REPORT_ID_COLUMN, position))
        subtype = [codebook.encode(code, row[code]) for code in schema.codes]
        if any(level is None for level in subtype):
            skipped += 1
            continue
        if has_weight:
            weight = float(row[TARGET_WEIGHT_COLUMN])
        else:
            national = national_weight(*(float(row[c]) for c in STAGE_COLUMNS))
            weight = target_weight(national, float(row[MEMBERSHIP_COLUMN]))
        levels = tuple(int(level) for level in subtype if level is not None)
        reports.append(WeightedReport(report_id, levels, bool(int(row[FATAL_COLUMN])), weight))
    if skipped:
        logger.warning("Skipped %d reports with category codes absent from the road data", skipped)
    return reports


@dataclass
class ReweightedExpectation:
    """
    Posterior distribution of expected fatalities over all roads of the population.

    Args:
        draws: One total per posterior draw
        intervals: Quantile summary of ``draws``

    """

    draws: NDArray[np.float64]
    intervals: IntervalSummary

    def to_dict(self) -> dict[str, Any]:
        return {"mean": float(self.draws.mean()), **self.intervals.to_dict()}


def reweighted_expectation(
    rates: NDArray[np.float64],
    road_types: Sequence[Sequence[int]],
    table: FatalityProbabilityTable,
    masses: Sequence[float] = (0.5, 0.9, 0.95),
) -> ReweightedExpectation:
    """
    Inverse-probability-weighted total expected fatalities, per posterior draw.

    Each observed road's rate μ̂_i(s) is divided by its type's P̂(X > 0), which
    turns the sum over observed roads into an estimate over all roads.

    Args:
        rates: Array of shape (draws, roads)
        road_types: Subtype vector of every road, aligned with the columns of ``rates``
        table: Fatality probabilities per road type
        masses: Central interval masses to summarize

    Raises:
        DomainError: If ``rates`` has no column for some road

    """
    rates = np.atleast_2d(np.asarray(rates, dtype=np.float64))
    if rates.shape[1] != len(road_types):
        msg = f"Got rates for {rates.shape[1]} roads but {len(road_types)} observed roads"
        raise DomainError(msg)
    probabilities = np.array([table.get(t) for t in road_types], dtype=np.float64)
    totals = rates @ (1.0 / probabilities)
    return ReweightedExpectation(draws=totals, intervals=interval_summary(totals, masses))
