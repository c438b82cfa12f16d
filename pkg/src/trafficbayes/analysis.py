"""Before-after comparisons, association screens, variance decomposition and posterior summaries."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray
from scipy.stats import chi2_contingency

from .core import CovariateSchema, RoadRecord, TypeCell, interaction_levels
from .exceptions import DomainError
from .model import CELL_BATCH, ModelSpec, ParameterLayout, realized_effects, truncated_poisson_rng
from .sampler import PosteriorDraws

logger = logging.getLogger(__name__)

DEFAULT_MASSES = (0.5, 0.9, 0.95)


@dataclass(frozen=True)
class IntervalSummary:
    """
    Median and equal-tailed central intervals of a sample.

    Args:
        median: Sample median
        intervals: Central mass to (lower, upper) quantile

    """

    median: float
    intervals: dict[float, tuple[float, float]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"median": self.median}
        for mass, (lower, upper) in sorted(self.intervals.items()):
            out[f"lower_{round(mass * 100)}"] = lower
            out[f"upper_{round(mass * 100)}"] = upper
        return out

    def scaled(self, factor: float) -> "IntervalSummary":
        return IntervalSummary(
            median=self.median * factor,
            intervals={m: (lo * factor, hi * factor) for m, (lo, hi) in self.intervals.items()},
        )


def interval_summary(values: ArrayLike, masses: Sequence[float] = DEFAULT_MASSES) -> IntervalSummary:
    """
    Median and central intervals by linear-interpolation sample quantiles.

    Raises:
        DomainError: If ``values`` is empty

    """
    array = np.asarray(values, dtype=np.float64).ravel()
    if array.size == 0:
        raise DomainError("Cannot summarize an empty sample")
    intervals = {}
    for mass in masses:
        lower, upper = np.quantile(array, [(1.0 - mass) / 2.0, (1.0 + mass) / 2.0], method="linear")
        intervals[float(mass)] = (float(lower), float(upper))
    return IntervalSummary(median=float(np.quantile(array, 0.5, method="linear")), intervals=intervals)


def reduction_factor(before: float, after: float) -> float:
    """
    Signed relative change (after − before) / before.

    Raises:
        DomainError: If ``before`` is not positive

    """
    if not before > 0:
        msg = f"Reduction factor needs a positive before value, got {before}"
        raise DomainError(msg)
    return (after - before) / before


def modification_factor(before: float, after: float) -> float:
    """Ratio after / before."""
    if not before > 0:
        msg = f"Modification factor needs a positive before value, got {before}"
        raise DomainError(msg)
    return after / before


def mean_adjusted_baseline(before_counts: ArrayLike) -> float:
    """All-road average before count, used in place of the selected roads' own before counts."""
    counts = np.asarray(before_counts, dtype=np.float64)
    if counts.size == 0:
        raise DomainError("No roads to average")
    return float(counts.mean())


@dataclass(frozen=True)
class DecompositionLedger:
    """
    Before-after totals on selected (s) and unselected (u) roads and the additive split of the naive change.

    ``naive = causal + temporal + selection`` holds exactly.
    """

    before_selected: float
    after_selected: float
    before_unselected: float
    after_unselected: float

    @property
    def naive(self) -> float:
        return self.after_selected - self.before_selected

    @property
    def causal(self) -> float:
        return self.after_selected - self.after_unselected

    @property
    def temporal(self) -> float:
        return self.after_unselected - self.before_unselected

    @property
    def selection(self) -> float:
        return self.before_unselected - self.before_selected

    def to_dict(self) -> dict[str, float]:
        return {
            "B_s": self.before_selected,
            "A_s": self.after_selected,
            "B_u": self.before_unselected,
            "A_u": self.after_unselected,
            "naive": self.naive,
            "causal": self.causal,
            "temporal": self.temporal,
            "selection": self.selection,
        }


def decompose(
    before_selected: float, after_selected: float, before_unselected: float, after_unselected: float
) -> DecompositionLedger:
    """Ledger splitting A_s − B_s into (A_s − A_u) + (A_u − B_u) + (B_u − B_s)."""
    return DecompositionLedger(before_selected, after_selected, before_unselected, after_unselected)


def model_based_ledger(before_selected: float, after_selected: float, expected_selected: float) -> DecompositionLedger:
    """
    Ledger whose unselected baseline is the model's expectation for the selected roads.

    Both unselected totals are set to that expectation, so the temporal term is 0
    and the selection term is the regression effect.
    """
    return decompose(before_selected, after_selected, expected_selected, expected_selected)


@dataclass(frozen=True)
class MirrorReport:
    """Reduction factors on both road groups and whether they mirror each other."""

    selected_change: float
    unselected_change: float
    ratio: float
    flagged: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "selected_change": self.selected_change,
            "unselected_change": self.unselected_change,
            "ratio": self.ratio,
            "flagged": self.flagged,
        }


def mirror_diagnostic(
    selected_before: float,
    selected_after: float,
    unselected_before: float,
    unselected_after: float,
    ratio: float = 0.5,
) -> MirrorReport:
    """
    Flag opposite-signed changes of comparable size on selected and unselected roads.

    Flagged when the signs differ and |unselected change| ≥ ratio·|selected change|.

    Raises:
        DomainError: If either before total is not positive

    """
    selected = reduction_factor(selected_before, selected_after)
    unselected = reduction_factor(unselected_before, unselected_after)
    flagged = bool(np.sign(selected) * np.sign(unselected) < 0 and abs(unselected) >= ratio * abs(selected))
    return MirrorReport(selected_change=selected, unselected_change=unselected, ratio=ratio, flagged=flagged)


def cramers_v(table: ArrayLike) -> float:
    """
    Cramér's V of a contingency table: sqrt(χ² / (n·min(r − 1, c − 1))).

    Empty rows and columns are trimmed with a warning.

    Raises:
        DomainError: If the table has negative entries or is smaller than 2×2 after trimming

    """
    counts = np.asarray(table, dtype=np.float64)
    if counts.ndim != 2 or np.any(counts < 0):  # noqa: PLR2004
        raise DomainError("Contingency table must be a 2-d array of nonnegative counts")
    rows = counts.sum(axis=1) > 0
    cols = counts.sum(axis=0) > 0
    if not rows.all() or not cols.all():
        logger.warning("Trimmed %d empty rows and %d empty columns", int((~rows).sum()), int((~cols).sum()))
        counts = counts[rows][:, cols]
    if min(counts.shape) < 2:  # noqa: PLR2004
        msg = f"Contingency table needs at least 2 nonempty rows and columns, got {counts.shape}"
        raise DomainError(msg)
    statistic = chi2_contingency(counts, correction=False).statistic
    n = counts.sum()
    return float(np.sqrt(statistic / (n * (min(counts.shape) - 1))))


def _association(labels_a: Sequence[int], labels_b: Sequence[int]) -> float:
    table = pd.crosstab(pd.Series(labels_a), pd.Series(labels_b)).to_numpy()
    if min(table.shape) < 2:  # noqa: PLR2004
        logger.warning("Association undefined: a variable has a single observed level")
        return float("nan")
    return cramers_v(table)


def cramers_v_matrix(records: Sequence[RoadRecord], schema: CovariateSchema) -> pd.DataFrame:
    """Pairwise Cramér's V between the schema's groups over the given roads."""
    codes = schema.codes
    matrix = pd.DataFrame(np.eye(len(codes)), index=codes, columns=codes)
    for a in range(len(codes)):
        for b in range(a + 1, len(codes)):
            value = _association([r.subtype[a] for r in records], [r.subtype[b] for r in records])
            matrix.iloc[a, b] = matrix.iloc[b, a] = value
    return matrix


def interaction_association(
    records: Sequence[RoadRecord], schema: CovariateSchema, pair: tuple[str, str], group: str
) -> float:
    """Cramér's V between the flattened levels of an interaction and a group's levels."""
    if pair not in schema.interactions:
        msg = f"{pair} is not an interaction of the schema"
        raise DomainError(msg)
    position = schema.interactions.index(pair)
    k = schema.position(group)
    pair_levels = [interaction_levels(r.subtype, schema)[position] for r in records]
    return _association(pair_levels, [r.subtype[k] for r in records])


def interaction_association_matrix(records: Sequence[RoadRecord], schema: CovariateSchema) -> pd.DataFrame:
    """Cramér's V of every interaction (rows) against every group (columns)."""
    index = [f"{a}:{b}" for a, b in schema.interactions]
    matrix = pd.DataFrame(np.nan, index=index, columns=list(schema.codes))
    for row, pair in zip(index, schema.interactions, strict=True):
        for group in schema.codes:
            matrix.loc[row, group] = interaction_association(records, schema, pair, group)
    return matrix


def finite_population_sd(coefficients: ArrayLike) -> NDArray[np.float64]:
    """
    Per-draw sample SD (denominator J − 1) of a batch's realized coefficients.

    Args:
        coefficients: Array of shape (draws, J), or a single draw of length J

    Raises:
        DomainError: If the batch has fewer than 2 levels

    """
    array = np.atleast_2d(np.asarray(coefficients, dtype=np.float64))
    if array.shape[1] < 2:  # noqa: PLR2004
        raise DomainError("Finite-population SD needs a batch with at least 2 levels")
    return np.std(array, axis=1, ddof=1)


def finite_population_sds(
    draws: PosteriorDraws, batch: str, masses: Sequence[float] = DEFAULT_MASSES
) -> IntervalSummary:
    """
    Interval summary of a batch's finite-population SD across draws.

    Reads the ``fpsd[batch]`` quantity streamed during sampling.

    Raises:
        DomainError: If the draws carry no such quantity (unknown or single-level batch)

    """
    try:
        values = draws.column(f"fpsd[{batch}]")
    except KeyError as e:
        msg = f"No finite-population SD stored for batch {batch}"
        raise DomainError(msg) from e
    values = values[np.isfinite(values)]
    if values.size == 0:
        msg = f"Batch {batch} has fewer than 2 levels"
        raise DomainError(msg)
    return interval_summary(values, masses)


def anova_table(draws: PosteriorDraws, masses: Sequence[float] = (0.5, 0.9)) -> pd.DataFrame:
    """
    Finite-population and superpopulation SD intervals for every batch.

    One row per batch and kind (``finite`` or ``superpopulation``), ordered by
    decreasing median finite-population SD.
    """
    batches = [name[len("fpsd[") : -1] for name in draws.generated_names if name.startswith("fpsd[")]
    rows = []
    for batch in batches:
        for kind, prefix in (("finite", "fpsd"), ("superpopulation", "sd")):
            values = draws.column(f"{prefix}[{batch}]").ravel()
            values = values[np.isfinite(values)]
            if values.size == 0:
                continue
            summary = interval_summary(values, masses)
            rows.append({"batch": batch, "kind": kind, **summary.to_dict()})
    frame = pd.DataFrame(rows)
    if frame.empty:
        return frame
    order = frame[frame["kind"] == "finite"].sort_values("median", ascending=False)["batch"].tolist()
    frame["rank"] = frame["batch"].map({b: i for i, b in enumerate(order)})
    return frame.sort_values(["rank", "kind"]).drop(columns="rank").reset_index(drop=True)


def effect_intervals(
    draws: PosteriorDraws, spec: ModelSpec, batch: str, masses: Sequence[float] = (0.5, 0.9)
) -> pd.DataFrame:
    """
    Intervals of every level's realized coefficient in one batch, sorted by |median|.

    Raises:
        DomainError: If the batch is unknown

    """
    if batch == CELL_BATCH or batch not in spec.batches:
        msg = f"Unknown effect batch {batch}"
        raise DomainError(msg)
    position = spec.batches.index(batch)
    n_groups = len(spec.schema.groups)
    flat = draws.flat()
    layout = ParameterLayout.for_vector(spec, flat[0])
    coefficients = []
    for q in flat:
        effects = realized_effects(q, spec, layout)
        coefficients.append(effects.main[position] if position < n_groups else effects.inter[position - n_groups])
    matrix = np.array(coefficients)
    rows = [
        {"batch": batch, "level": level + 1, **interval_summary(matrix[:, level], masses).to_dict()}
        for level in range(matrix.shape[1])
    ]
    frame = pd.DataFrame(rows)
    return frame.reindex(frame["median"].abs().sort_values(ascending=False).index).reset_index(drop=True)


def cell_rate_summary(
    draws: PosteriorDraws, cells: Sequence[TypeCell], masses: Sequence[float] = (0.5, 0.9)
) -> pd.DataFrame:
    """Posterior mean, median and intervals of μ_j for every training cell."""
    rows = []
    for cell in cells:
        values = draws.column(f"mu[{cell.cell_id}]").ravel()
        rows.append(
            {
                "cell": cell.cell_id,
                "count": cell.count,
                "exposure": cell.exposure,
                "mean": float(values.mean()),
                **interval_summary(values, masses).to_dict(),
            }
        )
    return pd.DataFrame(rows)


@dataclass
class PredictiveCheck:
    """
    Held-out predictive check.

    Args:
        observed: Observed total of the held-out cells kept by the filter
        simulated: Simulated total per draw
        exceedance: Fraction of draws strictly exceeding ``observed``

    """

    observed: float
    simulated: NDArray[np.int64]
    exceedance: float

    def histogram(self) -> pd.DataFrame:
        """Number of draws per simulated total."""
        totals, draws = np.unique(self.simulated, return_counts=True)
        return pd.DataFrame({"total": totals, "draws": draws})

    def to_dict(self) -> dict[str, Any]:
        return {
            "observed": self.observed,
            "exceedance": self.exceedance,
            "draws": int(self.simulated.size),
            "simulated_mean": float(self.simulated.mean()),
        }


def exceedance(simulated: ArrayLike, observed: float) -> float:
    """Fraction of simulated totals strictly greater than the observed total."""
    values = np.asarray(simulated, dtype=np.float64)
    if values.size == 0:
        raise DomainError("No simulated totals")
    return float(np.mean(values > observed))


def posterior_predictive_check(
    rates: NDArray[np.float64],
    observed: ArrayLike,
    rng: np.random.Generator,
    keep: ArrayLike | None = None,
) -> PredictiveCheck:
    """
    Compare held-out totals with totals simulated from posterior rates.

    For every draw a zero-truncated Poisson count is simulated per held-out
    cell, the kept cells are summed, and the result is compared strictly with
    the observed total.

    Args:
        rates: Predicted rates, shape (draws, held-out cells)
        observed: Observed held-out counts, each at least 1
        rng: Generator for the simulated counts
        keep: Boolean filter over held-out cells (e.g. one city); all when None

    Raises:
        DomainError: On an empty holdout, non-finite or zero observed counts, or misaligned inputs

    """
    counts = np.asarray(observed, dtype=np.float64)
    rates = np.atleast_2d(np.asarray(rates, dtype=np.float64))
    if counts.size == 0:
        raise DomainError("Empty holdout")
    if not np.all(np.isfinite(counts)) or np.any(counts < 1):
        raise DomainError("Held-out counts must be finite and at least 1")
    if rates.shape[1] != counts.size:
        msg = f"Got rates for {rates.shape[1]} cells but {counts.size} held-out counts"
        raise DomainError(msg)
    mask = np.ones(counts.size, dtype=bool) if keep is None else np.asarray(keep, dtype=bool)
    if not mask.any():
        raise DomainError("The holdout filter keeps no cells")
    simulated = truncated_poisson_rng(rates[:, mask], rng).sum(axis=1)
    total = float(counts[mask].sum())
    return PredictiveCheck(observed=total, simulated=simulated, exceedance=exceedance(simulated, total))


@dataclass
class EffectSummary:
    """
    Posterior summary of the policy effect on the selected roads.

    Reductions are 1 − observed / expected, positive when fewer fatalities
    occurred than expected.
    """

    expected: IntervalSummary
    observed_after: float
    reduction: IntervalSummary
    reductions: NDArray[np.float64]
    prob_exceeds_naive: float | None
    prob_no_reduction: float
    excluded: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "expected": self.expected.to_dict(),
            "observed_after": self.observed_after,
            "reduction": self.reduction.to_dict(),
            "prob_exceeds_naive": self.prob_exceeds_naive,
            "prob_no_reduction": self.prob_no_reduction,
            "excluded_draws": self.excluded,
        }


def effect_summary(
    expected_draws: ArrayLike,
    observed_after: float,
    naive_reduction: float | None = None,
    masses: Sequence[float] = DEFAULT_MASSES,
    *,
    observation_noise: bool = False,
    rng: np.random.Generator | None = None,
) -> EffectSummary:
    """
    Distribution of the reduction implied by expected versus observed fatalities.

    Each draw's reduction is 1 − observed / expected. With ``observation_noise``
    the observed count is replaced per draw by a rate multiplier drawn from
    gamma(observed + 1/2, 1 / expected), so the reduction also reflects the
    Poisson noise of the after period.

    Args:
        expected_draws: Expected after-period fatalities per posterior draw
        observed_after: Observed after-period fatalities
        naive_reduction: Naive before-after reduction (positive = decline) to compare against
        masses: Central interval masses
        observation_noise: Draw the after-period multiplier instead of using the observed ratio
        rng: Generator for the multiplier draws

    Raises:
        DomainError: If no draw has a positive expectation, or the observed count is negative

    """
    expected = np.asarray(expected_draws, dtype=np.float64).ravel()
    if expected.size == 0:
        raise DomainError("No expectation draws")
    if observed_after < 0:
        msg = f"Observed fatalities must be nonnegative, got {observed_after}"
        raise DomainError(msg)
    usable = np.isfinite(expected) & (expected > 0)
    excluded = int((~usable).sum())
    if excluded:
        logger.warning("Excluded %d draws with nonpositive expected fatalities", excluded)
    expected = expected[usable]
    if expected.size == 0:
        raise DomainError("Every expectation draw is nonpositive")
    if observation_noise:
        generator = np.random.default_rng() if rng is None else rng
        reductions = 1.0 - generator.gamma(observed_after + 0.5, 1.0 / expected)
    else:
        reductions = 1.0 - observed_after / expected
    return EffectSummary(
        expected=interval_summary(expected, masses),
        observed_after=float(observed_after),
        reduction=interval_summary(reductions, masses),
        reductions=reductions,
        prob_exceeds_naive=None if naive_reduction is None else float(np.mean(reductions >= naive_reduction)),
        prob_no_reduction=float(np.mean(reductions <= 0.0)),
        excluded=excluded,
    )


def population_share_scale(summary: IntervalSummary, share: float) -> IntervalSummary:
    """
    Scale a total estimated on part of a city to the whole city.

    Args:
        summary: Summary of a total over the observed part
        share: The part's share of the city, in (0, 1]

    """
    if not 0.0 < share <= 1.0:
        msg = f"population share must lie in (0, 1], got {share}"
        raise DomainError(msg)
    return summary.scaled(1.0 / share)
