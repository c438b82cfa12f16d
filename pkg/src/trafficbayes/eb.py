"""Nonparametric empirical-Bayes adjustment of before-period counts with Robbins' formula."""

import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from typing import Any, Self

import numpy as np
import pandas as pd
from scipy.optimize import isotonic_regression

from .analysis import reduction_factor
from .exceptions import DomainError, UndefinedEstimateError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CountHistogram:
    """
    Number of roads N_x with exactly x fatalities in the before period.

    Args:
        counts: Mapping of count x to number of roads N_x

    """

    counts: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for x, n in self.counts.items():
            if x < 0 or n < 0:
                msg = f"Histogram entries must be nonnegative, got N_{x} = {n}"
                raise DomainError(msg)

    @classmethod
    def from_counts(cls, values: Iterable[int]) -> Self:
        """Histogram of per-road counts."""
        array = np.asarray(list(values), dtype=np.int64)
        if array.size and array.min() < 0:
            raise DomainError("Road counts must be nonnegative")
        tally = np.bincount(array) if array.size else np.zeros(0, dtype=np.int64)
        return cls({x: int(n) for x, n in enumerate(tally) if n})

    def __getitem__(self, x: int) -> int:
        return int(self.counts.get(x, 0))

    @property
    def total_roads(self) -> int:
        return sum(self.counts.values())

    @property
    def total_fatalities(self) -> int:
        return sum(x * n for x, n in self.counts.items())

    @property
    def support(self) -> list[int]:
        """Counts with at least one road, ascending."""
        return sorted(x for x, n in self.counts.items() if n > 0)


def robbins_estimate(hist: CountHistogram, x: int) -> float:
    """
    Estimated mean rate of roads observed with x fatalities: (x + 1)·N_{x+1} / N_x.

    Args:
        hist: Histogram over all roads, selected or not
        x: Observed count

    Returns:
        Estimated rate; 0 with a tail-truncation warning when N_{x+1} = 0

    Raises:
        UndefinedEstimateError: If no road was observed with x fatalities

    """
    if hist[x] == 0:
        raise UndefinedEstimateError(x)
    if hist[x + 1] == 0:
        logger.warning("Tail truncation at x=%d: no roads observed with %d fatalities, rate set to 0", x, x + 1)
        return 0.0
    return (x + 1) * hist[x + 1] / hist[x]


@dataclass(frozen=True)
class RobbinsRow:
    """One column of the adjustment table."""

    x: int
    roads: int
    rate: float | None
    selected: int
    expected: float


@dataclass
class RobbinsTable:
    """
    Robbins adjustment of the selected roads.

    Args:
        rows: One row per observed count x
        years: Length of the before period
        isotonic: Whether rates were isotonic-smoothed

    """

    rows: list[RobbinsRow]
    years: int
    isotonic: bool = False

    @property
    def total_expected(self) -> float:
        return float(sum(row.expected for row in self.rows))

    @property
    def per_year(self) -> float:
        """Expected fatalities on the selected roads per year."""
        return self.total_expected / self.years

    def to_frame(self) -> pd.DataFrame:
        """Table-shaped frame, one row per x; unavailable rates are left empty."""
        return pd.DataFrame(
            {
                "x": [r.x for r in self.rows],
                "roads": [r.roads for r in self.rows],
                "rate": [r.rate for r in self.rows],
                "selected": [r.selected for r in self.rows],
                "expected": [r.expected for r in self.rows],
            }
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "rows": [
                {"x": r.x, "roads": r.roads, "rate": r.rate, "selected": r.selected, "expected": r.expected}
                for r in self.rows
            ],
            "years": self.years,
            "isotonic": self.isotonic,
            "total_expected": self.total_expected,
            "per_year": self.per_year,
        }


def expected_fatalities_selected(
    hist: CountHistogram, selected_hist: CountHistogram, years: int = 1, *, isotonic: bool = False
) -> RobbinsTable:
    """
    Expected fatalities on the selected roads had nothing changed.

    For every count x the Robbins rate estimated from the full histogram is
    multiplied by the number of selected roads with that count.

    Args:
        hist: Histogram over all roads
        selected_hist: Histogram over the selected roads
        years: Length of the before period, for per-year averaging
        isotonic: Replace the raw rates by their weighted isotonic fit

    Raises:
        DomainError: If the selected histogram exceeds the full one or years < 1
        UndefinedEstimateError: Propagated from ``robbins_estimate``

    """
    if years < 1:
        msg = f"years must be at least 1, got {years}"
        raise DomainError(msg)
    for x, n in selected_hist.counts.items():
        if n > hist[x]:
            msg = f"Selected roads with x={x} ({n}) exceed all roads with x={x} ({hist[x]})"
            raise DomainError(msg)
    rows = []
    for x in sorted(selected_hist.counts):
        if hist[x] == 0:
            rows.append(RobbinsRow(x=x, roads=0, rate=None, selected=0, expected=0.0))
            continue
        rate = robbins_estimate(hist, x)
        selected = selected_hist[x]
        rows.append(RobbinsRow(x=x, roads=hist[x], rate=rate, selected=selected, expected=rate * selected))
    table = RobbinsTable(rows=rows, years=years)
    return isotonic_rates(table) if isotonic else table


def isotonic_rates(table: RobbinsTable) -> RobbinsTable:
    """Rates replaced by a nondecreasing fit weighted by the road counts N_x."""
    available = [row for row in table.rows if row.rate is not None]
    if len(available) < 2:  # noqa: PLR2004
        return replace(table, isotonic=True)
    fit = isotonic_regression(
        np.array([row.rate for row in available], dtype=np.float64),
        weights=np.array([row.roads for row in available], dtype=np.float64),
        increasing=True,
    ).x
    smoothed = {row.x: float(rate) for row, rate in zip(available, fit, strict=True)}
    rows = [
        replace(row, rate=smoothed[row.x], expected=smoothed[row.x] * row.selected) if row.x in smoothed else row
        for row in table.rows
    ]
    return RobbinsTable(rows=rows, years=table.years, isotonic=True)


def implied_change(table: RobbinsTable, observed_after: float) -> float:
    """Relative change of an observed per-year after count against the Robbins expectation."""
    return reduction_factor(table.per_year, observed_after)
