"""Tests for the Robbins empirical-Bayes adjustment."""

import logging

import numpy as np
import pytest

from trafficbayes.eb import (
    CountHistogram,
    expected_fatalities_selected,
    implied_change,
    isotonic_rates,
    robbins_estimate,
)
from trafficbayes.exceptions import DomainError, NumericalError, UndefinedEstimateError

ALL_ROADS = {0: 138142, 1: 632, 2: 40, 3: 1, 4: 1}
SELECTED_ROADS = {0: 43806, 1: 405, 2: 29, 3: 1}


@pytest.fixture
def hist():
    return CountHistogram(ALL_ROADS)


@pytest.fixture
def selected_hist():
    return CountHistogram(SELECTED_ROADS)


class TestCountHistogram:
    """Test cases for CountHistogram."""

    def test_from_counts(self):
        """Test tallying per-road counts."""
        hist = CountHistogram.from_counts([0, 0, 1, 3, 0, 1])

        assert hist.counts == {0: 3, 1: 2, 3: 1}
        assert hist[2] == 0
        assert hist.total_roads == 6
        assert hist.total_fatalities == 5
        assert hist.support == [0, 1, 3]

    def test_empty(self):
        """Test the histogram of no roads."""
        hist = CountHistogram.from_counts([])
        assert hist.total_roads == 0
        assert hist.support == []

    @pytest.mark.parametrize("counts", [{-1: 3}, {0: -2}])
    def test_negative_entries(self, counts):
        """Test that negative entries are rejected."""
        with pytest.raises(DomainError):
            CountHistogram(counts)

    def test_negative_road_count(self):
        """Test that negative road counts are rejected."""
        with pytest.raises(DomainError):
            CountHistogram.from_counts([1, -1])


class TestRobbinsEstimate:
    """Test cases for robbins_estimate."""

    @pytest.mark.parametrize(
        ("x", "expected"),
        [(0, 632 / 138142), (1, 80 / 632), (2, 0.075), (3, 4.0)],
    )
    def test_table_rates(self, hist, x, expected):
        """Test the rates of the published fatality histogram."""
        assert robbins_estimate(hist, x) == pytest.approx(expected, rel=1e-12)

    def test_rounded_rates(self, hist):
        """Test the rates against their rounded published values."""
        rates = [robbins_estimate(hist, x) for x in range(4)]
        assert rates == pytest.approx([0.004575, 0.12658, 0.075, 4.0], rel=1e-4)

    def test_tail_truncation(self, hist, caplog):
        """Test that the last observed count gets rate 0 with a warning."""
        with caplog.at_level(logging.WARNING, logger="trafficbayes.eb"):
            assert robbins_estimate(hist, 4) == 0.0
        assert "Tail truncation at x=4" in caplog.text

    def test_undefined(self, hist):
        """Test that an unobserved count raises UndefinedEstimateError."""
        with pytest.raises(UndefinedEstimateError) as excinfo:
            robbins_estimate(hist, 5)
        assert excinfo.value.x == 5
        assert isinstance(excinfo.value, NumericalError)
        assert excinfo.value.exit_code == 4

    def test_gamma_poisson_posterior_mean(self):
        """Test recovery of the conjugate posterior mean on a large gamma-Poisson sample."""
        rng = np.random.default_rng(5)
        rates = rng.gamma(shape=1.0, scale=0.1, size=1_000_000)
        hist = CountHistogram.from_counts(rng.poisson(rates))

        for x in (0, 1):
            assert robbins_estimate(hist, x) == pytest.approx((1 + x) / 11, rel=0.05)


class TestExpectedFatalitiesSelected:
    """Test cases for the selected-road adjustment table."""

    def test_published_table(self, hist, selected_hist):
        """Test the expected fatalities and per-year average of the published table."""
        table = expected_fatalities_selected(hist, selected_hist, years=5)

        assert [row.x for row in table.rows] == [0, 1, 2, 3]
        assert [row.roads for row in table.rows] == [138142, 632, 40, 1]
        assert [row.selected for row in table.rows] == [43806, 405, 29, 1]
        expected = [row.expected for row in table.rows]
        assert expected == pytest.approx([200.4125, 51.2658, 2.175, 4.0], abs=1e-3)
        for value, published in zip(expected, [200, 51, 2, 4], strict=True):
            assert abs(value - published) <= 1
        assert table.total_expected == pytest.approx(257.853, abs=1e-3)
        assert table.per_year == pytest.approx(51.5707, abs=1e-3)
        assert abs(table.per_year - 52) <= 1

    def test_implied_change(self, hist, selected_hist):
        """Test the change implied by 72 observed after-period fatalities per year."""
        table = expected_fatalities_selected(hist, selected_hist, years=5)
        assert implied_change(table, 72) == pytest.approx(72 / table.per_year - 1)
        assert implied_change(table, 72) == pytest.approx(0.3961, abs=1e-3)

    def test_to_frame_and_dict(self, hist, selected_hist):
        """Test tabular renderings of the adjustment."""
        table = expected_fatalities_selected(hist, selected_hist, years=5)

        frame = table.to_frame()
        assert list(frame.columns) == ["x", "roads", "rate", "selected", "expected"]
        assert len(frame) == 4
        data = table.to_dict()
        assert data["years"] == 5
        assert data["per_year"] == pytest.approx(table.per_year)

    def test_selected_exceeds_all(self, hist):
        """Test that more selected than total roads at a count is rejected."""
        with pytest.raises(DomainError, match="exceed"):
            expected_fatalities_selected(hist, CountHistogram({2: 41}))

    def test_years_must_be_positive(self, hist, selected_hist):
        """Test that the period length must be at least one year."""
        with pytest.raises(DomainError):
            expected_fatalities_selected(hist, selected_hist, years=0)


class TestIsotonicRates:
    """Test cases for the isotonic variant."""

    def test_pools_violating_rates(self, hist, selected_hist):
        """Test that the decreasing rates at x=1 and x=2 are pooled."""
        table = expected_fatalities_selected(hist, selected_hist, years=5, isotonic=True)

        rates = [row.rate for row in table.rows]
        assert table.isotonic is True
        assert rates[0] == pytest.approx(632 / 138142)
        assert rates[1] == pytest.approx(83 / 672, rel=1e-9)
        assert rates[2] == pytest.approx(83 / 672, rel=1e-9)
        assert rates[3] == pytest.approx(4.0)
        assert all(a <= b for a, b in zip(rates, rates[1:], strict=False))
        assert table.rows[1].expected == pytest.approx(405 * 83 / 672)

    def test_monotone_rates_unchanged(self):
        """Test that already nondecreasing rates are left alone."""
        hist = CountHistogram({0: 100, 1: 10, 2: 2})
        raw = expected_fatalities_selected(hist, CountHistogram({0: 50, 1: 5}))

        smoothed = isotonic_rates(raw)

        assert [r.rate for r in smoothed.rows] == pytest.approx([r.rate for r in raw.rows])
