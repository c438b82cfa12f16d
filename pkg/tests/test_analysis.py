"""Tests for before-after comparisons, association screens and posterior summaries."""

import logging
import math

import numpy as np
import pytest

from trafficbayes.analysis import (
    IntervalSummary,
    anova_table,
    cell_rate_summary,
    cramers_v,
    cramers_v_matrix,
    decompose,
    effect_intervals,
    effect_summary,
    exceedance,
    finite_population_sd,
    finite_population_sds,
    interaction_association,
    interaction_association_matrix,
    interval_summary,
    mean_adjusted_baseline,
    mirror_diagnostic,
    model_based_ledger,
    modification_factor,
    population_share_scale,
    posterior_predictive_check,
    reduction_factor,
)
from trafficbayes.core import RoadRecord
from trafficbayes.exceptions import DomainError
from trafficbayes.model import ParameterLayout
from trafficbayes.sampler import PosteriorDraws


class TestIntervals:
    """Test cases for interval summaries."""

    def test_interval_summary(self):
        """Test median and linear-interpolation quantiles."""
        summary = interval_summary(np.arange(101), masses=(0.5, 0.9))

        assert summary.median == 50.0
        assert summary.intervals[0.5] == pytest.approx((25.0, 75.0))
        assert summary.intervals[0.9] == pytest.approx((5.0, 95.0))
        assert summary.to_dict() == {
            "median": 50.0,
            "lower_50": 25.0,
            "upper_50": 75.0,
            "lower_90": 5.0,
            "upper_90": 95.0,
        }

    def test_empty(self):
        """Test that an empty sample cannot be summarized."""
        with pytest.raises(DomainError):
            interval_summary([])

    def test_population_share_scale(self):
        """Test scaling a partial total to the whole city."""
        summary = IntervalSummary(median=10.0, intervals={0.9: (8.0, 12.0)})

        scaled = population_share_scale(summary, 0.5)

        assert scaled.median == 20.0
        assert scaled.intervals[0.9] == (16.0, 24.0)

    @pytest.mark.parametrize("share", [0.0, 1.5, -0.2])
    def test_population_share_domain(self, share):
        """Test that the share must lie in (0, 1]."""
        with pytest.raises(DomainError):
            population_share_scale(IntervalSummary(median=1.0), share)


class TestBeforeAfter:
    """Test cases for before-after factors and the decomposition ledger."""

    @pytest.mark.parametrize(("before", "after", "expected"), [(10, 1, -0.9), (0.5, 1.5, 2.0), (4, 4, 0.0)])
    def test_reduction_factor(self, before, after, expected):
        """Test the signed relative change."""
        assert reduction_factor(before, after) == pytest.approx(expected)

    def test_modification_factor(self):
        """Test the after/before ratio."""
        assert modification_factor(8.0, 2.0) == 0.25

    @pytest.mark.parametrize("factor", [reduction_factor, modification_factor])
    def test_zero_before(self, factor):
        """Test that a zero before value is rejected."""
        with pytest.raises(DomainError):
            factor(0.0, 1.0)

    def test_mean_adjusted_baseline(self):
        """Test the all-road average."""
        assert mean_adjusted_baseline([0, 0, 1, 3]) == 1.0
        with pytest.raises(DomainError):
            mean_adjusted_baseline([])

    def test_toy_city_ledger(self):
        """Test the expected ledger of the hundred-road toy city."""
        ledger = decompose(10, 1, 0, 1)

        assert ledger.naive == -9
        assert ledger.causal == 0
        assert ledger.selection == -10
        assert ledger.temporal == 1
        assert ledger.to_dict()["B_s"] == 10

    def test_identity_on_random_quadruples(self):
        """Test that the three components always add up to the naive change."""
        rng = np.random.default_rng(1)
        for before_s, after_s, before_u, after_u in rng.integers(-1000, 1000, size=(10_000, 4)).tolist():
            ledger = decompose(before_s, after_s, before_u, after_u)
            assert ledger.naive == ledger.causal + ledger.temporal + ledger.selection

    def test_model_based_ledger(self):
        """Test the ledger whose baseline is the model expectation."""
        ledger = model_based_ledger(10, 1, 1)

        assert ledger.temporal == 0
        assert ledger.selection == -9
        assert ledger.causal == 0

    def test_mirror_flagged(self):
        """Test that opposite changes of comparable size are flagged."""
        report = mirror_diagnostic(10, 5, 10, 13)

        assert report.selected_change == pytest.approx(-0.5)
        assert report.unselected_change == pytest.approx(0.3)
        assert report.flagged

    @pytest.mark.parametrize(
        "totals",
        [(10, 5, 10, 11), (10, 5, 10, 8), (10, 12, 10, 14)],
    )
    def test_mirror_not_flagged(self, totals):
        """Test that small or same-signed unselected changes are not flagged."""
        assert not mirror_diagnostic(*totals).flagged


class TestCramersV:
    """Test cases for Cramér's V."""

    def test_perfect_association(self):
        """Test that a diagonal table has V = 1."""
        assert cramers_v([[10, 0], [0, 10]]) == pytest.approx(1.0)
        assert cramers_v(np.diag([3, 4, 5])) == pytest.approx(1.0)

    def test_independence(self):
        """Test that a table with proportional rows has V = 0."""
        assert cramers_v([[10, 20], [20, 40]]) == pytest.approx(0.0, abs=1e-12)

    def test_known_value(self):
        """Test a 2x2 table against its phi coefficient."""
        a, b, c, d = 20, 10, 5, 15
        phi = (a * d - b * c) / math.sqrt((a + b) * (c + d) * (a + c) * (b + d))
        assert cramers_v([[a, b], [c, d]]) == pytest.approx(abs(phi))

    def test_empty_rows_trimmed(self, caplog):
        """Test that empty rows are dropped with a warning."""
        with caplog.at_level(logging.WARNING, logger="trafficbayes.analysis"):
            assert cramers_v([[10, 0], [0, 0], [0, 10]]) == pytest.approx(1.0)
        assert "Trimmed 1 empty rows" in caplog.text

    @pytest.mark.parametrize("table", [[[1, 2]], [[1, -1], [2, 3]], [1, 2, 3], [[5, 0], [0, 0]]])
    def test_invalid(self, table):
        """Test tables that have no defined association."""
        with pytest.raises(DomainError):
            cramers_v(table)

    def test_matrix(self, small_records, small_schema):
        """Test the pairwise matrix over road records."""
        matrix = cramers_v_matrix(small_records, small_schema)

        assert list(matrix.index) == ["SIGN", "LGHT"]
        assert matrix.loc["SIGN", "SIGN"] == 1.0
        assert matrix.loc["SIGN", "LGHT"] == matrix.loc["LGHT", "SIGN"]
        assert 0.0 <= matrix.loc["SIGN", "LGHT"] <= 1.0

    def test_matrix_perfect(self, small_schema):
        """Test two groups that determine each other."""
        records = [RoadRecord(f"r{i}", (i % 2 + 1, i % 2 + 1), 1.0, 1) for i in range(10)]
        assert cramers_v_matrix(records, small_schema).loc["SIGN", "LGHT"] == pytest.approx(1.0)

    def test_matrix_single_level(self, small_schema, caplog):
        """Test that a group with one observed level gives nan."""
        records = [RoadRecord(f"r{i}", (1, i % 3 + 1), 1.0, 1) for i in range(6)]
        with caplog.at_level(logging.WARNING, logger="trafficbayes.analysis"):
            assert np.isnan(cramers_v_matrix(records, small_schema).loc["SIGN", "LGHT"])
        assert "single observed level" in caplog.text

    def test_interaction_association(self, small_records, small_schema):
        """Test that an interaction fully determines its own groups."""
        assert interaction_association(small_records, small_schema, ("SIGN", "LGHT"), "SIGN") == pytest.approx(1.0)
        matrix = interaction_association_matrix(small_records, small_schema)
        assert list(matrix.index) == ["SIGN:LGHT"]
        np.testing.assert_allclose(matrix.to_numpy(dtype=float), 1.0)

    def test_interaction_association_unknown_pair(self, small_records, small_schema):
        """Test that pairs outside the schema are rejected."""
        with pytest.raises(DomainError):
            interaction_association(small_records, small_schema, ("LGHT", "SIGN"), "SIGN")


class TestVarianceDecomposition:
    """Test cases for finite-population SDs and effect intervals."""

    def test_finite_population_sd(self):
        """Test the per-draw sample SD."""
        np.testing.assert_allclose(finite_population_sd([[1.0, 2.0, 3.0], [2.0, 2.0, 2.0]]), [1.0, 0.0])
        np.testing.assert_allclose(finite_population_sd([1.0, 3.0]), [math.sqrt(2.0)])

    def test_finite_population_sd_single_level(self):
        """Test that a one-level batch has no finite-population SD."""
        with pytest.raises(DomainError):
            finite_population_sd([[1.0], [2.0]])

    @pytest.fixture
    def sd_draws(self):
        n = 50
        a = np.linspace(0.1, 0.2, n)
        b = np.linspace(1.0, 2.0, n)
        generated = np.stack([a, b, a * 2, b * 2, np.full(n, np.nan), np.full(n, np.nan)], axis=-1)[np.newaxis]
        return PosteriorDraws(
            names=("theta",),
            values=np.zeros((1, n, 1)),
            generated_names=("fpsd[A]", "fpsd[B]", "sd[A]", "sd[B]", "fpsd[C]", "sd[C]"),
            generated=generated,
        )

    def test_finite_population_sds(self, sd_draws):
        """Test the interval summary of one batch."""
        summary = finite_population_sds(sd_draws, "B", masses=(0.5,))
        assert summary.median == pytest.approx(1.5)

    @pytest.mark.parametrize("batch", ["C", "Z"])
    def test_finite_population_sds_unavailable(self, sd_draws, batch):
        """Test batches without a usable finite-population SD."""
        with pytest.raises(DomainError):
            finite_population_sds(sd_draws, batch)

    def test_anova_table(self, sd_draws):
        """Test ordering by decreasing finite-population SD."""
        table = anova_table(sd_draws)

        assert table["batch"].tolist() == ["B", "B", "A", "A"]
        assert table["kind"].tolist() == ["finite", "superpopulation", "finite", "superpopulation"]
        assert table.loc[1, "median"] == pytest.approx(3.0)
        assert {"lower_50", "upper_50", "lower_90", "upper_90"} <= set(table.columns)

    def test_effect_intervals(self, small_spec):
        """Test level intervals sorted by absolute median."""
        layout = ParameterLayout(small_spec, 0)
        q = np.zeros(layout.dimension)
        q[layout.main[0]] = [2.0, -4.0]
        draws = PosteriorDraws(names=layout.names, values=np.tile(q, (1, 3, 1)))

        table = effect_intervals(draws, small_spec, "SIGN")

        assert table["level"].tolist() == [2, 1]
        assert table["median"].tolist() == pytest.approx([-4.0 / math.e, 2.0 / math.e])

    @pytest.mark.parametrize("batch", ["cell", "SURF"])
    def test_effect_intervals_unknown(self, small_spec, batch):
        """Test that the cell batch and unknown batches are rejected."""
        layout = ParameterLayout(small_spec, 0)
        draws = PosteriorDraws(names=layout.names, values=np.zeros((1, 2, layout.dimension)))
        with pytest.raises(DomainError):
            effect_intervals(draws, small_spec, batch)

    def test_cell_rate_summary(self, small_cells):
        """Test per-cell rate summaries from streamed rates."""
        generated = np.tile(np.arange(1.0, 6.0), (2, 4, 1))
        draws = PosteriorDraws(
            names=("theta",),
            values=np.zeros((2, 4, 1)),
            generated_names=tuple(f"mu[{j}]" for j in range(5)),
            generated=generated,
        )

        table = cell_rate_summary(draws, small_cells)

        assert table["cell"].tolist() == [0, 1, 2, 3, 4]
        assert table["mean"].tolist() == [1.0, 2.0, 3.0, 4.0, 5.0]
        assert table["count"].tolist() == [c.count for c in small_cells]


class TestPredictiveCheck:
    """Test cases for the held-out predictive check."""

    def test_exceedance_is_strict(self):
        """Test that ties do not count as exceedances."""
        assert exceedance([2, 3, 4], 3) == pytest.approx(1 / 3)

    def test_tiny_rates(self):
        """Test that near-zero rates simulate one fatality per cell."""
        rates = np.full((100, 3), 1e-6)

        check = posterior_predictive_check(rates, [1, 1, 1], np.random.default_rng(0))

        assert check.observed == 3.0
        assert check.exceedance == 0.0
        assert check.to_dict()["draws"] == 100
        assert check.histogram()["total"].tolist() == [3]

    def test_keep_filter(self):
        """Test restricting the check to some held-out cells."""
        rates = np.full((20, 3), 1e-6)

        check = posterior_predictive_check(rates, [1, 5, 1], np.random.default_rng(0), keep=[True, False, True])

        assert check.observed == 2.0
        assert np.all(check.simulated == 2)

    def test_large_rates_exceed(self):
        """Test that rates far above the observed counts always exceed."""
        check = posterior_predictive_check(np.full((50, 2), 40.0), [1, 1], np.random.default_rng(0))
        assert check.exceedance == 1.0

    @pytest.mark.parametrize(
        ("rates", "observed", "keep"),
        [
            (np.ones((5, 0)), [], None),
            (np.ones((5, 2)), [1, 0], None),
            (np.ones((5, 2)), [1, np.nan], None),
            (np.ones((5, 3)), [1, 1], None),
            (np.ones((5, 2)), [1, 1], [False, False]),
        ],
    )
    def test_invalid(self, rates, observed, keep):
        """Test invalid holdouts."""
        with pytest.raises(DomainError):
            posterior_predictive_check(rates, observed, np.random.default_rng(0), keep=keep)


class TestEffectSummary:
    """Test cases for the policy-effect summary."""

    def test_reductions(self, caplog):
        """Test reductions, probabilities and excluded draws."""
        with caplog.at_level(logging.WARNING, logger="trafficbayes.analysis"):
            summary = effect_summary([100.0, 100.0, 50.0, 200.0, -1.0], 80.0, naive_reduction=0.5)

        np.testing.assert_allclose(summary.reductions, [0.2, 0.2, -0.6, 0.6])
        assert summary.excluded == 1
        assert summary.prob_no_reduction == 0.25
        assert summary.prob_exceeds_naive == 0.25
        assert summary.reduction.median == pytest.approx(0.2)
        assert "Excluded 1 draws" in caplog.text
        assert summary.to_dict()["excluded_draws"] == 1

    def test_no_naive(self):
        """Test that the naive comparison is optional."""
        assert effect_summary([10.0, 20.0], 5.0).prob_exceeds_naive is None

    def test_observation_noise(self):
        """Test that observation noise widens the reduction around its Jeffreys-posterior center."""
        rng = np.random.default_rng(11)

        summary = effect_summary(np.full(100_000, 100.0), 80.0, observation_noise=True, rng=rng)

        assert summary.reductions.mean() == pytest.approx(1.0 - 80.5 / 100.0, abs=0.002)
        assert summary.reductions.std() == pytest.approx(math.sqrt(80.5) / 100.0, rel=0.02)
        assert effect_summary(np.full(10, 100.0), 80.0).reductions.std() == 0.0

    def test_negative_observed(self):
        """Test that a negative observed count is rejected."""
        with pytest.raises(DomainError, match="nonnegative"):
            effect_summary([10.0], -1.0)

    @pytest.mark.parametrize("draws", [[], [0.0, -2.0]])
    def test_unusable(self, draws):
        """Test that summaries need a positive expectation."""
        with pytest.raises(DomainError):
            effect_summary(draws, 1.0)
