"""Tests for the no-U-turn sampler."""

import numpy as np
import pytest

from trafficbayes.config import SamplerConfig
from trafficbayes.exceptions import DomainError, InitializationError
from trafficbayes.model import ModelPosterior
from trafficbayes.sampler import (
    NutsChain,
    PosteriorDraws,
    StepSizeAdapter,
    adaptation_windows,
    regularized_variance,
    run_chains,
)


def standard_normal(q):
    return -0.5 * float(q @ q), -q


def scaled_normal(q):
    scales = np.array([1.0, 10.0, 0.1])
    z = q / scales
    return -0.5 * float(z @ z), -z / scales


def nowhere(q):
    return -np.inf, np.zeros_like(q)


class FirstSquared:
    """Generated quantity: the first coordinate squared."""

    names = ("sq",)

    def __call__(self, q):
        return np.array([q[0] ** 2])


class TestAdaptationWindows:
    """Test cases for the metric-adaptation schedule."""

    def test_default_schedule(self):
        """Test the doubling windows of a 1000-iteration warmup."""
        assert adaptation_windows(1000) == [(75, 99), (100, 149), (150, 249), (250, 449), (450, 949)]

    def test_exact_fit(self):
        """Test a warmup leaving room for exactly one window."""
        assert adaptation_windows(150) == [(75, 99)]

    def test_short_warmup(self):
        """Test the proportional split of short warmups."""
        assert adaptation_windows(100) == [(15, 89)]

    def test_no_adaptation(self):
        """Test that very short warmups do not adapt the metric."""
        assert adaptation_windows(19) == []
        assert adaptation_windows(0) == []

    @pytest.mark.parametrize("warmup", [20, 57, 151, 300, 999, 5000])
    def test_windows_are_contiguous(self, warmup):
        """Test that windows tile the adaptation stretch without gaps."""
        windows = adaptation_windows(warmup)

        for (_, end), (start, _) in zip(windows, windows[1:], strict=False):
            assert start == end + 1
        assert all(start <= end for start, end in windows)
        assert windows[-1][1] < warmup


class TestStepSizeAdapter:
    """Test cases for dual averaging."""

    def test_grows_when_accepting_too_much(self):
        """Test that acceptance above the target increases the step size."""
        adapter = StepSizeAdapter(0.1, 0.8)
        for _ in range(50):
            adapter.learn(1.0)
        assert adapter.final_step_size > 0.1

    def test_shrinks_when_rejecting(self):
        """Test that acceptance below the target decreases the step size."""
        adapter = StepSizeAdapter(0.1, 0.8)
        for _ in range(50):
            adapter.learn(0.0)
        assert adapter.final_step_size < 0.1

    def test_restart(self):
        """Test that restarting clears the history."""
        adapter = StepSizeAdapter(0.1, 0.8)
        adapter.learn(0.3)
        adapter.restart(0.5)
        assert adapter.counter == 0
        assert adapter.mu == pytest.approx(np.log(5.0))


class TestRegularizedVariance:
    """Test cases for the window variance estimate."""

    def test_shrinkage(self, rng):
        """Test the shrinkage toward a small constant."""
        samples = rng.normal(0.0, 2.0, (45, 3))

        expected = 45 / 50 * np.var(samples, axis=0, ddof=1) + 1e-3 * 5 / 50

        np.testing.assert_allclose(regularized_variance(samples), expected)


class TestRunChains:
    """Test cases for multi-chain sampling."""

    def test_standard_normal(self, quick_sampler):
        """Test recovery of a standard normal target."""
        draws = run_chains(standard_normal, 2, quick_sampler)

        assert draws.values.shape == (2, 200, 2)
        flat = draws.flat()
        np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=0.25)
        np.testing.assert_allclose(flat.var(axis=0), 1.0, atol=0.35)
        assert [s.seed for s in draws.chain_stats] == [11, 12]
        assert all(0.5 < s.mean_accept <= 1.0 for s in draws.chain_stats)

    def test_metric_adapts_to_scales(self):
        """Test that the adapted inverse metric tracks the target variances."""
        config = SamplerConfig(chains=1, iterations=700, warmup=500, seed=4, workers=1)

        draws = run_chains(scaled_normal, 3, config)

        metric = draws.chain_stats[0].inverse_metric
        assert metric[1] > 10 * metric[0] > 10 * metric[2]
        np.testing.assert_allclose(draws.flat().std(axis=0), [1.0, 10.0, 0.1], rtol=0.35)

    def test_reproducible(self, quick_sampler):
        """Test that equal configurations give identical draws."""
        first = run_chains(standard_normal, 2, quick_sampler)
        second = run_chains(standard_normal, 2, quick_sampler)
        np.testing.assert_array_equal(first.values, second.values)

    def test_seed_changes_draws(self, quick_sampler):
        """Test that the base seed drives the chains."""
        other = SamplerConfig(chains=2, iterations=400, warmup=200, seed=12, workers=1)

        first = run_chains(standard_normal, 2, quick_sampler)
        second = run_chains(standard_normal, 2, other)

        np.testing.assert_array_equal(first.values[1], second.values[0])
        assert not np.array_equal(first.values[0], second.values[0])

    def test_generated_quantities(self, quick_sampler):
        """Test that generated quantities are stored per retained draw."""
        draws = run_chains(standard_normal, 2, quick_sampler, generated=FirstSquared(), names=("a", "b"))

        assert draws.generated_names == ("sq",)
        np.testing.assert_allclose(draws.column("sq"), draws.column("a") ** 2)
        names, values = draws.flat_generated("sq")
        assert names == ("sq",)
        assert values.shape == (400, 1)

    def test_parallel_matches_serial(self, small_spec, small_cells):
        """Test that worker processes reproduce the serial draws."""
        posterior = ModelPosterior(small_spec, small_cells)
        serial = SamplerConfig(chains=2, iterations=60, warmup=30, seed=3, workers=1, max_depth=5)
        parallel = SamplerConfig(chains=2, iterations=60, warmup=30, seed=3, workers=2, max_depth=5)

        first = run_chains(posterior, posterior.dimension, serial)
        second = run_chains(posterior, posterior.dimension, parallel)

        np.testing.assert_array_equal(first.values, second.values)

    def test_initialization_failure(self):
        """Test that a target without finite points cannot start."""
        config = SamplerConfig(chains=1, iterations=10, warmup=5, init_retries=3, workers=1)
        with pytest.raises(InitializationError, match="3 initialization attempts"):
            run_chains(nowhere, 2, config)

    def test_supplied_initial_values(self, quick_sampler):
        """Test that explicit initial values must have a finite density."""
        chain = NutsChain(nowhere, quick_sampler, np.random.default_rng(0))
        with pytest.raises(InitializationError):
            chain.initial_point(2, np.zeros(2))

    @pytest.mark.parametrize(("dimension", "names"), [(0, None), (2, ("a",))])
    def test_invalid_arguments(self, quick_sampler, dimension, names):
        """Test argument validation."""
        with pytest.raises(DomainError):
            run_chains(standard_normal, dimension, quick_sampler, names=names)


class TestPosteriorDraws:
    """Test cases for the draw container."""

    def test_column_and_flat(self):
        """Test column lookup and chain-ordered stacking."""
        values = np.arange(12, dtype=float).reshape(2, 3, 2)
        draws = PosteriorDraws(names=("a", "b"), values=values)

        assert draws.n_chains == 2
        assert draws.n_draws == 3
        assert draws.total == 6
        np.testing.assert_array_equal(draws.column("b"), [[1, 3, 5], [7, 9, 11]])
        np.testing.assert_array_equal(draws.flat()[:, 0], [0, 2, 4, 6, 8, 10])
        names, generated = draws.flat_generated()
        assert names == ()
        assert generated.shape == (6, 0)

    def test_unknown_column(self):
        """Test that unknown names raise KeyError."""
        draws = PosteriorDraws(names=("a",), values=np.zeros((1, 2, 1)))
        with pytest.raises(KeyError):
            draws.column("z")
