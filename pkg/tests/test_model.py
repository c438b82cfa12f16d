"""Tests for the zero-truncated Poisson hierarchical model."""

import math

import numpy as np
import pytest

from trafficbayes.config import PriorConfig
from trafficbayes.core import CovariateGroup, CovariateSchema, RoadRecord, TypeCell, aggregate_cells
from trafficbayes.exceptions import ConfigurationError, DomainError, TruncationViolationError
from trafficbayes.model import (
    ModelPosterior,
    ModelSpec,
    ParameterLayout,
    cell_rate,
    grad_log_density,
    log_density,
    prior_only_levels,
    realized_effects,
    truncated_poisson_logpmf,
    truncated_poisson_rng,
)


def random_cells(schema: CovariateSchema, n_cells: int, rng: np.random.Generator) -> list[TypeCell]:
    """Distinct random cells with positive counts and exposures."""
    subtypes: set[tuple[int, ...]] = set()
    while len(subtypes) < n_cells:
        subtypes.add(tuple(int(rng.integers(1, g.cardinality + 1)) for g in schema.groups))
    records = [
        RoadRecord(str(i), subtype, float(rng.uniform(1.0, 50.0)), int(rng.integers(1, 6)))
        for i, subtype in enumerate(sorted(subtypes))
    ]
    return aggregate_cells(records, schema)


def finite_difference(posterior: ModelPosterior, q: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.empty_like(q)
    for i in range(q.size):
        step = np.zeros_like(q)
        step[i] = h
        grad[i] = (posterior(q + step)[0] - posterior(q - step)[0]) / (2 * h)
    return grad


@pytest.fixture
def medium_schema():
    return CovariateSchema.all_pairs(
        [CovariateGroup("SIGN", 3), CovariateGroup("LGHT", 4), CovariateGroup("SURF", 4)]
    )


class TestTruncatedPoisson:
    """Test cases for the zero-truncated Poisson distribution."""

    def test_logpmf_value(self):
        """Test log P(X=2) at mu=1 against its closed form."""
        assert truncated_poisson_logpmf(2, 1.0) == pytest.approx(-1.234472, abs=1e-5)
        assert truncated_poisson_logpmf(2, 1.0) == pytest.approx(-1 - math.log(2) - math.log(1 - math.exp(-1)))

    @pytest.mark.parametrize("mu", [0.01, 0.1, 1.0, 5.0, 10.0])
    def test_normalization(self, mu):
        """Test that the pmf sums to 1 over the positive integers."""
        x = np.arange(1, 201)
        total = math.fsum(np.exp(truncated_poisson_logpmf(x, mu)))
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_tiny_rate(self):
        """Test that the pmf stays finite and concentrates on 1 for tiny rates."""
        assert truncated_poisson_logpmf(1, 1e-12) == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize(("x", "mu"), [(0, 1.0), (-1, 1.0), (1.5, 1.0), (1, 0.0), (1, -2.0)])
    def test_domain(self, x, mu):
        """Test that counts below 1 and nonpositive rates are rejected."""
        with pytest.raises(DomainError):
            truncated_poisson_logpmf(x, mu)

    @pytest.mark.parametrize("mu", [0.01, 0.5, 3.0])
    def test_rng_moments(self, mu):
        """Test that draws are positive with the truncated mean."""
        n = 200_000
        draws = truncated_poisson_rng(mu, np.random.default_rng(3), size=n)

        mean = mu / -math.expm1(-mu)
        variance = mean * (1 + mu - mean)
        assert draws.min() >= 1
        assert abs(draws.mean() - mean) < 4 * math.sqrt(variance / n)

    def test_rng_scalar_and_array(self):
        """Test output types for scalar and array rates."""
        value = truncated_poisson_rng(2.0, 1)
        array = truncated_poisson_rng(np.array([[0.001, 2.0], [7.0, 0.2]]), 1)

        assert isinstance(value, int)
        assert value >= 1
        assert array.shape == (2, 2)
        assert np.all(array >= 1)

    def test_rng_reproducible(self):
        """Test that equal seeds give equal draws."""
        first = truncated_poisson_rng(np.full(50, 0.3), np.random.default_rng(9))
        second = truncated_poisson_rng(np.full(50, 0.3), np.random.default_rng(9))
        np.testing.assert_array_equal(first, second)

    def test_rng_domain(self):
        """Test that nonpositive rates are rejected."""
        with pytest.raises(DomainError):
            truncated_poisson_rng(np.array([1.0, 0.0]), 1)


class TestModelSpec:
    """Test cases for ModelSpec and the parameter layout."""

    def test_dimension(self, small_spec):
        """Test the parameter count of the small model."""
        assert small_spec.batches == ("SIGN", "LGHT", "SIGN:LGHT")
        assert small_spec.fixed_dimension == 2 + 5 + 6 + 5 + 2 + 1
        assert small_spec.dimension(5) == 26

    def test_layout_names(self, small_spec):
        """Test coordinate names in vector order."""
        layout = ParameterLayout(small_spec, 2)

        assert layout.names[:4] == ("theta", "rho", "eta[SIGN][1]", "eta[SIGN][2]")
        assert "eta[SIGN:LGHT][6]" in layout.names
        assert layout.names[-3:] == ("eta_main[SIGN]", "eta_main[LGHT]", "eta_inter[SIGN:LGHT]")
        assert len(layout.names) == layout.dimension == small_spec.dimension(2)

    def test_reference_level(self, small_schema):
        """Test that the reference level gets its own slot."""
        spec = ModelSpec(small_schema, PriorConfig(reference_group="LGHT"))
        layout = ParameterLayout(spec, 1)

        assert spec.reference == (1, 3)
        assert "reference[LGHT][3]" in layout.names
        assert "eta[LGHT][3]" not in layout.names
        assert layout.dimension == spec.dimension(1)

        q = np.zeros(layout.dimension)
        q[layout.reference] = 1.7
        effects = realized_effects(q, spec, layout)
        np.testing.assert_allclose(effects.main[1], [0.0, 0.0, 1.7])

    def test_reference_group_absent(self, small_schema):
        """Test that a reference group missing from the schema disables the override."""
        assert ModelSpec(small_schema, PriorConfig(reference_group="CITY")).reference is None

    def test_reference_level_out_of_range(self, small_schema):
        """Test that an explicit reference level must exist."""
        with pytest.raises(ConfigurationError):
            ModelSpec(small_schema, PriorConfig(reference_group="SIGN", reference_level=3))

    @pytest.mark.parametrize("reference_group", [None, "LGHT"])
    def test_toml_round_trip(self, small_schema, reference_group):
        """Test persisting the model specification."""
        spec = ModelSpec(small_schema, PriorConfig(reference_group=reference_group, pin_offset=True))
        assert ModelSpec.from_toml(spec.to_toml()) == spec

    def test_layout_for_short_vector(self, small_spec):
        """Test that vectors shorter than the fixed terms are rejected."""
        with pytest.raises(DomainError):
            ParameterLayout.for_vector(small_spec, np.zeros(3))


class TestModelPosterior:
    """Test cases for the log posterior density."""

    def test_single_cell_likelihood(self):
        """Test the likelihood of one cell with count 1 and exposure 1 at the zero vector."""
        schema = CovariateSchema((CovariateGroup("SIGN", 2),))
        spec = ModelSpec(schema, PriorConfig(reference_group=None))
        cells = [TypeCell(0, (1,), (), 1, 1.0)]
        posterior = ModelPosterior(spec, cells)

        q = np.zeros(posterior.dimension)

        assert posterior.log_likelihood(q) == pytest.approx(-math.log(math.e - 1), abs=1e-6)
        assert posterior.cell_rates(q) == pytest.approx([1.0])

    def test_zero_count_rejected(self, small_spec):
        """Test that a zero cell cannot enter the truncated likelihood."""
        with pytest.raises(TruncationViolationError):
            ModelPosterior(small_spec, [TypeCell(0, (1, 1), (1,), 0, 3.0)])

    def test_wrong_vector_length(self, small_spec, small_cells):
        """Test that misshaped vectors are rejected."""
        posterior = ModelPosterior(small_spec, small_cells)
        with pytest.raises(DomainError):
            posterior(np.zeros(posterior.dimension + 1))

    def test_density_is_likelihood_plus_prior(self, small_spec, small_cells, rng):
        """Test that the density adds the likelihood and prior terms."""
        posterior = ModelPosterior(small_spec, small_cells)
        q = rng.normal(0.0, 0.5, posterior.dimension)

        logp, _ = posterior(q)

        assert logp == pytest.approx(posterior.log_likelihood(q) + posterior.log_prior(q))
        assert log_density(q, small_cells, small_spec) == pytest.approx(logp)

    @pytest.mark.parametrize(
        "priors",
        [
            PriorConfig(reference_group=None),
            PriorConfig(reference_group="LGHT"),
            PriorConfig(reference_group="SIGN", reference_level=1, pin_offset=True),
        ],
    )
    def test_gradient_matches_finite_differences(self, medium_schema, priors):
        """Test the analytic gradient against central differences at random points."""
        rng = np.random.default_rng(17)
        spec = ModelSpec(medium_schema, priors)
        cells = random_cells(medium_schema, 40, rng)
        posterior = ModelPosterior(spec, cells)

        for _ in range(5):
            q = rng.normal(0.0, 0.5, posterior.dimension)
            q[0] = rng.normal(-2.0, 0.5)
            _, grad = posterior(q)
            np.testing.assert_allclose(grad, finite_difference(posterior, q), rtol=1e-5, atol=1e-6)

    def test_gradient_in_small_rate_regime(self, small_spec, small_cells):
        """Test the gradient where rates are far below one."""
        posterior = ModelPosterior(small_spec, small_cells)
        q = np.zeros(posterior.dimension)
        q[0] = -30.0

        _, grad = posterior(q)

        assert np.all(np.isfinite(grad))
        np.testing.assert_allclose(grad, finite_difference(posterior, q), rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(grad, grad_log_density(q, small_cells, small_spec))

    def test_cell_rate_matches_posterior(self, small_spec, small_cells, rng):
        """Test that the single-cell rate agrees with the vectorized rates."""
        posterior = ModelPosterior(small_spec, small_cells)
        q = rng.normal(0.0, 0.5, posterior.dimension)

        rates = posterior.cell_rates(q)

        for cell in small_cells:
            assert cell_rate(q, cell, small_spec) == pytest.approx(rates[cell.cell_id])

    def test_cell_rate_needs_error(self, small_spec, small_cells):
        """Test that an unseen cell needs an explicit deviate."""
        q = np.zeros(small_spec.dimension(len(small_cells)))
        unseen = TypeCell(99, (2, 2), (5,), 1, 10.0)
        with pytest.raises(DomainError):
            cell_rate(q, unseen, small_spec)
        assert cell_rate(q, unseen, small_spec, cell_eta=0.0) == pytest.approx(1.0)

    def test_road_rates(self, small_spec, small_cells, rng):
        """Test that training types reuse their cell error and new types get a fresh one."""
        posterior = ModelPosterior(small_spec, small_cells)
        draws = rng.normal(0.0, 0.5, (3, posterior.dimension))
        design = posterior.road_design([small_cells[1].subtype, (2, 2)], [small_cells[1].exposure, 5.0])

        rates = posterior.road_rates(draws, design, np.random.default_rng(0))

        assert design.cell_index.tolist() == [1, -1]
        assert rates.shape == (3, 2)
        for s, q in enumerate(draws):
            assert rates[s, 0] == pytest.approx(posterior.cell_rates(q)[1])
        assert np.all(rates[:, 1] > 0)

    def test_road_design_rejects_bad_roads(self, small_spec, small_cells):
        """Test that roads outside the schema are rejected."""
        posterior = ModelPosterior(small_spec, small_cells)
        with pytest.raises(DomainError):
            posterior.road_design([(3, 1)], [1.0])
        with pytest.raises(DomainError):
            posterior.road_design([(1, 1)], [0.0])

    def test_generated_quantities(self, small_spec, small_cells, rng):
        """Test the streamed cell rates and batch SDs."""
        posterior = ModelPosterior(small_spec, small_cells)
        generated = posterior.generated_quantities()
        q = rng.normal(0.0, 0.5, posterior.dimension)

        values = generated(q)
        effects = posterior.effects(q)

        assert generated.names[:5] == tuple(f"mu[{j}]" for j in range(5))
        assert generated.names[5:9] == ("fpsd[SIGN]", "fpsd[LGHT]", "fpsd[SIGN:LGHT]", "fpsd[cell]")
        assert values.shape == (len(generated.names),)
        np.testing.assert_allclose(values[:5], posterior.cell_rates(q))
        assert values[6] == pytest.approx(np.std(effects.main[1], ddof=1))
        assert values[-1] == pytest.approx(effects.cell_sd)

    def test_prior_only_levels(self, small_spec, small_cells):
        """Test listing levels no training cell informs."""
        assert prior_only_levels(small_spec, small_cells) == [("SIGN:LGHT", 5)]
