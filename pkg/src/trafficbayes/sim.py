"""Synthetic cities with known fatality rates, triage selection and treatment effects."""

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any, Literal, Self

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from .config import CityConfig, SelectionConfig
from .core import (
    CategoryCodebook,
    CovariateSchema,
    RoadRecord,
    aggregate_cells,
    cell_index,
    interaction_levels,
)
from .exceptions import ConfigurationError, DomainError
from .model import ModelSpec, ParameterLayout, realized_effects

logger = logging.getLogger(__name__)

SeedLike = np.random.Generator | int | None


def _generator(rng: SeedLike) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


@dataclass(frozen=True)
class SimRoad:
    """
    One synthetic road.

    Args:
        road_id: Identifier; ids sort in road order
        rate: True expected fatalities per period
        subtype: Dense 1-based category index per group (schema cities only)
        exposure: Exposure (1 outside schema cities)

    """

    road_id: str
    rate: float
    subtype: tuple[int, ...] = ()
    exposure: float = 1.0


@dataclass(frozen=True)
class SimCity:
    """
    A synthetic city and the population model its rates came from.

    Args:
        roads: Roads in id order
        population: Population model tag
        outcome: ``poisson`` counts or exact ``bernoulli`` 0/1 outcomes with mean ``rate``
        schema: Covariate schema of schema-driven cities
        parameters: Parameter vector the rates were built from (schema cities)
        spec: Model specification of schema-driven cities

    """

    roads: tuple[SimRoad, ...]
    population: str
    outcome: Literal["poisson", "bernoulli"] = "poisson"
    schema: CovariateSchema | None = None
    parameters: NDArray[np.float64] | None = None
    spec: ModelSpec | None = None

    def __post_init__(self) -> None:
        for road in self.roads:
            if not road.rate >= 0:
                msg = f"Road {road.road_id}: rate must be nonnegative, got {road.rate}"
                raise DomainError(msg)

    def __len__(self) -> int:
        return len(self.roads)

    @property
    def rates(self) -> NDArray[np.float64]:
        return np.array([road.rate for road in self.roads], dtype=np.float64)

    @property
    def road_ids(self) -> list[str]:
        return [road.road_id for road in self.roads]

    @property
    def subtypes(self) -> list[tuple[int, ...]]:
        return [road.subtype for road in self.roads]

    @property
    def effective_schema(self) -> CovariateSchema:
        """The city's schema, or an empty one for covariate-free cities."""
        return self.schema if self.schema is not None else CovariateSchema(groups=())

    def codebook(self) -> CategoryCodebook:
        """Identity codebook: original codes equal dense levels."""
        schema = self.effective_schema
        return CategoryCodebook({g.code: list(range(1, g.cardinality + 1)) for g in schema.groups})

    def records(self, counts: Mapping[str, ArrayLike], selected: ArrayLike) -> list[RoadRecord]:
        """
        Core records of simulated periods.

        Args:
            counts: Period label to per-road counts
            selected: Per-road selection flags

        """
        flags = _aligned_flags(self, selected)
        records = []
        for period, values in counts.items():
            array = np.asarray(values, dtype=np.int64)
            if array.shape != (len(self),):
                msg = f"Period {period}: got {array.shape[0]} counts for {len(self)} roads"
                raise DomainError(msg)
            records.extend(
                RoadRecord(
                    road_id=road.road_id,
                    subtype=road.subtype,
                    exposure=road.exposure,
                    fatalities=int(count),
                    selected=bool(flag),
                    period=period,
                )
                for road, count, flag in zip(self.roads, array, flags, strict=True)
            )
        return records

    def ground_truth(self, selected: ArrayLike, effect: "TreatmentEffect") -> dict[str, Any]:
        """True rates, effect and selection, for the JSON sidecar of simulated data."""
        flags = _aligned_flags(self, selected)
        rates = self.rates
        truth: dict[str, Any] = {
            "population": self.population,
            "outcome": self.outcome,
            "multiplier": effect.multiplier,
            "expected_after_selected": float(np.sum(rates[flags]) * effect.multiplier),
            "expected_after_selected_untreated": float(np.sum(rates[flags])),
            "expected_total": float(rates.sum()),
            "roads": [
                {"road_id": road.road_id, "rate": road.rate, "selected": bool(flag)}
                for road, flag in zip(self.roads, flags, strict=True)
            ],
        }
        if self.parameters is not None and self.spec is not None:
            layout = ParameterLayout.for_vector(self.spec, self.parameters)
            truth["parameters"] = dict(zip(layout.names, self.parameters.tolist(), strict=True))
        return truth


@dataclass(frozen=True)
class SelectionPolicy:
    """
    Triage rule over before-period counts; ties are broken by lowest road position.

    Args:
        rule: ``threshold``, ``top_m`` or ``eligible_threshold``
        threshold: Minimum before-period count
        top_m: Number of roads selected by ``top_m``
        eligible: Group code to allowed dense levels (``eligible_threshold``)

    """

    rule: Literal["threshold", "top_m", "eligible_threshold"] = "threshold"
    threshold: int = 1
    top_m: int = 0
    eligible: Mapping[str, Sequence[int]] | None = None

    def __post_init__(self) -> None:
        if self.rule not in ("threshold", "top_m", "eligible_threshold"):
            msg = f"Unknown selection rule {self.rule!r}"
            raise ConfigurationError(msg)
        if self.rule == "top_m" and self.top_m < 1:
            raise ConfigurationError("top_m must be at least 1")
        if self.threshold < 0:
            raise ConfigurationError("threshold must be nonnegative")

    @classmethod
    def from_config(cls, config: SelectionConfig) -> Self:
        return cls(rule=config.rule, threshold=config.threshold, top_m=config.top_m, eligible=config.eligible)


@dataclass(frozen=True)
class TreatmentEffect:
    """Multiplier on the after-period rate of selected roads; 1 means no policy effect."""

    multiplier: float = 1.0

    def __post_init__(self) -> None:
        if not self.multiplier > 0:
            msg = f"Treatment multiplier must be positive, got {self.multiplier}"
            raise DomainError(msg)

    @property
    def null(self) -> bool:
        return self.multiplier == 1.0


def _road_id(position: int, size: int) -> str:
    return str(position).zfill(len(str(max(size - 1, 0))))


def _aligned_flags(city: SimCity, selected: ArrayLike | None) -> NDArray[np.bool_]:
    if selected is None:
        return np.zeros(len(city), dtype=bool)
    flags = np.asarray(selected, dtype=bool)
    if flags.shape != (len(city),):
        msg = f"Got {flags.size} selection flags for {len(city)} roads"
        raise DomainError(msg)
    return flags


def _check_city_config(config: CityConfig) -> None:
    if config.size < 1:
        msg = f"City size must be at least 1, got {config.size}"
        raise ConfigurationError(msg)
    if config.outcome not in ("poisson", "bernoulli"):
        msg = f"Unknown outcome mode {config.outcome!r}"
        raise ConfigurationError(msg)
    checks = {
        "bernoulli": (
            0 <= config.probability < 1 or (config.outcome == "bernoulli" and config.probability == 1),
            f"probability must lie in [0, 1), got {config.probability}",
        ),
        "point_mass": (config.rate >= 0, f"rate must be nonnegative, got {config.rate}"),
        "gamma": (
            config.shape > 0 and config.gamma_rate > 0,
            f"gamma shape and rate must be positive, got ({config.shape}, {config.gamma_rate})",
        ),
        "lognormal": (config.sdlog >= 0, f"sdlog must be nonnegative, got {config.sdlog}"),
        "schema": (config.exposure_sdlog >= 0, f"exposure_sdlog must be nonnegative, got {config.exposure_sdlog}"),
    }
    if config.population not in checks:
        msg = f"Unknown population model {config.population!r}"
        raise ConfigurationError(msg)
    valid, msg = checks[config.population]
    if not valid:
        raise ConfigurationError(msg)
    if config.outcome == "bernoulli" and config.population != "bernoulli":
        raise ConfigurationError("Exact bernoulli outcomes need the bernoulli population")


def draw_schema_parameters(spec: ModelSpec, n_cells: int, rng: SeedLike = None) -> NDArray[np.float64]:
    """
    Draw one parameter vector from the model's priors.

    Args:
        spec: Model specification
        n_cells: Number of road-type cells carrying an error term
        rng: Generator or seed

    Returns:
        Vector laid out as ``ParameterLayout(spec, n_cells)``

    """
    generator = _generator(rng)
    layout = ParameterLayout(spec, n_cells)
    priors = spec.priors
    q = generator.standard_normal(layout.dimension)
    q[0] = generator.normal(priors.grand_mean_loc, priors.grand_mean_scale)
    q[1] = 1.0 if priors.pin_offset else generator.normal(0.0, priors.offset_scale)
    if layout.reference is not None:
        q[layout.reference] = generator.normal(0.0, priors.reference_scale)
    scales = [layout.log_ss_main, layout.log_ss_inter, layout.log_sigma_cell]
    q[scales] = np.log(np.abs(generator.standard_normal(len(scales))))
    return q


def schema_rates(
    spec: ModelSpec,
    q: NDArray[np.float64],
    subtypes: Sequence[Sequence[int]],
    exposures: ArrayLike,
    cells: Sequence[int],
) -> NDArray[np.float64]:
    """
    exp of the model's linear predictor for roads with their own exposure.

    Args:
        spec: Model specification
        q: Parameter vector
        subtypes: Subtype vector per road
        exposures: Exposure per road
        cells: Position of each road's cell error in ``q``'s cell block

    """
    effects = realized_effects(np.asarray(q, dtype=np.float64), spec)
    schema = spec.schema
    log_exposure = np.log(np.asarray(exposures, dtype=np.float64))
    lam = np.full(len(subtypes), effects.theta)
    for k in range(len(schema.groups)):
        lam += effects.main[k][np.array([s[k] for s in subtypes], dtype=np.intp) - 1]
    levels = np.array([interaction_levels(s, schema) for s in subtypes], dtype=np.intp).reshape(
        len(subtypes), len(schema.interactions)
    )
    for pair in range(len(schema.interactions)):
        lam += effects.inter[pair][levels[:, pair] - 1]
    lam += effects.cell[np.asarray(cells, dtype=np.intp)] + effects.rho * log_exposure
    with np.errstate(over="ignore"):
        return np.exp(lam)


def _schema_city(config: CityConfig, spec: ModelSpec, generator: np.random.Generator) -> SimCity:
    schema = spec.schema
    levels = np.zeros((config.size, len(schema.groups)), dtype=np.int64)
    for k, group in enumerate(schema.groups):
        levels[:, k] = generator.integers(1, group.cardinality + 1, size=config.size)
    subtypes = [tuple(int(v) for v in row) for row in levels]
    exposures = generator.lognormal(config.exposure_meanlog, config.exposure_sdlog, size=config.size)
    placeholders = [
        RoadRecord(road_id=str(i), subtype=s, exposure=float(e), fatalities=0)
        for i, (s, e) in enumerate(zip(subtypes, exposures, strict=True))
    ]
    lookup = cell_index(aggregate_cells(placeholders, schema))
    q = draw_schema_parameters(spec, len(lookup), generator)
    rates = schema_rates(spec, q, subtypes, exposures, [lookup[s].cell_id for s in subtypes])
    if not np.all(np.isfinite(rates)):
        logger.warning("Schema city drew non-finite rates; they are capped at the float maximum")
        rates = np.nan_to_num(rates, posinf=np.finfo(np.float64).max)
    roads = tuple(
        SimRoad(road_id=_road_id(i, config.size), rate=float(r), subtype=s, exposure=float(e))
        for i, (r, s, e) in enumerate(zip(rates, subtypes, exposures, strict=True))
    )
    return SimCity(roads=roads, population="schema", schema=schema, parameters=q, spec=spec)


def generate_city(config: CityConfig, spec: ModelSpec | None = None, rng: SeedLike = None) -> SimCity:
    """
    Draw a synthetic city.

    Populations:
      - ``bernoulli``: every road has P(X ≥ 1) = ``probability``; Poisson outcomes use
        the rate −ln(1 − p), exact bernoulli outcomes use mean p
      - ``point_mass``: every road has rate ``rate``
      - ``gamma``: rates from gamma(``shape``, ``gamma_rate``), mean shape / rate
      - ``lognormal``: rates from lognormal(``meanlog``, ``sdlog``)
      - ``schema``: uniform subtypes, lognormal exposures and rates from the
        model's linear predictor with parameters drawn from ``spec``'s priors

    Args:
        config: Population model and size
        spec: Model specification (schema cities)
        rng: Generator or seed; ``config.seed`` when None

    Raises:
        ConfigurationError: On invalid distribution parameters, or a schema city without ``spec``

    """
    _check_city_config(config)
    generator = _generator(config.seed if rng is None else rng)
    if config.population == "schema":
        if spec is None:
            raise ConfigurationError("A schema-driven city needs a model specification")
        city = _schema_city(config, spec, generator)
    else:
        size = config.size
        if config.population == "bernoulli":
            value = config.probability if config.outcome == "bernoulli" else -np.log1p(-config.probability)
            rates = np.full(size, value)
        elif config.population == "point_mass":
            rates = np.full(size, config.rate)
        elif config.population == "gamma":
            rates = generator.gamma(config.shape, 1.0 / config.gamma_rate, size=size)
        else:
            rates = generator.lognormal(config.meanlog, config.sdlog, size=size)
        city = SimCity(
            roads=tuple(SimRoad(road_id=_road_id(i, size), rate=float(r)) for i, r in enumerate(rates)),
            population=config.population,
            outcome=config.outcome,
        )
    logger.debug("Generated %s city of %d roads, total rate %.4g", city.population, len(city), city.rates.sum())
    return city


def simulate_period(
    city: SimCity, effect: TreatmentEffect, selected: ArrayLike | None = None, rng: SeedLike = None
) -> NDArray[np.int64]:
    """
    Fatality counts of one period.

    Road i gets rate μ_i·multiplier when selected and μ_i otherwise; exact
    bernoulli cities draw 0/1 outcomes with that mean (capped at 1).

    Raises:
        DomainError: If the flags do not align with the roads

    """
    flags = _aligned_flags(city, selected)
    generator = _generator(rng)
    rates = city.rates * np.where(flags, effect.multiplier, 1.0)
    if city.outcome == "bernoulli":
        return (generator.random(len(city)) < np.minimum(rates, 1.0)).astype(np.int64)
    return generator.poisson(rates).astype(np.int64)


def select_roads(
    before_counts: ArrayLike,
    policy: SelectionPolicy,
    subtypes: Sequence[Sequence[int]] | None = None,
    schema: CovariateSchema | None = None,
) -> NDArray[np.bool_]:
    """
    Selection flags from before-period counts (and covariates for ``eligible_threshold``).

    Raises:
        DomainError: On negative counts, or an eligibility rule without subtypes and schema

    """
    counts = np.asarray(before_counts, dtype=np.int64)
    if np.any(counts < 0):
        raise DomainError("Before-period counts must be nonnegative")
    if policy.rule == "threshold":
        return counts >= policy.threshold
    if policy.rule == "top_m":
        if policy.top_m >= counts.size:
            if policy.top_m > counts.size:
                logger.warning("top_m=%d exceeds the %d roads; selecting all", policy.top_m, counts.size)
            return np.ones(counts.size, dtype=bool)
        order = np.lexsort((np.arange(counts.size), -counts))
        flags = np.zeros(counts.size, dtype=bool)
        flags[order[: policy.top_m]] = True
        return flags
    if subtypes is None or schema is None:
        raise DomainError("Eligibility selection needs road subtypes and a schema")
    eligible = np.ones(counts.size, dtype=bool)
    for code, levels in (policy.eligible or {}).items():
        k = schema.position(code)
        allowed = set(levels)
        eligible &= np.array([s[k] in allowed for s in subtypes], dtype=bool)
    return eligible & (counts >= policy.threshold)


def expected_toy_outcome(size: int, probability: float, multiplier: float = 1.0) -> tuple[float, float, float, float]:
    """
    Expected (B_s, A_s, B_u, A_u) of the city whose roads have one fatality with probability p.

    Selecting every road with a before-period fatality selects n·p roads; the
    counterfactual totals describe those roads had they not been selected.

    Raises:
        DomainError: If ``size`` < 1, p outside (0, 1] or a nonpositive multiplier

    """
    if size < 1 or not 0 < probability <= 1 or not multiplier > 0:
        msg = f"Invalid toy city (size={size}, p={probability}, multiplier={multiplier})"
        raise DomainError(msg)
    selected = size * probability
    return selected, selected * probability * multiplier, 0.0, selected * probability


def replicate_before_after(
    config: CityConfig,
    policy: SelectionPolicy,
    effect: TreatmentEffect,
    replications: int,
    seed: int = 0,
    spec: ModelSpec | None = None,
) -> pd.DataFrame:
    """
    Monte Carlo before/after totals on selected and unselected roads.

    Replication r uses ``numpy.random.default_rng(seed + r)`` for the city, both
    periods and nothing else, so any replication can be rerun on its own.

    Returns:
        One row per replication: ``replication``, ``selected``, ``roads``,
        ``before_selected``, ``after_selected``, ``before_unselected``, ``after_unselected``

    """
    if replications < 1:
        raise DomainError("replications must be at least 1")
    rows = []
    for r in range(replications):
        generator = np.random.default_rng(seed + r)
        city = generate_city(config, spec, generator)
        before = simulate_period(city, TreatmentEffect(), None, generator)
        flags = select_roads(before, policy, city.subtypes, city.schema)
        after = simulate_period(city, effect, flags, generator)
        rows.append(
            {
                "replication": r,
                "selected": int(flags.sum()),
                "roads": len(city),
                "before_selected": int(before[flags].sum()),
                "after_selected": int(after[flags].sum()),
                "before_unselected": int(before[~flags].sum()),
                "after_unselected": int(after[~flags].sum()),
            }
        )
    return pd.DataFrame(rows)
