"""Configuration classes for the trafficbayes library."""

import dataclasses
import hashlib
import json
import os
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Self

from .exceptions import ConfigurationError

WORKERS_ENV_VAR = "TRAFFICBAYES_WORKERS"

InteractionPolicy = Literal["all-pairs", "none"] | tuple[tuple[str, str], ...]


def default_workers() -> int:
    """Worker count for parallel chains, read from ``TRAFFICBAYES_WORKERS`` (default 1)."""
    raw = os.environ.get(WORKERS_ENV_VAR, "1")
    try:
        workers = int(raw)
    except ValueError as e:
        msg = f"{WORKERS_ENV_VAR} must be an integer, got {raw!r}"
        raise ConfigurationError(msg) from e
    if workers < 1:
        msg = f"{WORKERS_ENV_VAR} must be at least 1, got {workers}"
        raise ConfigurationError(msg)
    return workers


@dataclass
class SchemaConfig:
    """
    Covariate schema as written in the ``[schema]`` table.

    Args:
        groups: Ordered mapping of 4-letter group code to cardinality, or ``"infer"``
            to take the cardinality from the distinct codes in the data
        interactions: ``"all-pairs"``, ``"none"`` or an explicit list of group pairs
        offset: Name of the exposure column

    """

    groups: dict[str, int | Literal["infer"]] = field(default_factory=dict)
    interactions: InteractionPolicy = "all-pairs"
    offset: str = "EXPR"

    def __post_init__(self) -> None:
        for code, cardinality in self.groups.items():
            if cardinality != "infer" and (not isinstance(cardinality, int) or cardinality < 2):  # noqa: PLR2004
                msg = f"Group {code} cardinality must be an integer >= 2 or 'infer', got {cardinality!r}"
                raise ConfigurationError(msg)
        if isinstance(self.interactions, list | tuple):
            self.interactions = tuple((str(a), str(b)) for a, b in self.interactions)
        elif self.interactions not in ("all-pairs", "none"):
            msg = f"interactions must be 'all-pairs', 'none' or a list of pairs, got {self.interactions!r}"
            raise ConfigurationError(msg)


@dataclass(frozen=True)
class PriorConfig:
    """
    Prior constants of the zero-truncated Poisson hierarchy.

    Args:
        grand_mean_loc: Location of the normal prior on the grand mean
        grand_mean_scale: Scale of the normal prior on the grand mean
        offset_scale: Scale of the normal prior on the exposure exponent
        main_loc: Log-SD location for main-effect batches
        main_tau_scale: Multiplier of the shared main-effect log-SD deviate
        main_eta_scale: Multiplier of the per-batch main-effect log-SD deviates
        inter_loc: Log-SD location for interaction batches
        inter_tau_scale: Multiplier of the shared interaction log-SD deviate
        inter_eta_scale: Multiplier of the per-batch interaction log-SD deviates
        cell_scale: Multiplier turning the cell-error scale parameter into an SD
        reference_group: Group whose reference level gets its own wider prior (None disables)
        reference_level: Dense 1-based level of the reference group (None = last level)
        reference_scale: Scale of the reference level's normal prior
        pin_offset: Fix the exposure exponent at 1 instead of estimating it

    """

    grand_mean_loc: float = -10.0
    grand_mean_scale: float = 3.0
    offset_scale: float = 1.0
    main_loc: float = -1.0
    main_tau_scale: float = 0.5
    main_eta_scale: float = 0.3
    inter_loc: float = -2.0
    inter_tau_scale: float = 0.5
    inter_eta_scale: float = 0.3
    cell_scale: float = 0.3
    reference_group: str | None = "CITY"
    reference_level: int | None = None
    reference_scale: float = 2.0
    pin_offset: bool = False

    def __post_init__(self) -> None:
        if self.inter_loc >= self.main_loc:
            msg = "Interaction log-SD location must be below the main-effect location"
            raise ConfigurationError(msg)
        for name in ("grand_mean_scale", "offset_scale", "cell_scale", "reference_scale"):
            if getattr(self, name) <= 0:
                msg = f"{name} must be positive"
                raise ConfigurationError(msg)


@dataclass
class SamplerConfig:
    """
    Configuration of the Hamiltonian Monte Carlo engine.

    Args:
        chains: Number of independent chains
        iterations: Iterations per chain, warmup included
        warmup: Warmup iterations per chain (discarded)
        target_accept: Dual-averaging target for the mean acceptance statistic
        max_depth: Maximum trajectory doubling depth
        divergence_threshold: Energy error above which a trajectory is divergent
        seed: Base seed; chain ``k`` uses ``seed + k``
        init_radius: Initial values are drawn uniform(-init_radius, init_radius)
        init_retries: Attempts to find a finite starting point per chain
        workers: Parallel chain processes (defaults to ``TRAFFICBAYES_WORKERS``)

    """

    chains: int = 4
    iterations: int = 2000
    warmup: int = 1000
    target_accept: float = 0.8
    max_depth: int = 10
    divergence_threshold: float = 1000.0
    seed: int = 0
    init_radius: float = 2.0
    init_retries: int = 100
    workers: int = field(default_factory=default_workers)

    def __post_init__(self) -> None:
        if self.chains < 1:
            raise ConfigurationError("chains must be at least 1")
        if self.warmup < 0:
            raise ConfigurationError("warmup must be nonnegative")
        if self.warmup >= self.iterations:
            msg = f"no retained draws: warmup ({self.warmup}) must be below iterations ({self.iterations})"
            raise ConfigurationError(msg)
        if not 0 < self.target_accept < 1:
            raise ConfigurationError("target_accept must lie in (0, 1)")
        if self.max_depth < 1:
            raise ConfigurationError("max_depth must be at least 1")

    @property
    def retained(self) -> int:
        """Post-warmup draws per chain."""
        return self.iterations - self.warmup


@dataclass
class CityConfig:
    """
    Synthetic city population model.

    Args:
        population: ``bernoulli``, ``point_mass``, ``gamma``, ``lognormal`` or ``schema``
        size: Number of roads
        probability: Per-period probability of at least one fatality (bernoulli)
        outcome: ``poisson`` (rate -ln(1-p)) or ``bernoulli`` (exact 0/1 outcomes)
        rate: Common rate for the point-mass population
        shape: Gamma shape
        gamma_rate: Gamma rate (mean = shape / gamma_rate)
        meanlog: Lognormal log-mean
        sdlog: Lognormal log-SD
        exposure_meanlog: Log-mean of road exposure (schema cities)
        exposure_sdlog: Log-SD of road exposure (schema cities)
        seed: Seed for the population draw

    """

    population: Literal["bernoulli", "point_mass", "gamma", "lognormal", "schema"] = "bernoulli"
    size: int = 100
    probability: float = 0.1
    outcome: Literal["poisson", "bernoulli"] = "poisson"
    rate: float = 0.0
    shape: float = 1.0
    gamma_rate: float = 10.0
    meanlog: float = -3.0
    sdlog: float = 1.0
    exposure_meanlog: float = 5.0
    exposure_sdlog: float = 1.0
    seed: int = 0


@dataclass
class SelectionConfig:
    """
    Triage rule choosing roads from before-period data.

    Args:
        rule: ``threshold``, ``top_m`` or ``eligible_threshold``
        threshold: Minimum before-period count for selection
        top_m: Number of roads selected by ``top_m``
        eligible: Group code to allowed dense levels for ``eligible_threshold``

    """

    rule: Literal["threshold", "top_m", "eligible_threshold"] = "threshold"
    threshold: int = 1
    top_m: int = 0
    eligible: dict[str, list[int]] = field(default_factory=dict)


@dataclass
class SimulationConfig:
    """
    Treatment applied by the ``simulate`` subcommand.

    Args:
        multiplier: Factor on the after-period rate of selected roads (1 = no policy effect)

    """

    multiplier: float = 1.0

    def __post_init__(self) -> None:
        if not self.multiplier > 0:
            msg = f"multiplier must be positive, got {self.multiplier}"
            raise ConfigurationError(msg)


@dataclass
class RobbinsConfig:
    """
    Robbins adjustment options.

    Args:
        years: Length of the before period used for per-year averaging
        isotonic: Replace raw rates with a weighted isotonic fit
        selected_column: Column flagging selected roads

    """

    years: int = 1
    isotonic: bool = False
    selected_column: str = "SELECTED"


@dataclass
class WeightsConfig:
    """
    Survey reweighting options.

    Args:
        smoothing: Constant added to numerator and denominator of the fatality probability
        form: ``ratio`` (ratio of smoothed weighted sums) or ``literal`` (sum of per-report ratios)

    """

    smoothing: float = 1.0
    form: Literal["ratio", "literal"] = "ratio"


@dataclass
class AnalysisConfig:
    """
    Options of the evaluative computations.

    Args:
        mirror_ratio: Fraction of the selected change the opposite unselected change must reach
        intervals: Central interval masses reported throughout
        naive_reduction: Naive before-after reduction to compare the adjusted reduction against
        population_share: Factor scaling sub-city totals to the whole city
        ppc_group: Group code used to filter holdout cells in the predictive check
        ppc_level: Original code of that group kept by the filter
        observation_noise: Fold the Poisson noise of the observed after-period count into the reduction

    """

    mirror_ratio: float = 0.5
    intervals: tuple[float, ...] = (0.5, 0.9, 0.95)
    naive_reduction: float | None = None
    population_share: float = 1.0
    ppc_group: str | None = None
    ppc_level: int | None = None
    observation_noise: bool = False

    def __post_init__(self) -> None:
        self.intervals = tuple(float(v) for v in self.intervals)
        if any(not 0 < v < 1 for v in self.intervals):
            raise ConfigurationError("interval masses must lie in (0, 1)")


@dataclass
class RunConfig:
    """
    Run-level options shared by every subcommand.

    Args:
        seed: Master seed
        before_periods: Period labels forming the before period
        after_periods: Period labels forming the after period
        holdout_period: Period withheld from fitting and used for the predictive check
        draw_format: ``csv`` or ``avro`` per-chain draw files

    """

    seed: int = 0
    before_periods: tuple[str, ...] = ("before",)
    after_periods: tuple[str, ...] = ("after",)
    holdout_period: str | None = None
    draw_format: Literal["csv", "avro"] = "csv"

    def __post_init__(self) -> None:
        self.before_periods = tuple(str(p) for p in self.before_periods)
        self.after_periods = tuple(str(p) for p in self.after_periods)
        if self.holdout_period is not None:
            self.holdout_period = str(self.holdout_period)
        if self.draw_format not in ("csv", "avro"):
            raise ConfigurationError("draw_format must be 'csv' or 'avro'")


@dataclass
class PipelineConfig:
    """All sections of a run configuration file."""

    schema: SchemaConfig = field(default_factory=SchemaConfig)
    model: PriorConfig = field(default_factory=PriorConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    city: CityConfig = field(default_factory=CityConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    robbins: RobbinsConfig = field(default_factory=RobbinsConfig)
    weights: WeightsConfig = field(default_factory=WeightsConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    run: RunConfig = field(default_factory=RunConfig)

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> Self:
        """
        Build a configuration from a parsed TOML document.

        Args:
            data: Mapping of section name to section table

        Returns:
            Validated configuration

        Raises:
            ConfigurationError: On unknown sections, unknown keys or invalid values

        """
        sections = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(sections)
        if unknown:
            msg = f"Unknown configuration sections: {sorted(unknown)}"
            raise ConfigurationError(msg)
        kwargs: dict[str, Any] = {}
        for name, table in data.items():
            section_type = _SECTION_TYPES[name]
            kwargs[name] = _build_section(section_type, name, table)
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        """Effective configuration as plain data (echoed into run manifests)."""
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Sha256 of the canonical JSON rendering of the effective configuration."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(canonical.encode()).hexdigest()


_SECTION_TYPES: dict[str, type] = {
    "schema": SchemaConfig,
    "model": PriorConfig,
    "sampler": SamplerConfig,
    "simulation": SimulationConfig,
    "city": CityConfig,
    "selection": SelectionConfig,
    "robbins": RobbinsConfig,
    "weights": WeightsConfig,
    "analysis": AnalysisConfig,
    "run": RunConfig,
}


def _build_section(section_type: type, name: str, table: Any) -> Any:
    if not isinstance(table, dict):
        msg = f"Section [{name}] must be a table"
        raise ConfigurationError(msg)
    allowed = {f.name for f in dataclasses.fields(section_type)}
    unknown = set(table) - allowed
    if unknown:
        msg = f"Unknown keys in [{name}]: {sorted(unknown)}"
        raise ConfigurationError(msg)
    try:
        return section_type(**table)
    except TypeError as e:
        msg = f"Invalid values in [{name}]: {e}"
        raise ConfigurationError(msg) from e


def load_config(path: str | Path | None) -> PipelineConfig:
    """
    Load a run configuration file.

    Args:
        path: TOML file, or None for all defaults

    Returns:
        Validated configuration

    Raises:
        ConfigurationError: If the file cannot be read, parsed or validated

    """
    if path is None:
        return PipelineConfig()
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        msg = f"Cannot read configuration {path}"
        raise ConfigurationError(msg) from e
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
        msg = f"Cannot parse configuration {path}: {e}"
        raise ConfigurationError(msg) from e
    return PipelineConfig.from_mapping(data)
