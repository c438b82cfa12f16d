"""Zero-truncated Poisson hierarchical log-linear model over road-type cells."""

import logging
import threading
import tomllib
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from typing import Any, Self

import numpy as np
import tomli_w
from cachetools import LRUCache
from numpy.typing import NDArray
from scipy import special, stats

from .config import PriorConfig, SchemaConfig
from .core import CategoryCodebook, CovariateSchema, TypeCell, interaction_levels, resolve_schema
from .exceptions import ConfigurationError, DomainError, SchemaViolationError, TruncationViolationError

logger = logging.getLogger(__name__)

CELL_BATCH = "cell"

# Below this log rate, log(1 - exp(-mu)) is replaced by its expansion log(mu) - mu/2.
_SMALL_LOG_RATE = -20.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
_LOG_2 = np.log(2.0)
# Rejection sampling is used while the expected number of Poisson draws per success stays small.
_REJECTION_FLOOR = 0.05

_DESIGN_CACHE_SIZE = 32


def _normal_logpdf(x: Any, loc: float = 0.0, scale: float = 1.0) -> float:
    z = (np.asarray(x, dtype=np.float64) - loc) / scale
    return float(np.sum(-0.5 * z * z - np.log(scale) - _HALF_LOG_2PI))


def truncated_poisson_logpmf(x: Any, mu: Any) -> Any:
    """
    Log probability of a zero-truncated Poisson count.

    Evaluates ``x·log μ − μ − log x! − log(1 − e^{−μ})``; the last term uses
    ``expm1`` so the result stays accurate as μ approaches 0.

    Args:
        x: Count(s), each at least 1
        mu: Rate(s), each positive

    Returns:
        Log probability, scalar or array following numpy broadcasting

    Raises:
        DomainError: If any count is below 1 or any rate is not positive

    """
    x_arr = np.asarray(x)
    mu_arr = np.asarray(mu, dtype=np.float64)
    if np.any(x_arr < 1) or np.any(x_arr != np.floor(x_arr)):
        msg = f"Truncated Poisson support is the positive integers, got x={x}"
        raise DomainError(msg)
    if not np.all(mu_arr > 0):
        msg = f"Truncated Poisson rate must be positive, got mu={mu}"
        raise DomainError(msg)
    x_f = x_arr.astype(np.float64)
    result = x_f * np.log(mu_arr) - mu_arr - special.gammaln(x_f + 1.0) - np.log(-np.expm1(-mu_arr))
    return result[()] if isinstance(result, np.ndarray) and result.ndim == 0 else result


def truncated_poisson_rng(
    mu: Any, rng: np.random.Generator | int | None = None, size: int | tuple[int, ...] | None = None
) -> Any:
    """
    Draw zero-truncated Poisson counts.

    Ordinary Poisson draws are repeated until nonzero. Rates below a small floor,
    where that loop would need hundreds of attempts, are drawn by inverting the
    Poisson CDF above its zero mass instead; both give the same distribution.

    Args:
        mu: Positive rate(s)
        rng: Generator or seed
        size: Output shape when ``mu`` is a scalar

    Returns:
        A positive integer, or an integer array

    Raises:
        DomainError: If any rate is not positive

    """
    generator = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    mu_arr = np.asarray(mu, dtype=np.float64)
    if not np.all(mu_arr > 0):
        msg = f"Truncated Poisson rate must be positive, got mu={mu}"
        raise DomainError(msg)
    scalar = size is None and mu_arr.ndim == 0
    rates = np.broadcast_to(mu_arr, size if size is not None else mu_arr.shape).ravel()
    draws = np.zeros(rates.shape, dtype=np.int64)

    small = rates < _REJECTION_FLOOR
    if np.any(small):
        tail = -np.expm1(-rates[small]) * (1.0 - generator.random(int(small.sum())))
        draws[small] = np.maximum(stats.poisson.ppf(1.0 - tail, rates[small]), 1).astype(np.int64)

    pending = np.flatnonzero(~small)
    while pending.size:
        draws[pending] = generator.poisson(rates[pending])
        pending = pending[draws[pending] == 0]

    if scalar:
        return int(draws[0])
    return draws.reshape(size if size is not None else mu_arr.shape)


@dataclass(frozen=True)
class ModelSpec:
    """
    Schema plus prior constants of the hierarchical model.

    The reference-level override applies when ``priors.reference_group`` names
    a schema group; otherwise every batch is scaled by its own SD.

    Args:
        schema: Covariate schema (one effect batch per group and per interaction)
        priors: Prior constants

    """

    schema: CovariateSchema
    priors: PriorConfig = field(default_factory=PriorConfig)

    def __post_init__(self) -> None:
        group = self.priors.reference_group
        if group is not None and group in self.schema.codes:
            cardinality = self.schema.groups[self.schema.position(group)].cardinality
            level = self.priors.reference_level
            if level is not None and not 1 <= level <= cardinality:
                msg = f"Reference level {level} outside 1..{cardinality} of group {group}"
                raise ConfigurationError(msg)
        elif group is not None:
            logger.debug("Reference group %s not in schema; no reference-level override", group)

    @property
    def reference(self) -> tuple[int, int] | None:
        """(group position, 1-based level) of the separately-priored level, if any."""
        group = self.priors.reference_group
        if group is None or group not in self.schema.codes:
            return None
        position = self.schema.position(group)
        level = self.priors.reference_level or self.schema.groups[position].cardinality
        return position, level

    @property
    def batches(self) -> tuple[str, ...]:
        """Effect batch names: group codes, then ``A:B`` for each interaction."""
        return (*self.schema.codes, *(f"{a}:{b}" for a, b in self.schema.interactions))

    @property
    def fixed_dimension(self) -> int:
        """Parameter count excluding the per-cell errors."""
        groups = len(self.schema.groups)
        pairs = len(self.schema.interactions)
        return 2 + sum(self.schema.cardinalities) + sum(self.schema.interaction_cardinalities()) + 5 + groups + pairs

    def dimension(self, n_cells: int) -> int:
        """Total unconstrained dimension for a training set of ``n_cells`` cells."""
        return self.fixed_dimension + n_cells

    def to_toml(self) -> str:
        """Render as a TOML document with ``[schema]`` and ``[model]`` tables."""
        schema_table: dict[str, Any] = {
            "groups": {g.code: g.cardinality for g in self.schema.groups},
            "interactions": [list(pair) for pair in self.schema.interactions],
            "offset": self.schema.offset_name,
        }
        model_table = {k: v for k, v in asdict(self.priors).items() if v is not None}
        if self.priors.reference_group is None:
            model_table["reference_group"] = ""
        return tomli_w.dumps({"schema": schema_table, "model": model_table})

    @classmethod
    def from_toml(cls, text: str) -> Self:
        """Restore a spec written by ``to_toml``."""
        data = tomllib.loads(text)
        schema_config = SchemaConfig(**data["schema"])
        codebook = CategoryCodebook({code: [] for code in schema_config.groups})
        schema = resolve_schema(schema_config, codebook)
        model_table = dict(data.get("model", {}))
        if model_table.get("reference_group") == "":
            model_table["reference_group"] = None
        return cls(schema=schema, priors=PriorConfig(**model_table))


class ParameterLayout:
    """
    Positions of every block inside the flat unconstrained parameter vector.

    Order: grand mean, offset exponent, main-effect deviates per group (the
    reference group's block omits its reference level), the reference level,
    interaction deviates per pair, per-cell deviates, the two shared log-SD
    deviates, the three log-scale hierarchy SDs, then the per-batch log-SD
    deviates for groups and for pairs.
    """

    def __init__(self, spec: ModelSpec, n_cells: int) -> None:
        self.spec = spec
        self.n_cells = n_cells
        reference = spec.reference
        position = 2
        self.main: list[slice] = []
        for k, group in enumerate(spec.schema.groups):
            length = group.cardinality - (1 if reference is not None and reference[0] == k else 0)
            self.main.append(slice(position, position + length))
            position += length
        self.reference: int | None = None
        if reference is not None:
            self.reference = position
            position += 1
        self.inter: list[slice] = []
        for cardinality in spec.schema.interaction_cardinalities():
            self.inter.append(slice(position, position + cardinality))
            position += cardinality
        self.cell = slice(position, position + n_cells)
        position += n_cells
        self.tau_main, self.tau_inter = position, position + 1
        self.log_ss_main, self.log_ss_inter, self.log_sigma_cell = position + 2, position + 3, position + 4
        position += 5
        self.eta_main = slice(position, position + len(spec.schema.groups))
        position += len(spec.schema.groups)
        self.eta_inter = slice(position, position + len(spec.schema.interactions))
        position += len(spec.schema.interactions)
        self.dimension = position

    @property
    def names(self) -> tuple[str, ...]:
        """Coordinate names in vector order."""
        names = ["theta", "rho"]
        reference = self.spec.reference
        for k, group in enumerate(self.spec.schema.groups):
            levels = list(range(1, group.cardinality + 1))
            if reference is not None and reference[0] == k:
                levels = [v for v in levels if v != reference[1]]
            names.extend(f"eta[{group.code}][{v}]" for v in levels)
        if reference is not None:
            code = self.spec.schema.groups[reference[0]].code
            names.append(f"reference[{code}][{reference[1]}]")
        for batch, cardinality in zip(
            self.spec.batches[len(self.spec.schema.groups) :], self.spec.schema.interaction_cardinalities(), strict=True
        ):
            names.extend(f"eta[{batch}][{v}]" for v in range(1, cardinality + 1))
        names.extend(f"eta[{CELL_BATCH}][{j}]" for j in range(self.n_cells))
        names.extend(["tau_main", "tau_inter", "log_sigma_sigma_main", "log_sigma_sigma_inter", "log_sigma_cell"])
        names.extend(f"eta_main[{code}]" for code in self.spec.schema.codes)
        names.extend(f"eta_inter[{a}:{b}]" for a, b in self.spec.schema.interactions)
        return tuple(names)

    @classmethod
    def for_vector(cls, spec: ModelSpec, q: NDArray[np.float64]) -> Self:
        """Layout of a vector, inferring the cell count from its length."""
        n_cells = len(q) - spec.fixed_dimension
        if n_cells < 0:
            msg = f"Parameter vector of length {len(q)} is shorter than the model's {spec.fixed_dimension} fixed terms"
            raise DomainError(msg)
        return cls(spec, n_cells)


@dataclass(frozen=True)
class Effects:
    """Transformed parameters of one draw."""

    theta: float
    rho: float
    sigma_main: NDArray[np.float64]
    sigma_inter: NDArray[np.float64]
    cell_sd: float
    main: list[NDArray[np.float64]]
    inter: list[NDArray[np.float64]]
    cell: NDArray[np.float64]


def realized_effects(q: NDArray[np.float64], spec: ModelSpec, layout: ParameterLayout | None = None) -> Effects:
    """
    Assemble the realized effects of a parameter vector.

    Batch SDs follow ``exp(loc + a·τ + b·σσ·η_batch)``; coefficients are the
    SD times the standard-normal deviates, except the reference level which
    is used as stored.
    """
    layout = layout or ParameterLayout.for_vector(spec, q)
    priors = spec.priors
    ss_main = np.exp(q[layout.log_ss_main])
    ss_inter = np.exp(q[layout.log_ss_inter])
    sigma_main = np.exp(
        priors.main_loc
        + priors.main_tau_scale * q[layout.tau_main]
        + priors.main_eta_scale * ss_main * q[layout.eta_main]
    )
    sigma_inter = np.exp(
        priors.inter_loc
        + priors.inter_tau_scale * q[layout.tau_inter]
        + priors.inter_eta_scale * ss_inter * q[layout.eta_inter]
    )
    reference = spec.reference
    main = []
    for k, block in enumerate(layout.main):
        alpha = sigma_main[k] * q[block]
        if reference is not None and reference[0] == k and layout.reference is not None:
            alpha = np.insert(alpha, reference[1] - 1, q[layout.reference])
        main.append(alpha)
    inter = [sigma_inter[pair] * q[block] for pair, block in enumerate(layout.inter)]
    cell_sd = priors.cell_scale * float(np.exp(q[layout.log_sigma_cell]))
    return Effects(
        theta=float(q[0]),
        rho=1.0 if priors.pin_offset else float(q[1]),
        sigma_main=sigma_main,
        sigma_inter=sigma_inter,
        cell_sd=cell_sd,
        main=main,
        inter=inter,
        cell=cell_sd * q[layout.cell],
    )


@dataclass(frozen=True)
class CompiledDesign:
    """Index arrays and data vectors of a training set, 0-based levels."""

    main_levels: NDArray[np.intp]
    inter_levels: NDArray[np.intp]
    counts: NDArray[np.float64]
    log_exposure: NDArray[np.float64]
    log_factorial: NDArray[np.float64]


_DESIGN_CACHE = LRUCache[tuple[ModelSpec, tuple[TypeCell, ...]], CompiledDesign](maxsize=_DESIGN_CACHE_SIZE)
_DESIGN_CACHE_LOCK = threading.Lock()


def compile_design(spec: ModelSpec, cells: tuple[TypeCell, ...]) -> CompiledDesign:
    """
    Build (or fetch from the LRU cache) the design arrays of a training set.

    Raises:
        TruncationViolationError: If any cell has a zero count

    """
    key = (spec, cells)
    with _DESIGN_CACHE_LOCK:
        cached = _DESIGN_CACHE.get(key)
    if cached is not None:
        return cached

    zero = [cell.cell_id for cell in cells if cell.count < 1]
    if zero:
        msg = f"Cells {zero[:10]} have zero fatalities; the truncated likelihood requires counts of at least 1"
        raise TruncationViolationError(msg)
    n_groups = len(spec.schema.groups)
    n_pairs = len(spec.schema.interactions)
    main_levels = np.array([cell.subtype for cell in cells], dtype=np.intp).reshape(len(cells), n_groups) - 1
    inter_levels = (
        np.array([interaction_levels(cell.subtype, spec.schema) for cell in cells], dtype=np.intp).reshape(
            len(cells), n_pairs
        )
        - 1
    )
    counts = np.array([cell.count for cell in cells], dtype=np.float64)
    design = CompiledDesign(
        main_levels=main_levels,
        inter_levels=inter_levels,
        counts=counts,
        log_exposure=np.log(np.array([cell.exposure for cell in cells], dtype=np.float64)),
        log_factorial=special.gammaln(counts + 1.0),
    )
    with _DESIGN_CACHE_LOCK:
        _DESIGN_CACHE[key] = design
    return design


def _log_predictor(effects: Effects, main_levels: NDArray[np.intp], inter_levels: NDArray[np.intp]) -> Any:
    lam = effects.theta + np.zeros(main_levels.shape[0])
    for k, alpha in enumerate(effects.main):
        lam = lam + alpha[main_levels[:, k]]
    for pair, beta in enumerate(effects.inter):
        lam = lam + beta[inter_levels[:, pair]]
    return lam


def _log_normalizer(lam: NDArray[np.float64], mu: NDArray[np.float64]) -> NDArray[np.float64]:
    """log(1 − e^{−μ}) for μ = e^λ."""
    small = lam < _SMALL_LOG_RATE
    out = np.empty_like(lam)
    out[small] = lam[small] - 0.5 * mu[small]
    out[~small] = np.log(-np.expm1(-mu[~small]))
    return out


def _truncated_score(lam: NDArray[np.float64], mu: NDArray[np.float64]) -> NDArray[np.float64]:
    """μ / (1 − e^{−μ}), the derivative of μ + log(1 − e^{−μ}) in λ."""
    small = lam < _SMALL_LOG_RATE
    out = np.empty_like(lam)
    out[small] = 1.0 + 0.5 * mu[small]
    out[~small] = mu[~small] / -np.expm1(-mu[~small])
    return out


@dataclass(frozen=True)
class RoadDesign:
    """Index arrays for predicting rates on arbitrary roads or cells."""

    main_levels: NDArray[np.intp]
    inter_levels: NDArray[np.intp]
    log_exposure: NDArray[np.float64]
    cell_index: NDArray[np.intp]


class ModelPosterior:
    """
    Log posterior density of the model on a fixed training set.

    Calling the instance returns ``(log density, gradient)`` in the unconstrained
    parameterization. The design is compiled once; instances are picklable so
    chains can run in worker processes.

    Args:
        spec: Model specification
        cells: Training cells, every count at least 1

    """

    def __init__(self, spec: ModelSpec, cells: Sequence[TypeCell]) -> None:
        self.spec = spec
        self.cells = tuple(cells)
        self.design = compile_design(spec, self.cells)
        self.layout = ParameterLayout(spec, len(self.cells))
        self._cell_lookup = {cell.subtype: position for position, cell in enumerate(self.cells)}

    @property
    def dimension(self) -> int:
        """Length of the parameter vector."""
        return self.layout.dimension

    @property
    def names(self) -> tuple[str, ...]:
        """Coordinate names."""
        return self.layout.names

    def _check(self, q: NDArray[np.float64]) -> NDArray[np.float64]:
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dimension,):
            msg = f"Expected a parameter vector of length {self.dimension}, got shape {q.shape}"
            raise DomainError(msg)
        return q

    def effects(self, q: NDArray[np.float64]) -> Effects:
        """Transformed parameters of ``q``."""
        return realized_effects(self._check(q), self.spec, self.layout)

    def log_rates(self, q: NDArray[np.float64]) -> NDArray[np.float64]:
        """log μ_j of every training cell."""
        effects = self.effects(q)
        design = self.design
        lam = _log_predictor(effects, design.main_levels, design.inter_levels)
        return lam + effects.cell + effects.rho * design.log_exposure

    def cell_rates(self, q: NDArray[np.float64]) -> NDArray[np.float64]:
        """μ_j of every training cell."""
        with np.errstate(over="ignore"):
            return np.exp(self.log_rates(q))

    def cell_log_likelihood(self, q: NDArray[np.float64]) -> NDArray[np.float64]:
        """Truncated-Poisson log-likelihood term of every training cell."""
        lam = self.log_rates(q)
        with np.errstate(over="ignore", invalid="ignore"):
            mu = np.exp(lam)
            return self.design.counts * lam - mu - _log_normalizer(lam, mu) - self.design.log_factorial

    def log_likelihood(self, q: NDArray[np.float64]) -> float:
        """Sum of the cell log-likelihood terms."""
        return float(np.sum(self.cell_log_likelihood(q)))

    def log_prior(self, q: NDArray[np.float64]) -> float:
        """
        Log prior density, including the log-Jacobian of the three log-scale SDs.

        The SDs carry half-normal(0, 1) priors and are sampled as their logarithms.
        """
        q = self._check(q)
        layout = self.layout
        priors = self.spec.priors
        total = _normal_logpdf(q[0], priors.grand_mean_loc, priors.grand_mean_scale)
        total += _normal_logpdf(q[1], 0.0, priors.offset_scale)
        for block in (*layout.main, *layout.inter, layout.cell, layout.eta_main, layout.eta_inter):
            total += _normal_logpdf(q[block])
        total += _normal_logpdf(q[[layout.tau_main, layout.tau_inter]])
        if layout.reference is not None:
            total += _normal_logpdf(q[layout.reference], 0.0, priors.reference_scale)
        for u in q[[layout.log_ss_main, layout.log_ss_inter, layout.log_sigma_cell]]:
            total += _LOG_2 + _normal_logpdf(np.exp(u)) + u
        return float(total)

    def __call__(self, q: NDArray[np.float64]) -> tuple[float, NDArray[np.float64]]:
        """Log posterior density and its gradient."""
        q = self._check(q)
        layout = self.layout
        priors = self.spec.priors
        design = self.design
        effects = realized_effects(q, self.spec, layout)

        lam = _log_predictor(effects, design.main_levels, design.inter_levels)
        lam = lam + effects.cell + effects.rho * design.log_exposure
        with np.errstate(over="ignore", invalid="ignore"):
            mu = np.exp(lam)
            cell_ll = design.counts * lam - mu - _log_normalizer(lam, mu) - design.log_factorial
            score = design.counts - _truncated_score(lam, mu)
        logp = float(np.sum(cell_ll)) + self.log_prior(q)

        grad = np.zeros(layout.dimension)
        grad[0] = np.sum(score) - (q[0] - priors.grand_mean_loc) / priors.grand_mean_scale**2
        grad[1] = -q[1] / priors.offset_scale**2
        if not priors.pin_offset:
            grad[1] += score @ design.log_exposure

        reference = self.spec.reference
        main_sums = np.zeros(len(layout.main))
        for k, block in enumerate(layout.main):
            level_score = np.bincount(
                design.main_levels[:, k], weights=score, minlength=self.spec.schema.groups[k].cardinality
            )
            if reference is not None and reference[0] == k and layout.reference is not None:
                grad[layout.reference] = (
                    level_score[reference[1] - 1] - q[layout.reference] / priors.reference_scale**2
                )
                level_score = np.delete(level_score, reference[1] - 1)
            grad[block] = effects.sigma_main[k] * level_score - q[block]
            main_sums[k] = level_score @ q[block]

        inter_sums = np.zeros(len(layout.inter))
        for pair, (block, cardinality) in enumerate(
            zip(layout.inter, self.spec.schema.interaction_cardinalities(), strict=True)
        ):
            level_score = np.bincount(design.inter_levels[:, pair], weights=score, minlength=cardinality)
            grad[block] = effects.sigma_inter[pair] * level_score - q[block]
            inter_sums[pair] = level_score @ q[block]

        self._hierarchy_gradient(
            grad,
            q,
            main_sums * effects.sigma_main,
            (layout.tau_main, layout.log_ss_main, layout.eta_main),
            (priors.main_tau_scale, priors.main_eta_scale),
        )
        self._hierarchy_gradient(
            grad,
            q,
            inter_sums * effects.sigma_inter,
            (layout.tau_inter, layout.log_ss_inter, layout.eta_inter),
            (priors.inter_tau_scale, priors.inter_eta_scale),
        )

        cell_eta = q[layout.cell]
        grad[layout.cell] = effects.cell_sd * score - cell_eta
        sigma_cell = np.exp(q[layout.log_sigma_cell])
        grad[layout.log_sigma_cell] = effects.cell_sd * (score @ cell_eta) + 1.0 - sigma_cell**2
        return logp, grad

    @staticmethod
    def _hierarchy_gradient(
        grad: NDArray[np.float64],
        q: NDArray[np.float64],
        weighted: NDArray[np.float64],
        positions: tuple[int, int, slice],
        scales: tuple[float, float],
    ) -> None:
        # weighted[k] = (dlogL/dsigma_k) * sigma_k
        tau, log_ss, eta = positions
        tau_scale, eta_scale = scales
        ss = np.exp(q[log_ss])
        grad[tau] = tau_scale * np.sum(weighted) - q[tau]
        grad[eta] = eta_scale * ss * weighted - q[eta]
        grad[log_ss] = eta_scale * ss * (weighted @ q[eta]) + 1.0 - ss**2

    def generated_quantities(self) -> "DerivedQuantities":
        """Per-draw cell rates and batch SDs, for streaming storage during sampling."""
        return DerivedQuantities(self)

    def road_design(self, subtypes: Sequence[Sequence[int]], exposures: Sequence[float]) -> RoadDesign:
        """
        Index arrays for predicting roads (or cells) by subtype and exposure.

        Raises:
            DomainError: If a subtype falls outside the schema or an exposure is not positive

        """
        schema = self.spec.schema
        for position, subtype in enumerate(subtypes):
            try:
                schema.validate_subtype(str(position), subtype)
            except SchemaViolationError as e:
                msg = f"Road {position} does not fit the model schema"
                raise DomainError(msg) from e
        exposure = np.asarray(exposures, dtype=np.float64)
        if not np.all(exposure > 0):
            msg = "Road exposures must be positive"
            raise DomainError(msg)
        n = len(subtypes)
        return RoadDesign(
            main_levels=np.array(subtypes, dtype=np.intp).reshape(n, len(schema.groups)) - 1,
            inter_levels=np.array([interaction_levels(s, schema) for s in subtypes], dtype=np.intp).reshape(
                n, len(schema.interactions)
            )
            - 1,
            log_exposure=np.log(exposure),
            cell_index=np.array([self._cell_lookup.get(tuple(s), -1) for s in subtypes], dtype=np.intp),
        )

    def road_rates(
        self, draws: NDArray[np.float64], design: RoadDesign, rng: np.random.Generator
    ) -> NDArray[np.float64]:
        """
        Expected fatalities μ̂_i(s) of every road under every draw.

        Roads of a training type reuse that cell's error; other roads get a fresh
        error from normal(0, cell SD) per draw.

        Args:
            draws: Parameter draws, shape (S, dimension)
            design: Output of ``road_design``
            rng: Generator for the fresh cell errors

        Returns:
            Array of shape (S, number of roads)

        """
        draws = np.atleast_2d(draws)
        seen = design.cell_index >= 0
        rates = np.empty((draws.shape[0], design.cell_index.shape[0]))
        for s, q in enumerate(draws):
            effects = self.effects(q)
            lam = _log_predictor(effects, design.main_levels, design.inter_levels)
            fresh = effects.cell_sd * rng.standard_normal(design.cell_index.shape[0])
            error = fresh
            error[seen] = effects.cell[design.cell_index[seen]]
            with np.errstate(over="ignore"):
                rates[s] = np.exp(lam + error + effects.rho * design.log_exposure)
        return rates


class DerivedQuantities:
    """
    Streaming generated quantities of a ``ModelPosterior``.

    Emits μ_j for every training cell, then the finite-population SD of each
    batch's realized coefficients (``fpsd[...]``), then the superpopulation
    SDs (``sd[...]``).
    """

    def __init__(self, posterior: ModelPosterior) -> None:
        self.posterior = posterior

    @property
    def names(self) -> tuple[str, ...]:
        """Generated coordinate names."""
        batches = (*self.posterior.spec.batches, CELL_BATCH)
        return (
            *(f"mu[{j}]" for j in range(len(self.posterior.cells))),
            *(f"fpsd[{b}]" for b in batches),
            *(f"sd[{b}]" for b in batches),
        )

    def __call__(self, q: NDArray[np.float64]) -> NDArray[np.float64]:
        """Generated quantities of one draw."""
        effects = self.posterior.effects(q)
        mu = self.posterior.cell_rates(q)
        coefficients = [*effects.main, *effects.inter, effects.cell]
        fpsd = [float(np.std(c, ddof=1)) if c.size > 1 else float("nan") for c in coefficients]
        sd = [*effects.sigma_main, *effects.sigma_inter, effects.cell_sd]
        return np.concatenate([mu, np.asarray(fpsd), np.asarray(sd, dtype=np.float64)])


def cell_rate(
    q: NDArray[np.float64], cell: TypeCell, spec: ModelSpec, *, cell_eta: float | None = None
) -> float:
    """
    Expected fatalities μ_j of one cell.

    Args:
        q: Parameter vector (the cell count is inferred from its length)
        cell: Cell; its ``cell_id`` selects the stored error unless ``cell_eta`` is given
        spec: Model specification
        cell_eta: Standard-normal cell deviate to use instead of the stored one

    Raises:
        DomainError: If the cell has no stored error and none is supplied

    """
    q = np.asarray(q, dtype=np.float64)
    layout = ParameterLayout.for_vector(spec, q)
    effects = realized_effects(q, spec, layout)
    if cell_eta is None:
        if not 0 <= cell.cell_id < layout.n_cells:
            msg = f"Cell {cell.cell_id} has no stored error in a vector with {layout.n_cells} cells"
            raise DomainError(msg)
        cell_eta = float(q[layout.cell][cell.cell_id])
    lam = effects.theta + effects.rho * np.log(cell.exposure) + effects.cell_sd * cell_eta
    for k, level in enumerate(cell.subtype):
        lam += effects.main[k][level - 1]
    for pair, level in enumerate(interaction_levels(cell.subtype, spec.schema)):
        lam += effects.inter[pair][level - 1]
    return float(np.exp(lam))


def log_density(q: NDArray[np.float64], cells: Sequence[TypeCell], spec: ModelSpec) -> float:
    """Log posterior density of ``q`` given training cells."""
    return ModelPosterior(spec, cells)(q)[0]


def grad_log_density(q: NDArray[np.float64], cells: Sequence[TypeCell], spec: ModelSpec) -> NDArray[np.float64]:
    """Analytic gradient of ``log_density`` in the unconstrained parameterization."""
    return ModelPosterior(spec, cells)(q)[1]


def prior_only_levels(spec: ModelSpec, cells: Sequence[TypeCell]) -> list[tuple[str, int]]:
    """
    Batch levels absent from the training cells.

    Their coefficients are informed by the prior alone; predictions involving
    them (for example a held-out year) are effectively drawn from the prior.
    """
    absent = []
    schema = spec.schema
    for k, group in enumerate(schema.groups):
        seen = {cell.subtype[k] for cell in cells}
        absent.extend((group.code, v) for v in range(1, group.cardinality + 1) if v not in seen)
    pair_batches = spec.batches[len(schema.groups) :]
    for pair, (batch, cardinality) in enumerate(zip(pair_batches, schema.interaction_cardinalities(), strict=True)):
        seen = {cell.interaction_levels[pair] for cell in cells}
        absent.extend((batch, v) for v in range(1, cardinality + 1) if v not in seen)
    return absent
