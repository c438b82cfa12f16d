"""TrafficBayes: selection-bias correction for before-after road-safety evaluations."""

from .analysis import (
    DecompositionLedger,
    EffectSummary,
    IntervalSummary,
    MirrorReport,
    PredictiveCheck,
    cramers_v,
    decompose,
    effect_summary,
    mirror_diagnostic,
    posterior_predictive_check,
    reduction_factor,
)
from .config import PipelineConfig, PriorConfig, SamplerConfig, SchemaConfig, load_config
from .core import CategoryCodebook, CovariateGroup, CovariateSchema, RoadRecord, TypeCell, aggregate_cells
from .diagnostics import Diagnostics, effective_sample_size, split_rhat, summarize
from .eb import CountHistogram, RobbinsTable, expected_fatalities_selected, robbins_estimate
from .exceptions import (
    ConfigurationError,
    DataError,
    DiagnosticError,
    DomainError,
    InitializationError,
    InputFileError,
    NumericalError,
    SchemaViolationError,
    TrafficBayesError,
    TruncationViolationError,
    UndefinedEstimateError,
)
from .model import ModelPosterior, ModelSpec, truncated_poisson_logpmf, truncated_poisson_rng
from .protocol import GeneratedQuantities, LogDensity
from .sampler import PosteriorDraws, run_chains
from .sim import SelectionPolicy, SimCity, TreatmentEffect, generate_city, select_roads, simulate_period
from .weights import FatalityProbabilityTable, WeightedReport, reweighted_expectation

__all__ = [
    "CategoryCodebook",
    "ConfigurationError",
    "CountHistogram",
    "CovariateGroup",
    "CovariateSchema",
    "DataError",
    "DecompositionLedger",
    "DiagnosticError",
    "Diagnostics",
    "DomainError",
    "EffectSummary",
    "FatalityProbabilityTable",
    "GeneratedQuantities",
    "InitializationError",
    "InputFileError",
    "IntervalSummary",
    "LogDensity",
    "MirrorReport",
    "ModelPosterior",
    "ModelSpec",
    "NumericalError",
    "PipelineConfig",
    "PosteriorDraws",
    "PredictiveCheck",
    "PriorConfig",
    "RoadRecord",
    "RobbinsTable",
    "SamplerConfig",
    "SchemaConfig",
    "SchemaViolationError",
    "SelectionPolicy",
    "SimCity",
    "TrafficBayesError",
    "TreatmentEffect",
    "TruncationViolationError",
    "TypeCell",
    "UndefinedEstimateError",
    "WeightedReport",
    "aggregate_cells",
    "cramers_v",
    "decompose",
    "effect_summary",
    "effective_sample_size",
    "expected_fatalities_selected",
    "generate_city",
    "load_config",
    "mirror_diagnostic",
    "posterior_predictive_check",
    "reduction_factor",
    "reweighted_expectation",
    "robbins_estimate",
    "run_chains",
    "select_roads",
    "simulate_period",
    "split_rhat",
    "summarize",
    "truncated_poisson_logpmf",
    "truncated_poisson_rng",
]

__version__ = "0.1.0"
