"""Pytest configuration and shared fixtures."""

import numpy as np
import pytest

from trafficbayes.config import PriorConfig, SamplerConfig
from trafficbayes.core import CovariateGroup, CovariateSchema, RoadRecord, aggregate_cells
from trafficbayes.model import ModelSpec


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for test data."""
    return np.random.default_rng(20240611)


@pytest.fixture
def small_schema() -> CovariateSchema:
    """Two groups and their interaction."""
    return CovariateSchema.all_pairs([CovariateGroup("SIGN", 2), CovariateGroup("LGHT", 3)])


@pytest.fixture
def small_spec(small_schema: CovariateSchema) -> ModelSpec:
    """Model of the small schema without a reference-level override."""
    return ModelSpec(schema=small_schema, priors=PriorConfig(reference_group=None))


@pytest.fixture
def small_records() -> list[RoadRecord]:
    """Roads covering five of the six small-schema types."""
    rows = [
        ("r1", (1, 1), 120.0, 2),
        ("r2", (1, 1), 80.0, 1),
        ("r3", (1, 2), 200.0, 3),
        ("r4", (2, 1), 50.0, 1),
        ("r5", (2, 3), 300.0, 4),
        ("r6", (1, 3), 90.0, 1),
    ]
    return [RoadRecord(road_id, subtype, exposure, count) for road_id, subtype, exposure, count in rows]


@pytest.fixture
def small_cells(small_records, small_schema):
    """Cells of ``small_records``."""
    return aggregate_cells(small_records, small_schema)


@pytest.fixture
def quick_sampler() -> SamplerConfig:
    """Short serial run for tests."""
    return SamplerConfig(chains=2, iterations=400, warmup=200, seed=11, workers=1)
