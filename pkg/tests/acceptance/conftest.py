"""Acceptance test configuration and fixtures."""

import os

import pytest

ENABLE_VARIABLE = "TRAFFICBAYES_ACCEPTANCE"


def pytest_configure(config):
    """Register acceptance test marker."""
    config.addinivalue_line("markers", "acceptance: long-running statistical acceptance tests")


def pytest_runtest_setup(item):
    """Skip acceptance tests unless they were asked for."""
    if "acceptance" in [mark.name for mark in item.iter_markers()] and not acceptance_enabled():
        pytest.skip(f"set {ENABLE_VARIABLE}=1 to run the acceptance suite")


def acceptance_enabled() -> bool:
    """Check whether the long-running suite is enabled."""
    return os.getenv(ENABLE_VARIABLE, "") == "1"


@pytest.fixture
def acceptance_seed() -> int:
    """Base seed shared by the Monte Carlo suites."""
    return 20240611
