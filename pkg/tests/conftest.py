"""Pytest configuration for archetype_match tests."""

from __future__ import annotations

from typing import Any

import pytest

from archetype_match.sim import SimConfig, TrajectoryBatch
from archetype_match.targets import build_target, simulate_target
from archetype_match.train import FitConfig


def pytest_addoption(parser: Any) -> None:
    """Add the --runslow switch."""
    parser.addoption("--runslow", action="store_true", default=False, help="run slow fits")


def pytest_configure(config: Any) -> None:
    """Configure pytest markers."""
    config.addinivalue_line("markers", "slow: long-running end-to-end fits")


def pytest_collection_modifyitems(config: Any, items: list[Any]) -> None:
    """Skip slow tests unless --runslow is given."""
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def clear_seed_env(monkeypatch: pytest.MonkeyPatch) -> None:
    """Keep a developer's DAA_SEED out of the tests."""
    monkeypatch.delenv("DAA_SEED", raising=False)


@pytest.fixture
def ring_cfg() -> SimConfig:
    """Small recording grid for the ring target."""
    return SimConfig(dt=0.2, t_max=2.0, n_traj=10, seed=1)


@pytest.fixture
def ring_batch(ring_cfg: SimConfig) -> TrajectoryBatch:
    """Deterministic ring-attractor trajectories."""
    return simulate_target(build_target("ring"), ring_cfg)


@pytest.fixture
def tiny_fit_config() -> FitConfig:
    """Fit settings small enough for unit tests."""
    return FitConfig(epochs=2, hidden=8, flow_steps=2, batch_size=4, seed=0)
