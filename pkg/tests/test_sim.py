"""Unit tests for trajectory generation and preprocessing."""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from pydantic import ValidationError

from archetype_match.archetypes import field_fn, fixed_point, ring_attractor
from archetype_match.exceptions import DegenerateDimension, NonFiniteState
from archetype_match.sim import (
    Annulus,
    BatchMeta,
    Box,
    SimConfig,
    Stream,
    TrajectoryBatch,
    integrate_ode,
    integrate_sde,
    max_deviation,
    normalize,
    rk4_path,
    sample_initial,
    simulate_batch,
    split,
    stream,
    trajectory_distance,
)


def _ring_radius(r0: float, t: float) -> float:
    return r0 / (r0 + (1 - r0) * math.exp(-t))


class TestStreams:
    """Tests for seeded random streams."""

    def test_reproducible(self) -> None:
        """Same seed and purpose give the same draws."""
        a = stream(3, Stream.NOISE, 2).standard_normal(5)
        b = stream(3, Stream.NOISE, 2).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_independent_purposes(self) -> None:
        """Different purposes give different draws."""
        a = stream(3, Stream.NOISE).random(5)
        b = stream(3, Stream.SPLIT).random(5)
        assert not np.array_equal(a, b)


class TestSimConfig:
    """Tests for the recording grid."""

    def test_steps_and_times(self) -> None:
        """n = round(T / dt) and times are i dt."""
        cfg = SimConfig(dt=0.2, t_max=2.0)
        assert cfg.n_steps == 10
        np.testing.assert_allclose(cfg.times, np.arange(11) * 0.2)

    def test_positive_dt(self) -> None:
        """dt must be positive."""
        with pytest.raises(ValidationError):
            SimConfig(dt=0.0, t_max=1.0)


class TestSampling:
    """Tests for initial-condition samplers."""

    def test_annulus_area_uniform(self) -> None:
        """Mass in r in [0.5, 1] matches the area ratio 0.375."""
        points = sample_initial(Annulus(r_min=0.5, r_max=1.5, seed=4), 100_000)
        r = np.linalg.norm(points, axis=-1)
        assert r.min() >= 0.5
        assert r.max() <= 1.5
        tolerance = 3 * math.sqrt(0.375 * 0.625 / 100_000)
        assert np.mean(r <= 1.0) == pytest.approx(0.375, abs=tolerance)

    def test_box_bounds(self) -> None:
        """Box samples stay inside the box."""
        points = sample_initial(Box(lo=(0.0, -1.0), hi=(3.0, 1.0)), 1000)
        assert points.shape == (1000, 2)
        assert (points[:, 0] >= 0).all()
        assert (points[:, 0] <= 3).all()
        assert (points[:, 1] >= -1).all()

    def test_prefix_stable(self) -> None:
        """The first k samples do not depend on the count."""
        sampler = Annulus(r_min=0.5, r_max=1.5, seed=7)
        np.testing.assert_array_equal(sample_initial(sampler, 5), sample_initial(sampler, 50)[:5])

    def test_inverted_annulus(self) -> None:
        """r_min must be below r_max."""
        with pytest.raises(ValidationError):
            Annulus(r_min=2.0, r_max=1.0)


class TestIntegrateOde:
    """Tests for RK4 integration."""

    def test_fixed_point_decay(self) -> None:
        """x0 = 2 decays to 2/e at t = 1."""
        cfg = SimConfig(dt=0.1, t_max=1.0, substeps=10)
        path = integrate_ode(field_fn(fixed_point()), 2.0, cfg)
        assert path.shape == (11, 1)
        assert path[-1, 0] == pytest.approx(2 * math.exp(-1), abs=1e-8)

    def test_zero_horizon(self) -> None:
        """T = 0 yields only the initial state."""
        path = integrate_ode(field_fn(ring_attractor()), [0.5, 0.0], SimConfig(dt=0.1, t_max=0.0))
        np.testing.assert_array_equal(path, [[0.5, 0.0]])

    def test_ring_radius(self) -> None:
        """r0 = 0.5 reaches 0.731059 at t = 1."""
        cfg = SimConfig(dt=0.1, t_max=1.0, substeps=10)
        path = integrate_ode(field_fn(ring_attractor()), [0.0, 0.5], cfg)
        assert np.linalg.norm(path[-1]) == pytest.approx(0.731059, abs=1e-6)

    def test_fourth_order(self) -> None:
        """Halving the internal step cuts the terminal error about 16 times."""
        f = field_fn(ring_attractor())
        x0 = torch.tensor([[0.5, 0.0]], dtype=torch.float64)
        exact = _ring_radius(0.5, 2.0)
        errors = []
        for substeps in (2, 4):
            path = rk4_path(f, x0, 0.2, 10, substeps)
            errors.append(abs(float(torch.linalg.vector_norm(path[0, -1])) - exact))
        assert 12 <= errors[0] / errors[1] <= 20

    def test_non_finite_state(self) -> None:
        """A blow-up reports the first bad step."""
        with pytest.raises(NonFiniteState) as excinfo:
            rk4_path(lambda x: x**3, torch.tensor([[10.0]], dtype=torch.float64), 1.0, 5)
        assert excinfo.value.step >= 1


class TestIntegrateSde:
    """Tests for Euler-Maruyama integration."""

    def test_deterministic(self) -> None:
        """Same seed gives bit-identical paths."""
        cfg = SimConfig(dt=0.1, t_max=2.0, seed=5)
        f = field_fn(ring_attractor())
        np.testing.assert_array_equal(
            integrate_sde(f, 0.1, [1.0, 0.0], cfg), integrate_sde(f, 0.1, [1.0, 0.0], cfg)
        )

    def test_zero_sigma_is_deterministic_drift(self) -> None:
        """sigma = 0 is the Euler scheme."""
        cfg = SimConfig(dt=0.1, t_max=0.1, substeps=1)
        path = integrate_sde(field_fn(fixed_point()), 0.0, [1.0], cfg)
        assert path[-1, 0] == pytest.approx(0.9)

    def test_increment_variance(self) -> None:
        """With f = 0 and sigma = 1 the increment variance is h."""
        cfg = SimConfig(dt=0.01, t_max=200.0, substeps=1, seed=11)
        path = integrate_sde(torch.zeros_like, 1.0, [0.0], cfg)
        increments = np.diff(path[:, 0])
        assert np.var(increments) == pytest.approx(0.01, rel=0.05)

    def test_noise_prefix_stable(self) -> None:
        """Trajectory k keeps its noise when the batch grows."""
        f = field_fn(ring_attractor())
        cfg = SimConfig(dt=0.1, t_max=1.0, seed=2)
        x0 = np.tile([[1.0, 0.0]], (4, 1))
        small = simulate_batch(f, x0[:2], cfg, sigma=0.1)
        large = simulate_batch(f, x0, cfg, sigma=0.1)
        np.testing.assert_array_equal(small, large[:2])

    def test_negative_sigma(self) -> None:
        """sigma must be non-negative."""
        with pytest.raises(ValueError, match="sigma"):
            integrate_sde(torch.zeros_like, -1.0, [0.0], SimConfig(dt=0.1, t_max=1.0))


class TestPreprocessing:
    """Tests for normalization and splitting."""

    def test_normalize_moments(self, ring_batch: TrajectoryBatch) -> None:
        """Every dimension has mean 0 and std 1 over all samples."""
        normalized, _, _ = normalize(ring_batch)
        points = normalized.points()
        np.testing.assert_allclose(points.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(points.std(axis=0), 1.0, atol=1e-9)

    def test_normalize_idempotent(self, ring_batch: TrajectoryBatch) -> None:
        """A second pass is (nearly) the identity and composes constants."""
        once, mu, sigma = normalize(ring_batch)
        twice, mu2, sigma2 = normalize(once)
        np.testing.assert_allclose(mu2, 0.0, atol=1e-9)
        np.testing.assert_allclose(sigma2, 1.0, atol=1e-9)
        np.testing.assert_allclose(twice.normalization.mu, mu, atol=1e-9)
        np.testing.assert_allclose(twice.normalization.sigma, sigma, atol=1e-9)
        np.testing.assert_allclose(twice.normalization.invert(twice.data), ring_batch.data, atol=1e-9)

    def test_constant_batch(self) -> None:
        """Zero spread cannot be standardized."""
        batch = TrajectoryBatch(data=np.ones((3, 4, 2)), dt=0.1)
        with pytest.raises(DegenerateDimension) as excinfo:
            normalize(batch)
        assert excinfo.value.dims == (0, 1)

    def test_split_sizes(self) -> None:
        """50 trajectories split 40/10, disjoint and covering."""
        data = np.arange(50, dtype=np.float64)[:, None, None] * np.ones((50, 3, 1))
        train, test = split(TrajectoryBatch(data=data, dt=0.1), 0.8, seed=3)
        ids_train = set(train.data[:, 0, 0].astype(int))
        ids_test = set(test.data[:, 0, 0].astype(int))
        assert len(ids_train) == 40
        assert len(ids_test) == 10
        assert not ids_train & ids_test
        assert ids_train | ids_test == set(range(50))

    def test_split_needs_two(self) -> None:
        """One trajectory cannot be split."""
        with pytest.raises(ValueError, match="at least 2"):
            split(TrajectoryBatch(data=np.zeros((1, 3, 2)), dt=0.1))

    def test_batch_rejects_nan(self) -> None:
        """Trajectory data must be finite."""
        data = np.zeros((2, 3, 2))
        data[1, 1, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            TrajectoryBatch(data=data, dt=0.1, meta=BatchMeta())

    def test_distances(self, ring_batch: TrajectoryBatch) -> None:
        """Identical batches are at distance zero."""
        assert trajectory_distance(ring_batch, ring_batch) == 0.0
        np.testing.assert_array_equal(max_deviation(ring_batch, ring_batch), 0.0)
