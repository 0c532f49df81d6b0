"""Unit tests for flow-map fitting."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest
import torch

from archetype_match.archetypes import bistable, build_archetype, limit_cycle, ring_attractor
from archetype_match.diffeo import DiffeoModel
from archetype_match.exceptions import DimensionMismatch
from archetype_match.perturb import PerturbationKind, PerturbationSpec
from archetype_match.sim import Annulus, SimConfig, TrajectoryBatch, normalize, split
from archetype_match.targets import TargetSpec, build_target, perturbed_target, simulate_target
from archetype_match.train import (
    FitConfig,
    evaluate_fit,
    fit,
    fit_stem,
    grad_loss,
    init_beta,
    load_fit,
    save_fit,
    source_dt,
    trajectory_loss,
)

if TYPE_CHECKING:
    from pathlib import Path

# Fine internal steps so the RK4 data match the closed-form flow.
FINE = SimConfig(dt=0.2, t_max=2.0, n_traj=10, seed=2, substeps=20)


@pytest.fixture
def lc_batch() -> TrajectoryBatch:
    """Trajectories of the canonical limit cycle (v = -1)."""
    target = TargetSpec(name="limit_cycle", base=limit_cycle(), sampler=Annulus(r_min=0.5, r_max=1.5))
    return simulate_target(target, FINE)


class TestTrajectoryLoss:
    """Tests for the trajectory loss."""

    def test_self_data_identity_model(self, lc_batch: TrajectoryBatch) -> None:
        """Identity map and generating parameters reproduce the data."""
        assert trajectory_loss(DiffeoModel(2), limit_cycle(), {"v": -1.0}, lc_batch) <= 1e-10

    def test_velocity_mismatch(self, lc_batch: TrajectoryBatch) -> None:
        """A wrong angular velocity leaves a phase error."""
        assert trajectory_loss(DiffeoModel(2), limit_cycle(), {"v": -0.5}, lc_batch) > 1e-3

    def test_source_horizon_rescales_time(self, lc_batch: TrajectoryBatch) -> None:
        """Running the archetype twice as long at half the rates matches the data."""
        horizon = 2 * lc_batch.n_steps * lc_batch.dt
        beta = {"v": -0.5, "alpha": -0.5}
        assert trajectory_loss(DiffeoModel(2), limit_cycle(), beta, lc_batch, source_t_max=horizon) <= 1e-10
        assert trajectory_loss(DiffeoModel(2), limit_cycle(), beta, lc_batch) > 1e-3

    def test_numerical_flow(self) -> None:
        """Archetypes without a closed form are integrated."""
        target = TargetSpec(name="bistable", base=bistable(dim=2), sampler=Annulus(r_min=0.5, r_max=1.5))
        batch = simulate_target(target, FINE)
        assert trajectory_loss(DiffeoModel(2), bistable(dim=2), None, batch, substeps=20) <= 1e-12

    def test_single_sample_is_zero(self) -> None:
        """With n = 0 there is nothing to predict."""
        batch = TrajectoryBatch(data=np.ones((3, 1, 2)), dt=0.1)
        assert trajectory_loss(DiffeoModel(2), ring_attractor(), None, batch) == 0.0

    def test_dimension_mismatch(self, lc_batch: TrajectoryBatch) -> None:
        """Batch and archetype dimensions must agree."""
        with pytest.raises(DimensionMismatch):
            trajectory_loss(DiffeoModel(3), ring_attractor(dim=3), None, lc_batch)


class TestSourceDt:
    """Tests for the archetype sampling interval."""

    def test_defaults_to_target_dt(self, lc_batch: TrajectoryBatch) -> None:
        """Without a horizon the target interval is used."""
        assert source_dt(lc_batch) == lc_batch.dt

    def test_horizon_split_over_samples(self, lc_batch: TrajectoryBatch) -> None:
        """A horizon T gives T / n between samples."""
        assert source_dt(lc_batch, 5.0) == pytest.approx(5.0 / lc_batch.n_steps)

    def test_single_sample(self) -> None:
        """With n = 0 the horizon is ignored."""
        batch = TrajectoryBatch(data=np.ones((2, 1, 2)), dt=0.1)
        assert source_dt(batch, 5.0) == 0.1


class TestGradLoss:
    """Tests for loss gradients."""

    def test_stationary_at_optimum(self, lc_batch: TrajectoryBatch) -> None:
        """Zero weights on self-generated data give a vanishing gradient."""
        model = DiffeoModel(2, hidden=8)
        d_theta, d_beta = grad_loss(model, limit_cycle(), {"v": -1.0}, lc_batch)
        assert d_theta.shape == model.parameter_vector().shape
        assert np.linalg.norm(d_theta) <= 1e-6
        assert abs(d_beta["v"]) <= 1e-6

    def test_velocity_gradient_sign(self, lc_batch: TrajectoryBatch) -> None:
        """Too slow a rotation is pushed towards v = -1."""
        _, d_beta = grad_loss(DiffeoModel(2, hidden=8), limit_cycle(), {"v": -0.8}, lc_batch)
        assert d_beta["v"] > 0

    def test_matches_finite_differences(self, lc_batch: TrajectoryBatch) -> None:
        """Autograd agrees with central differences in theta and beta."""
        model = DiffeoModel.initialized(2, hidden=8, flow_steps=2, seed=1)
        theta = model.parameter_vector().detach().numpy().copy()
        d_theta, d_beta = grad_loss(model, limit_cycle(), {"v": -0.8}, lc_batch)
        h = 1e-6

        def loss_at(vector: np.ndarray, v: float = -0.8) -> float:
            model.load_parameter_vector(vector)
            return trajectory_loss(model, limit_cycle(), {"v": v}, lc_batch)

        for k in np.random.default_rng(0).choice(len(theta), size=10, replace=False):
            step = np.zeros_like(theta)
            step[k] = h
            numeric = (loss_at(theta + step) - loss_at(theta - step)) / (2 * h)
            assert d_theta[k] == pytest.approx(numeric, rel=1e-5, abs=1e-8)
        numeric_v = (loss_at(theta, -0.8 + h) - loss_at(theta, -0.8 - h)) / (2 * h)
        assert d_beta["v"] == pytest.approx(numeric_v, rel=1e-5, abs=1e-8)


class TestInitBeta:
    """Tests for archetype parameter initialization."""

    def test_limit_cycle_velocity_trainable(self) -> None:
        """Only v is trained by default."""
        beta = init_beta(limit_cycle())
        assert list(beta) == ["v"]
        assert beta["v"].requires_grad

    def test_ring_has_nothing_to_train(self) -> None:
        """Ring parameters stay at their canonical values."""
        assert init_beta(ring_attractor()) == {}

    def test_override(self) -> None:
        """beta0 overrides the archetype parameters."""
        beta = init_beta(limit_cycle(), {"v": -2.0})
        assert float(beta["v"]) == -2.0


class TestFit:
    """Tests for fit."""

    def test_zero_epochs_is_evaluation(self, ring_batch: TrajectoryBatch) -> None:
        """epochs = 0 evaluates the initialization."""
        cfg = FitConfig(epochs=0, hidden=8, flow_steps=2, seed=0)
        result = fit(ring_attractor(), None, ring_batch, cfg)
        assert result.loss_curve == []
        normalized, _, _ = normalize(ring_batch)
        _, test = split(normalized, cfg.split_ratio, cfg.seed)
        model = DiffeoModel.initialized(2, cfg.hidden, cfg.flow_steps, cfg.seed)
        expected = trajectory_loss(model, ring_attractor(), None, test, cfg.substeps)
        assert result.test_mse == pytest.approx(expected, rel=1e-12)
        assert result.dissimilarity == result.test_mse

    def test_evaluate_on_raw_batch(self, ring_batch: TrajectoryBatch) -> None:
        """Raw trajectories are standardized with the fit constants before scoring."""
        cfg = FitConfig(epochs=0, hidden=8, flow_steps=2, seed=0)
        result = fit(ring_attractor(), None, ring_batch, cfg)
        normalized, _, _ = normalize(ring_batch)
        model = DiffeoModel.initialized(2, cfg.hidden, cfg.flow_steps, cfg.seed)
        expected = trajectory_loss(model, ring_attractor(), None, normalized, cfg.substeps)
        assert evaluate_fit(result, ring_batch) == pytest.approx(expected, rel=1e-9)

    def test_deterministic(self, ring_batch: TrajectoryBatch, tiny_fit_config: FitConfig) -> None:
        """Identical inputs give identical results."""
        a = fit(ring_attractor(), None, ring_batch, tiny_fit_config)
        b = fit(ring_attractor(), None, ring_batch, tiny_fit_config)
        assert a.test_mse == b.test_mse
        assert a.complexity == b.complexity
        assert a.loss_curve == b.loss_curve
        assert torch.equal(a.model.parameter_vector(), b.model.parameter_vector())

    def test_training_reduces_loss(self, ring_batch: TrajectoryBatch) -> None:
        """A few epochs lower the training loss."""
        cfg = FitConfig(epochs=15, hidden=16, flow_steps=2, batch_size=4, seed=0)
        result = fit(ring_attractor(), None, ring_batch, cfg)
        assert len(result.loss_curve) == 15
        assert result.loss_curve[-1] < result.loss_curve[0]

    def test_limit_cycle_learns_velocity(self, lc_batch: TrajectoryBatch, tiny_fit_config: FitConfig) -> None:
        """The trained velocity is reported in beta_star."""
        result = fit(limit_cycle(), {"v": -0.5}, lc_batch, tiny_fit_config)
        assert result.beta_star.v != -0.5

    def test_batch_size_clamped(self, ring_batch: TrajectoryBatch, caplog: pytest.LogCaptureFixture) -> None:
        """A batch larger than the training set is clamped with a warning."""
        cfg = FitConfig(epochs=1, hidden=4, flow_steps=1, batch_size=500)
        fit(ring_attractor(), None, ring_batch, cfg)
        assert "exceeds" in caplog.text

    def test_dimension_mismatch(self, ring_batch: TrajectoryBatch, tiny_fit_config: FitConfig) -> None:
        """Archetype and target dimensions must agree."""
        with pytest.raises(DimensionMismatch):
            fit(build_archetype("ring", 3), None, ring_batch, tiny_fit_config)


class TestPersistence:
    """Tests for saving and loading fits."""

    def test_round_trip(self, ring_batch: TrajectoryBatch, tiny_fit_config: FitConfig, tmp_path: Path) -> None:
        """The fit JSON, checkpoint and loss curve reload."""
        result = fit(
            ring_attractor(), None, ring_batch, tiny_fit_config, archetype_name="ring", target_name="ring"
        )
        fit_path, ckpt_path, loss_path = save_fit(result, tmp_path)
        assert fit_path.name == f"{fit_stem('ring', 'ring')}.fit.json"
        assert ckpt_path.exists()
        assert loss_path.read_text(encoding="utf-8").splitlines()[0] == "epoch,loss"
        loaded = load_fit(fit_path)
        assert loaded.test_mse == result.test_mse
        assert loaded.complexity == result.complexity
        assert loaded.normalization == result.normalization
        assert torch.equal(loaded.model.parameter_vector(), result.model.parameter_vector())

    def test_identical_bytes(self, ring_batch: TrajectoryBatch, tiny_fit_config: FitConfig, tmp_path: Path) -> None:
        """Repeated fits write identical files."""
        for sub in ("a", "b"):
            save_fit(fit(ring_attractor(), None, ring_batch, tiny_fit_config), tmp_path / sub, stem="x")
        for name in ("x.fit.json", "x.ckpt.json", "x.loss.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.slow
class TestFitAcceptance:
    """End-to-end fits with production settings."""

    def test_ring_self_fit(self) -> None:
        """The ring archetype fits its own trajectories closely."""
        batch = simulate_target(build_target("ring"), SimConfig(dt=0.2, t_max=2.0, n_traj=50, seed=0))
        result = fit(ring_attractor(), None, batch, FitConfig(hidden=128, epochs=200, lr=0.01))
        assert result.test_mse <= 1e-3
        assert result.complexity <= 1.0

    def test_two_blas_prefers_bistable(self) -> None:
        """Bistable explains the two-line-attractor system better than the ring."""
        target = build_target("two_blas")
        batch = simulate_target(target, SimConfig(dt=target.dt, t_max=target.t_max, n_traj=50))
        cfg = FitConfig(hidden=64, epochs=200)
        ring = fit(build_archetype("ring"), None, batch, cfg)
        bistable_fit = fit(build_archetype("bistable"), None, batch, cfg)
        assert ring.test_mse > bistable_fit.test_mse

    def test_complexity_rises_with_deformation(self) -> None:
        """Stronger deformations of the ring need more complex maps."""
        cfg = FitConfig(hidden=64, epochs=200, lr=0.01)
        complexities = []
        for s in (0.0, 1.0):
            target = perturbed_target(PerturbationSpec(kind=PerturbationKind.DIFFEO_INTERP, s=s, seed=1))
            batch = simulate_target(target, SimConfig(dt=0.2, t_max=2.0, n_traj=50, seed=0))
            complexities.append(fit(ring_attractor(), None, batch, cfg).complexity)
        assert complexities[1] > complexities[0]

    def test_robust_to_small_field_perturbation(self) -> None:
        """A weak added vector field leaves the ring fit close."""
        target = perturbed_target(PerturbationSpec(kind=PerturbationKind.GP_FIELD, s=0.05, seed=1))
        batch = simulate_target(target, SimConfig(dt=0.2, t_max=2.0, n_traj=50, seed=0))
        result = fit(ring_attractor(), None, batch, FitConfig(hidden=64, epochs=200, lr=0.01))
        assert result.test_mse <= 1e-2

    def test_classifies_oscillator_and_ring(self) -> None:
        """The limit cycle explains van der Pol best; the ring beats a fixed point on the ring."""
        cfg = FitConfig(hidden=64, epochs=200, source_t_max=5.0)

        def errors(target_name: str, archetypes: tuple[str, ...]) -> dict[str, float]:
            target = build_target(target_name)
            batch = simulate_target(target, SimConfig(dt=target.dt, t_max=target.t_max, n_traj=50))
            return {name: fit(build_archetype(name), None, batch, cfg).test_mse for name in archetypes}

        vdp = errors("vdp", ("ring", "limit_cycle", "fixed_point"))
        assert min(vdp, key=vdp.__getitem__) == "limit_cycle"
        ring = errors("ring", ("ring", "fixed_point"))
        assert ring["ring"] < ring["fixed_point"]
