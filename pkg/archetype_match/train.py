"""
Dissimilarity estimation by fitting a flow map.

The loss pulls each target initial state back through Phi^-1, flows it with
the archetype (closed form where available, RK4 otherwise) and pushes every
flowed sample forward through Phi; the mean squared residual against the
target trajectory is minimized with Adam over theta and the trainable
archetype parameters beta.
"""

from __future__ import annotations

import csv
import logging
import time
from collections.abc import Mapping
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field

from .archetypes import (
    ArchetypeParams,
    SystemKind,
    SystemSpec,
    field_fn,
    flow_at_times,
    has_closed_form,
)
from .const import (
    CHECKPOINT_SUFFIX,
    DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS,
    DEFAULT_FLOW_STEPS,
    DEFAULT_HIDDEN,
    DEFAULT_LR,
    DEFAULT_SPLIT_RATIO,
    DEFAULT_SUBSTEPS,
    DEFAULT_TRAINABLE_BETA,
    FIT_SUFFIX,
    LOSS_SUFFIX,
)
from .diffeo import DiffeoModel, complexity, load_checkpoint, save_checkpoint
from .exceptions import DimensionMismatch, NonFiniteLoss, NonFiniteState
from .perturb import PerturbationSpec
from .sim import (
    Normalization,
    Stream,
    TrajectoryBatch,
    apply_normalization,
    normalize,
    rk4_path,
    split,
    stream,
)

if TYPE_CHECKING:
    from pathlib import Path

    from numpy.typing import NDArray

LOGGER = logging.getLogger(__name__)

Beta = dict[str, torch.Tensor]

# Scalar parameters each kind actually uses; only these can be trained.
_ACTIVE_PARAMS: dict[SystemKind, tuple[str, ...]] = {
    SystemKind.FIXED_POINT: ("alpha",),
    SystemKind.MULTISTABLE: ("alpha",),
    SystemKind.BISTABLE: ("alpha",),
    SystemKind.LIMIT_CYCLE: ("alpha", "v"),
    SystemKind.RING_ATTRACTOR: ("alpha",),
    SystemKind.SPHERE_ATTRACTOR: ("alpha", "R", "beta_res"),
    SystemKind.BOUNDED_CONTINUOUS_ATTRACTOR: ("alpha", "B"),
}


class FitConfig(BaseModel):
    """Optimizer and model settings of one fit."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    lr: float = Field(default=DEFAULT_LR, gt=0)
    epochs: int = Field(default=DEFAULT_EPOCHS, ge=0)
    batch_size: int = Field(default=DEFAULT_BATCH_SIZE, ge=1)
    seed: int = Field(default=0, ge=0)
    learn_beta: tuple[str, ...] = DEFAULT_TRAINABLE_BETA
    hidden: int = Field(default=DEFAULT_HIDDEN, ge=1)
    flow_steps: int = Field(default=DEFAULT_FLOW_STEPS, ge=1)
    substeps: int = Field(default=DEFAULT_SUBSTEPS, ge=1)
    split_ratio: float = Field(default=DEFAULT_SPLIT_RATIO, gt=0, lt=1)
    source_t_max: float | None = Field(default=None, gt=0)
    """Horizon the archetype runs over, sampled at n points; None uses the target's dt."""


def init_beta(
    archetype: SystemSpec,
    beta0: Mapping[str, float] | None = None,
    trainable: tuple[str, ...] = DEFAULT_TRAINABLE_BETA,
) -> Beta:
    """
    Parameter tensors for the archetype flow.

    Every parameter named in `trainable` that the archetype uses becomes a
    tensor requiring gradients; values from `beta0` override the archetype parameters.
    """
    values = dict(beta0 or {})
    active = _ACTIVE_PARAMS.get(archetype.kind, ())
    names = [name for name in active if name in trainable or name in values]
    return {
        name: torch.tensor(
            float(values.get(name, getattr(archetype.params, name))),
            dtype=torch.float64,
            requires_grad=name in trainable,
        )
        for name in names
    }


def source_dt(batch: TrajectoryBatch, source_t_max: float | None = None) -> float:
    """Interval between archetype samples matched to consecutive target samples."""
    if source_t_max is None or batch.n_steps == 0:
        return batch.dt
    return source_t_max / batch.n_steps


def beta_params(archetype: SystemSpec, beta: Beta) -> ArchetypeParams:
    """ArchetypeParams with the current beta values."""
    return archetype.params.model_copy(update={k: float(v.detach()) for k, v in beta.items()})


def predict(
    model: DiffeoModel,
    archetype: SystemSpec,
    beta: Beta,
    data: torch.Tensor,
    dt: float,
    substeps: int = DEFAULT_SUBSTEPS,
) -> torch.Tensor:
    """
    Phi(phi_g^{i dt}(Phi^-1(x_0); beta)) for i = 1..n.

    Args:
        model: Flow map.
        archetype: Source system g.
        beta: Archetype parameter overrides.
        data: Target trajectories, shape (B, n + 1, d).
        dt: Interval between archetype samples.
        substeps: RK4 steps per interval when g has no closed form.

    Returns:
        Predicted samples, shape (B, n, d).

    """
    if data.shape[-1] != archetype.dim:
        raise DimensionMismatch(archetype.dim, data.shape[-1], "target batch")
    n = data.shape[1] - 1
    source = model.inverse(data[:, 0])
    if has_closed_form(archetype):
        times = torch.arange(1, n + 1, dtype=torch.float64) * dt
        flowed = flow_at_times(archetype, source, times, beta)
    else:
        flowed = rk4_path(field_fn(archetype, beta), source, dt, n, substeps)[:, 1:]
    return model(flowed)


def loss_tensor(
    model: DiffeoModel,
    archetype: SystemSpec,
    beta: Beta,
    data: torch.Tensor,
    dt: float,
    substeps: int = DEFAULT_SUBSTEPS,
) -> torch.Tensor:
    """Differentiable mean over trajectories and i = 1..n of the squared residual norm."""
    if data.shape[1] < 2:  # noqa: PLR2004
        return torch.zeros((), dtype=torch.float64)
    try:
        residual = data[:, 1:] - predict(model, archetype, beta, data, dt, substeps)
    except NonFiniteState as err:
        raise NonFiniteLoss from err
    loss = residual.pow(2).sum(dim=-1).mean()
    if not torch.isfinite(loss):
        raise NonFiniteLoss
    return loss


def trajectory_loss(
    model: DiffeoModel,
    archetype: SystemSpec,
    beta: Beta | Mapping[str, float] | None,
    batch: TrajectoryBatch,
    substeps: int = DEFAULT_SUBSTEPS,
    *,
    source_t_max: float | None = None,
) -> float:
    """
    Trajectory loss of `model` against a (normalized) batch.

    Raises:
        NonFiniteLoss: The loss or an intermediate state diverged.

    """
    tensors = _as_beta(beta)
    with torch.no_grad():
        dt = source_dt(batch, source_t_max)
        return float(loss_tensor(model, archetype, tensors, batch.as_tensor(), dt, substeps))


def _as_beta(beta: Beta | Mapping[str, float] | None) -> Beta:
    return {
        k: v if isinstance(v, torch.Tensor) else torch.tensor(float(v), dtype=torch.float64)
        for k, v in (beta or {}).items()
    }


def grad_loss(
    model: DiffeoModel,
    archetype: SystemSpec,
    beta: Beta | Mapping[str, float] | None,
    batch: TrajectoryBatch,
    substeps: int = DEFAULT_SUBSTEPS,
    *,
    source_t_max: float | None = None,
) -> tuple[NDArray[np.float64], dict[str, float]]:
    """
    Reverse-mode gradient of the trajectory loss.

    Returns:
        d loss / d theta flattened like `DiffeoModel.parameter_vector`, and
        d loss / d beta for every beta entry.

    """
    tensors = {
        k: v.detach().clone().requires_grad_(True) for k, v in _as_beta(beta).items()
    }
    params = list(model.parameters())
    loss = loss_tensor(
        model, archetype, tensors, batch.as_tensor(), source_dt(batch, source_t_max), substeps
    )
    grads = torch.autograd.grad(loss, [*params, *tensors.values()], allow_unused=True)
    theta_grads = [
        torch.zeros_like(p) if g is None else g for p, g in zip(params, grads[: len(params)], strict=True)
    ]
    d_theta = torch.cat([g.reshape(-1) for g in theta_grads]).numpy()
    d_beta = {
        name: 0.0 if g is None else float(g)
        for name, g in zip(tensors, grads[len(params) :], strict=True)
    }
    return d_theta, d_beta


@dataclass
class FitResult:
    """Optimized flow map and the reported (dissimilarity, complexity) pair."""

    model: DiffeoModel
    archetype: SystemSpec
    beta_star: ArchetypeParams
    train_mse: float
    test_mse: float
    complexity: float
    complexity_lp: float
    loss_curve: list[float]
    normalization: Normalization | None
    config: FitConfig
    archetype_name: str = ""
    target_name: str = ""
    perturbation: PerturbationSpec | None = None
    wall_time: float | None = None

    @property
    def dissimilarity(self) -> float:
        """The reported dissimilarity, the test MSE."""
        return self.test_mse


def _effective_batch_size(cfg: FitConfig, n_train: int) -> int:
    if cfg.batch_size > n_train:
        LOGGER.warning(
            "Batch size %d exceeds %d training trajectories; using %d",
            cfg.batch_size,
            n_train,
            n_train,
        )
        return n_train
    return cfg.batch_size


def fit(  # noqa: PLR0913
    archetype: SystemSpec,
    beta0: Mapping[str, float] | None,
    target_batch: TrajectoryBatch,
    cfg: FitConfig,
    *,
    archetype_name: str = "",
    target_name: str = "",
) -> FitResult:
    """
    Fit a flow map from `archetype` onto the target trajectories.

    Normalizes the batch, splits trajectories 80/20, runs minibatch Adam for
    ``cfg.epochs`` epochs (each epoch shuffled with its own seeded stream),
    and evaluates test MSE and the complexity over all target samples.

    Raises:
        NonFiniteLoss: The loss diverged; carries the epoch index.

    """
    started = time.perf_counter()
    if target_batch.dim != archetype.dim:
        raise DimensionMismatch(archetype.dim, target_batch.dim, "target batch")
    if target_batch.n_steps < 1:
        msg = "target trajectories need at least two samples"
        raise ValueError(msg)
    normalized, _, _ = normalize(target_batch)
    train_batch, test_batch = split(normalized, cfg.split_ratio, cfg.seed)
    model = DiffeoModel.initialized(archetype.dim, cfg.hidden, cfg.flow_steps, cfg.seed)
    beta = init_beta(archetype, beta0, cfg.learn_beta)
    trainable = [t for t in beta.values() if t.requires_grad]
    optimizer = torch.optim.Adam([*model.parameters(), *trainable], lr=cfg.lr)

    data, dt = train_batch.as_tensor(), source_dt(train_batch, cfg.source_t_max)
    n_train = train_batch.n_traj
    batch_size = _effective_batch_size(cfg, n_train)
    LOGGER.info(
        "Fitting %s -> %s: %d train / %d test trajectories, %d epochs",
        archetype_name or archetype.kind,
        target_name or normalized.meta.source,
        n_train,
        test_batch.n_traj,
        cfg.epochs,
    )

    loss_curve: list[float] = []
    for epoch in range(cfg.epochs):
        order = stream(cfg.seed, Stream.SHUFFLE, epoch).permutation(n_train)
        total = 0.0
        for start in range(0, n_train, batch_size):
            idx = torch.from_numpy(order[start : start + batch_size])
            optimizer.zero_grad()
            try:
                loss = loss_tensor(model, archetype, beta, data[idx], dt, cfg.substeps)
            except NonFiniteLoss:
                raise NonFiniteLoss(epoch) from None
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(idx)
        loss_curve.append(total / n_train)
        LOGGER.debug("Epoch %d: train loss %.6g", epoch, loss_curve[-1])

    with torch.no_grad():
        try:
            train_mse = float(loss_tensor(model, archetype, beta, data, dt, cfg.substeps))
            test_mse = float(
                loss_tensor(model, archetype, beta, test_batch.as_tensor(), dt, cfg.substeps)
            )
        except NonFiniteLoss:
            raise NonFiniteLoss(cfg.epochs) from None
    report = complexity(model, normalized.points())
    result = FitResult(
        model=model,
        archetype=archetype,
        beta_star=beta_params(archetype, beta),
        train_mse=train_mse,
        test_mse=test_mse,
        complexity=report.mean,
        complexity_lp=report.lp,
        loss_curve=loss_curve,
        normalization=normalized.normalization,
        config=cfg,
        archetype_name=archetype_name,
        target_name=target_name,
        wall_time=time.perf_counter() - started,
    )
    LOGGER.info(
        "Fit %s -> %s done: test MSE %.4g, complexity %.4g (%.1fs)",
        archetype_name or archetype.kind,
        target_name or normalized.meta.source,
        test_mse,
        report.mean,
        result.wall_time,
    )
    return result


def evaluate_fit(result: FitResult, batch: TrajectoryBatch) -> float:
    """
    Trajectory loss of a fitted map on new raw trajectories of its target.

    The batch is standardized with the constants of the fit, not its own.
    """
    if result.normalization is not None:
        batch = apply_normalization(batch, result.normalization)
    archetype = result.archetype.model_copy(update={"params": result.beta_star})
    return trajectory_loss(
        result.model,
        archetype,
        None,
        batch,
        result.config.substeps,
        source_t_max=result.config.source_t_max,
    )


# ---------------------------------------------------------------------------
# Persistence


class FitDocument(BaseModel):
    """JSON form of a FitResult; weights live in the referenced checkpoint."""

    model_config = ConfigDict(extra="forbid")

    archetype_name: str
    target_name: str
    archetype: SystemSpec
    beta_star: ArchetypeParams
    train_mse: float
    test_mse: float
    complexity: float
    complexity_lp: float
    loss_curve: list[float]
    normalization: Normalization | None
    config: FitConfig
    perturbation: PerturbationSpec | None = None
    checkpoint: str


def fit_stem(archetype_name: str, target_name: str) -> str:
    """File stem of a fit's artifacts."""
    return f"{archetype_name}__{target_name}"


def save_fit(result: FitResult, out_dir: Path, stem: str | None = None) -> list[Path]:
    """
    Write the fit JSON, the model checkpoint and the loss curve CSV.

    Wall time is left out so that identical fits produce identical bytes.

    Returns:
        Written paths, fit JSON first.

    """
    stem = stem or fit_stem(result.archetype_name, result.target_name)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = save_checkpoint(result.model, out_dir / f"{stem}{CHECKPOINT_SUFFIX}")
    loss_path = out_dir / f"{stem}{LOSS_SUFFIX}"
    with loss_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        writer.writerows([epoch, format(loss, ".17g")] for epoch, loss in enumerate(result.loss_curve))
    doc = FitDocument(
        archetype_name=result.archetype_name,
        target_name=result.target_name,
        archetype=result.archetype,
        beta_star=result.beta_star,
        train_mse=result.train_mse,
        test_mse=result.test_mse,
        complexity=result.complexity,
        complexity_lp=result.complexity_lp,
        loss_curve=result.loss_curve,
        normalization=result.normalization,
        config=result.config,
        perturbation=result.perturbation,
        checkpoint=checkpoint.name,
    )
    fit_path = out_dir / f"{stem}{FIT_SUFFIX}"
    fit_path.write_text(doc.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return [fit_path, checkpoint, loss_path]


def load_fit(path: Path) -> FitResult:
    """Read a fit JSON and its checkpoint."""
    doc = FitDocument.model_validate_json(path.read_text(encoding="utf-8"))
    model = load_checkpoint(path.parent / doc.checkpoint)
    return FitResult(
        model=model,
        archetype=doc.archetype,
        beta_star=doc.beta_star,
        train_mse=doc.train_mse,
        test_mse=doc.test_mse,
        complexity=doc.complexity,
        complexity_lp=doc.complexity_lp,
        loss_curve=doc.loss_curve,
        normalization=doc.normalization,
        config=doc.config,
        archetype_name=doc.archetype_name,
        target_name=doc.target_name,
        perturbation=doc.perturbation,
    )
