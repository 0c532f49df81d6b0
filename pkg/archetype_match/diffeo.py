"""
Learnable diffeomorphism.

The map is the time-1 flow of a one-hidden-layer ReLU field, integrated with
K fixed RK4 steps; the inverse integrates the same partition backwards.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from .const import DEFAULT_FLOW_STEPS, DEFAULT_HIDDEN
from .exceptions import DimensionMismatch, EmptyPointSet, NonFiniteState
from .sim import Stream, rk4_step, stream

if TYPE_CHECKING:
    from pathlib import Path

    from numpy.typing import ArrayLike, NDArray

LOGGER = logging.getLogger(__name__)

NormKind = Literal["fro", "op"]


class MlpField(nn.Module):
    """u(x) = W2 relu(W1 x + b1) + b2."""

    def __init__(self, dim: int, hidden: int = DEFAULT_HIDDEN) -> None:
        """Create a float64 field with zero parameters."""
        super().__init__()
        self.dim = dim
        self.hidden = hidden
        self.layer1 = nn.Linear(dim, hidden, dtype=torch.float64)
        self.layer2 = nn.Linear(hidden, dim, dtype=torch.float64)
        with torch.no_grad():
            for param in self.parameters():
                param.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Evaluate the field on (..., d) states."""
        return self.layer2(torch.relu(self.layer1(x)))

    def init_normal(self, seed: int, mean: float = 0.0, std: float | None = None) -> None:
        """
        Draw parameters from a seeded stream.

        Args:
            seed: Stream seed.
            mean: Mean of every parameter when `std` is given.
            std: If None, weights ~ N(0, 1/sqrt(fan_in)) and biases are 0;
                otherwise weights and biases ~ N(mean, std).

        """
        rng = stream(seed, Stream.MODEL)
        with torch.no_grad():
            for layer in (self.layer1, self.layer2):
                fan_in = layer.in_features
                if std is None:
                    w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), layer.weight.shape)
                    b = np.zeros(layer.bias.shape)
                else:
                    w = rng.normal(mean, std, layer.weight.shape)
                    b = rng.normal(mean, std, layer.bias.shape)
                layer.weight.copy_(torch.from_numpy(w))
                layer.bias.copy_(torch.from_numpy(b))


class DiffeoModel(nn.Module):
    """Phi(x): flow of ``scale * field`` over t in [0, 1] in K RK4 steps."""

    def __init__(
        self,
        dim: int,
        hidden: int = DEFAULT_HIDDEN,
        flow_steps: int = DEFAULT_FLOW_STEPS,
        scale: float = 1.0,
        seed: int | None = None,
    ) -> None:
        """Create an identity model; call `init_normal` or load weights to deform it."""
        super().__init__()
        if flow_steps < 1:
            msg = f"flow_steps must be >= 1, got {flow_steps}"
            raise ValueError(msg)
        self.field = MlpField(dim, hidden)
        self.flow_steps = flow_steps
        self.scale = scale
        self.seed = seed

    @classmethod
    def initialized(
        cls,
        dim: int,
        hidden: int = DEFAULT_HIDDEN,
        flow_steps: int = DEFAULT_FLOW_STEPS,
        seed: int = 0,
    ) -> DiffeoModel:
        """Model with the default N(0, 1/sqrt(fan_in)) initialization."""
        model = cls(dim, hidden, flow_steps, seed=seed)
        model.field.init_normal(seed)
        return model

    @property
    def dim(self) -> int:
        """State dimension."""
        return self.field.dim

    @property
    def hidden(self) -> int:
        """Hidden width of the field."""
        return self.field.hidden

    def velocity(self, x: torch.Tensor) -> torch.Tensor:
        """The (scaled) generating vector field."""
        if self.scale == 1.0:
            return self.field(x)
        return self.scale * self.field(x)

    def _flow(self, x: torch.Tensor, h: float, *, check: bool) -> torch.Tensor:
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(self.dim, x.shape[-1])
        for step in range(self.flow_steps):
            x = rk4_step(self.velocity, x, h)
            if check and not torch.isfinite(x).all():
                raise NonFiniteState(step + 1)
        return x

    def forward(self, x: torch.Tensor, *, check: bool = True) -> torch.Tensor:
        """Phi(x), integrating t from 0 to 1."""
        return self._flow(x, 1.0 / self.flow_steps, check=check)

    def inverse(self, y: torch.Tensor, *, check: bool = True) -> torch.Tensor:
        """Phi^-1(y), integrating the same partition from t = 1 back to 0."""
        return self._flow(y, -1.0 / self.flow_steps, check=check)

    def parameter_vector(self) -> torch.Tensor:
        """theta flattened as W1, b1, W2, b2 (row-major)."""
        return nn.utils.parameters_to_vector(self.parameters())

    def load_parameter_vector(self, theta: ArrayLike) -> None:
        """Overwrite theta from a flat vector in `parameter_vector` order."""
        with torch.no_grad():
            nn.utils.vector_to_parameters(
                torch.as_tensor(np.asarray(theta, dtype=np.float64)), self.parameters()
            )


def _states(x: ArrayLike) -> torch.Tensor:
    return torch.from_numpy(np.array(x, dtype=np.float64, ndmin=1))


def forward(model: DiffeoModel, x: ArrayLike) -> NDArray[np.float64]:
    """Apply Phi to a state or a stack of states."""
    with torch.no_grad():
        return model(_states(x)).numpy()


def inverse(model: DiffeoModel, y: ArrayLike) -> NDArray[np.float64]:
    """Apply Phi^-1 to a state or a stack of states."""
    with torch.no_grad():
        return model.inverse(_states(y)).numpy()


def jacobians(model: DiffeoModel, points: torch.Tensor) -> torch.Tensor:
    """Forward-mode Jacobians of Phi at (N, d) points, shape (N, d, d)."""

    def single(z: torch.Tensor) -> torch.Tensor:
        return model(z, check=False)

    jac = torch.func.vmap(torch.func.jacfwd(single))(points).detach()
    if not torch.isfinite(jac).all():
        raise NonFiniteState(model.flow_steps)
    return jac


def jacobian(model: DiffeoModel, x: ArrayLike) -> NDArray[np.float64]:
    """dPhi/dx at one point, a d x d matrix."""
    return jacobians(model, _states(x)[None, :])[0].numpy()


@dataclass(frozen=True)
class ComplexityReport:
    """Deviation of the map's Jacobian from the identity over a point set."""

    per_point: NDArray[np.float64]
    mean: float
    lp: float
    p: float
    norm_kind: NormKind


def complexity(
    model: DiffeoModel,
    points: ArrayLike,
    norm: NormKind = "fro",
    p: float = 2.0,
) -> ComplexityReport:
    """
    Average |J_Phi(x) - I| over the evaluation points.

    Args:
        model: The map.
        points: (N, d) evaluation points, typically all trajectory samples.
        norm: "fro" (Frobenius) or "op" (spectral norm).
        p: Exponent of the additional L^p aggregate.

    Returns:
        Report with per-point values, their arithmetic mean and the
        (mean |.|^p)^(1/p) aggregate.

    Raises:
        EmptyPointSet: No points were given.

    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, model.dim)
    if len(pts) == 0:
        msg = "complexity needs at least one point"
        raise EmptyPointSet(msg)
    jac = jacobians(model, torch.from_numpy(pts.copy()))
    deviation = jac - torch.eye(model.dim, dtype=torch.float64)
    ord_ = "fro" if norm == "fro" else 2
    per_point = torch.linalg.matrix_norm(deviation, ord=ord_).numpy()
    return ComplexityReport(
        per_point=per_point,
        mean=float(per_point.mean()),
        lp=float(np.mean(per_point**p) ** (1.0 / p)),
        p=p,
        norm_kind=norm,
    )


# ---------------------------------------------------------------------------
# Checkpoints


class Checkpoint(BaseModel):
    """
    Portable model checkpoint.

    ``weights`` holds W1 (hidden x dim), b1 (hidden), W2 (dim x hidden) and
    b2 (dim), each flattened row-major and concatenated in that order.
    """

    model_config = ConfigDict(extra="forbid")

    dim: int = Field(ge=1)
    hidden: int = Field(ge=1)
    flow_steps: int = Field(ge=1)
    scale: float = 1.0
    seed: int | None = None
    weights: list[float]

    @model_validator(mode="after")
    def _weight_count(self) -> Checkpoint:
        expected = 2 * self.hidden * self.dim + self.hidden + self.dim
        if len(self.weights) != expected:
            msg = f"expected {expected} weights, got {len(self.weights)}"
            raise ValueError(msg)
        return self


def to_checkpoint(model: DiffeoModel) -> Checkpoint:
    """Snapshot a model."""
    return Checkpoint(
        dim=model.dim,
        hidden=model.hidden,
        flow_steps=model.flow_steps,
        scale=model.scale,
        seed=model.seed,
        weights=model.parameter_vector().detach().tolist(),
    )


def from_checkpoint(checkpoint: Checkpoint) -> DiffeoModel:
    """Rebuild a model from a snapshot."""
    model = DiffeoModel(
        checkpoint.dim,
        checkpoint.hidden,
        checkpoint.flow_steps,
        scale=checkpoint.scale,
        seed=checkpoint.seed,
    )
    model.load_parameter_vector(checkpoint.weights)
    return model


def save_checkpoint(model: DiffeoModel, path: Path) -> Path:
    """Write a checkpoint JSON file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_checkpoint(model).model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path: Path) -> DiffeoModel:
    """Read a checkpoint JSON file."""
    return from_checkpoint(Checkpoint.model_validate_json(path.read_text(encoding="utf-8")))
