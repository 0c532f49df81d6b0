"""
Trajectory generation.

Fixed-step RK4 for ODEs, Euler-Maruyama for SDEs, initial-condition
sampling, standardization and train/test splitting. Integrators work on
batched torch tensors so the loss in `train` can differentiate through the
same code that produces the data.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import TYPE_CHECKING, Annotated, Any, Literal

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .const import DEFAULT_N_TRAJ, DEFAULT_SPLIT_RATIO, DEFAULT_SUBSTEPS, DEGENERATE_STD
from .exceptions import DegenerateDimension, DimensionMismatch, NonFiniteState

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

    from .archetypes import FieldFn

LOGGER = logging.getLogger(__name__)


class Stream(IntEnum):
    """Purposes of the independent random streams derived from one seed."""

    INITIAL = 0
    NOISE = 1
    SPLIT = 2
    SHUFFLE = 3
    GP = 4
    MODEL = 5


def stream(seed: int, purpose: Stream, *index: int) -> np.random.Generator:
    """
    Return the random generator for one purpose (and optional index) of a seed.

    Streams are spawned from a `SeedSequence`, so drawing from one never
    shifts another; trajectory k keeps its noise when B grows.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(purpose), *index)))


class SimConfig(BaseModel):
    """Sampling grid and integrator settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    dt: float = Field(gt=0)
    t_max: float = Field(ge=0)
    n_traj: int = Field(default=DEFAULT_N_TRAJ, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    substeps: int = Field(default=DEFAULT_SUBSTEPS, ge=1)

    @property
    def n_steps(self) -> int:
        """Number of recorded intervals n = round(T_max / dt)."""
        return round(self.t_max / self.dt)

    @property
    def times(self) -> NDArray[np.float64]:
        """Recorded sample times 0, dt, ..., n dt."""
        return np.arange(self.n_steps + 1) * self.dt


class Normalization(BaseModel):
    """Per-dimension standardization constants, x_norm = (x - mu) / sigma."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mu: tuple[float, ...]
    sigma: tuple[float, ...]

    def apply(self, points: ArrayLike) -> NDArray[np.float64]:
        """Map original coordinates to normalized ones."""
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.mu)) / np.asarray(self.sigma)

    def invert(self, points: ArrayLike) -> NDArray[np.float64]:
        """Map normalized coordinates back to the original ones."""
        return np.asarray(points, dtype=np.float64) * np.asarray(self.sigma) + np.asarray(self.mu)

    def then(self, mu: ArrayLike, sigma: ArrayLike) -> Normalization:
        """Compose with a further standardization step."""
        mu_arr, sigma_arr = np.asarray(mu), np.asarray(sigma)
        own_mu, own_sigma = np.asarray(self.mu), np.asarray(self.sigma)
        return Normalization(
            mu=tuple((own_mu + own_sigma * mu_arr).tolist()),
            sigma=tuple((own_sigma * sigma_arr).tolist()),
        )


class BatchMeta(BaseModel):
    """Provenance of a trajectory batch."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    source: str = "unknown"
    spec: dict[str, Any] | None = None
    seed: int | None = None
    sim: SimConfig | None = None
    noise_sigma: float = Field(default=0.0, ge=0)


@dataclass(frozen=True)
class TrajectoryBatch:
    """B trajectories of n+1 samples in d dimensions on a uniform grid."""

    data: NDArray[np.float64]
    dt: float
    meta: BatchMeta = field(default_factory=BatchMeta)
    normalization: Normalization | None = None

    def __post_init__(self) -> None:
        """Validate shape and finiteness."""
        if self.data.ndim != 3:  # noqa: PLR2004
            msg = f"trajectory data must be B x (n+1) x d, got shape {self.data.shape}"
            raise ValueError(msg)
        if not np.isfinite(self.data).all():
            msg = "trajectory data contains non-finite values"
            raise ValueError(msg)

    @property
    def n_traj(self) -> int:
        """Number of trajectories B."""
        return self.data.shape[0]

    @property
    def n_steps(self) -> int:
        """Number of recorded intervals n."""
        return self.data.shape[1] - 1

    @property
    def dim(self) -> int:
        """State dimension d."""
        return self.data.shape[2]

    @property
    def times(self) -> NDArray[np.float64]:
        """Sample times."""
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def initial_states(self) -> NDArray[np.float64]:
        """First sample of every trajectory, shape (B, d)."""
        return self.data[:, 0, :]

    def points(self) -> NDArray[np.float64]:
        """All B (n+1) samples stacked, shape (B (n+1), d)."""
        return self.data.reshape(-1, self.dim)

    def select(self, indices: ArrayLike) -> TrajectoryBatch:
        """Sub-batch with the given trajectories, in the given order."""
        return replace(self, data=self.data[np.asarray(indices, dtype=int)])

    def as_tensor(self) -> torch.Tensor:
        """Trajectory data as a float64 tensor."""
        return torch.from_numpy(np.ascontiguousarray(self.data))


# ---------------------------------------------------------------------------
# Initial conditions


class Annulus(BaseModel):
    """Uniform-in-area annulus r_min <= |x - center| <= r_max in the plane."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["annulus"] = "annulus"
    r_min: float = Field(ge=0)
    r_max: float = Field(gt=0)
    center: tuple[float, float] = (0.0, 0.0)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _ordered(self) -> Annulus:
        if self.r_min >= self.r_max:
            msg = f"r_min={self.r_min} must be below r_max={self.r_max}"
            raise ValueError(msg)
        return self

    @property
    def dim(self) -> int:
        """State dimension of the samples."""
        return 2


class Box(BaseModel):
    """Uniform axis-aligned box lo < x < hi."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["box"] = "box"
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _ordered(self) -> Box:
        if len(self.lo) != len(self.hi) or not self.lo:
            msg = "lo and hi must be non-empty and of equal length"
            raise ValueError(msg)
        if any(lo >= hi for lo, hi in zip(self.lo, self.hi, strict=True)):
            msg = f"lo {self.lo} must be below hi {self.hi} componentwise"
            raise ValueError(msg)
        return self

    @property
    def dim(self) -> int:
        """State dimension of the samples."""
        return len(self.lo)


InitSampler = Annotated[Annulus | Box, Field(discriminator="kind")]


def sample_initial(sampler: Annulus | Box, count: int) -> NDArray[np.float64]:
    """
    Draw initial conditions uniformly over the sampler's region.

    The draws come from one stream of the sampler's seed; the first k of
    `count` samples do not depend on `count`.

    Returns:
        Array of shape (count, d).

    """
    rng = stream(sampler.seed, Stream.INITIAL)
    u = rng.random((count, sampler.dim))
    if isinstance(sampler, Box):
        lo, hi = np.asarray(sampler.lo), np.asarray(sampler.hi)
        return lo + u * (hi - lo)
    # Inverse-CDF in r^2 gives uniform density in area.
    r = np.sqrt(sampler.r_min**2 + u[:, 0] * (sampler.r_max**2 - sampler.r_min**2))
    theta = 2.0 * np.pi * u[:, 1]
    return np.asarray(sampler.center) + np.stack((r * np.cos(theta), r * np.sin(theta)), axis=-1)


# ---------------------------------------------------------------------------
# Integrators


def rk4_step(f: FieldFn, x: torch.Tensor, h: float | torch.Tensor) -> torch.Tensor:
    """One classical Runge-Kutta step of size h."""
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_path(
    f: FieldFn, x0: torch.Tensor, dt: float, n_steps: int, substeps: int = 1
) -> torch.Tensor:
    """
    Integrate with RK4 and record every dt.

    Args:
        f: Vector field on (..., d) tensors.
        x0: Initial states (..., d).
        dt: Recording interval.
        n_steps: Number of recorded intervals.
        substeps: Internal steps per interval.

    Returns:
        Tensor of shape (..., n_steps + 1, d) whose first sample is x0.

    Raises:
        NonFiniteState: A recorded state is NaN or infinite.

    """
    h = dt / substeps
    x, states = x0, [x0]
    for step in range(1, n_steps + 1):
        for _ in range(substeps):
            x = rk4_step(f, x, h)
        if not torch.isfinite(x).all():
            raise NonFiniteState(step)
        states.append(x)
    return torch.stack(states, dim=-2)


def euler_maruyama_path(
    f: FieldFn,
    x0: torch.Tensor,
    dt: float,
    n_steps: int,
    sigma: float,
    noise: torch.Tensor,
) -> torch.Tensor:
    """
    Euler-Maruyama x_{k+1} = x_k + f(x_k) h + sigma sqrt(h) xi_k.

    Args:
        f: Drift on (B, d) tensors.
        x0: Initial states (B, d).
        dt: Recording interval.
        n_steps: Number of recorded intervals.
        sigma: Diffusion coefficient.
        noise: Standard normal draws of shape (B, n_steps * substeps, d).

    Returns:
        Tensor of shape (B, n_steps + 1, d).

    """
    substeps = noise.shape[1] // max(n_steps, 1)
    h = dt / max(substeps, 1)
    scale = sigma * math.sqrt(h)
    x, states = x0, [x0]
    for step in range(n_steps):
        for sub in range(substeps):
            x = x + f(x) * h + scale * noise[:, step * substeps + sub]
        if not torch.isfinite(x).all():
            raise NonFiniteState(step + 1)
        states.append(x)
    return torch.stack(states, dim=-2)


def _as_batch(x0: ArrayLike) -> torch.Tensor:
    arr = np.asarray(x0, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr[None, :]
    return torch.from_numpy(arr.copy())


def wiener_increments(seed: int, n_traj: int, n_increments: int, dim: int) -> torch.Tensor:
    """Standard normal draws, one independent stream per trajectory index."""
    draws = [
        stream(seed, Stream.NOISE, b).standard_normal((n_increments, dim)) for b in range(n_traj)
    ]
    return torch.from_numpy(np.stack(draws)) if draws else torch.zeros((0, n_increments, dim))


def simulate_batch(
    f: FieldFn, x0: ArrayLike, cfg: SimConfig, sigma: float = 0.0
) -> NDArray[np.float64]:
    """
    Integrate a batch of initial conditions on the recording grid of `cfg`.

    sigma = 0 uses RK4; sigma > 0 uses Euler-Maruyama with noise drawn from
    per-trajectory streams of ``cfg.seed``.

    Returns:
        Array of shape (B, n + 1, d).

    """
    if sigma < 0:
        msg = f"sigma must be non-negative, got {sigma}"
        raise ValueError(msg)
    states = _as_batch(x0)
    LOGGER.debug(
        "Integrating %d trajectories for %d steps (substeps=%d, sigma=%s)",
        states.shape[0],
        cfg.n_steps,
        cfg.substeps,
        sigma,
    )
    with torch.no_grad():
        if sigma == 0:
            path = rk4_path(f, states, cfg.dt, cfg.n_steps, cfg.substeps)
        else:
            noise = wiener_increments(
                cfg.seed, states.shape[0], cfg.n_steps * cfg.substeps, states.shape[1]
            )
            path = euler_maruyama_path(f, states, cfg.dt, cfg.n_steps, sigma, noise)
    return path.numpy()


def integrate_ode(f: FieldFn, x0: ArrayLike, cfg: SimConfig) -> NDArray[np.float64]:
    """RK4 trajectory of a single initial condition, shape (n + 1, d)."""
    return simulate_batch(f, x0, cfg)[0]


def integrate_sde(f: FieldFn, sigma: float, x0: ArrayLike, cfg: SimConfig) -> NDArray[np.float64]:
    """Euler-Maruyama trajectory of a single initial condition, shape (n + 1, d)."""
    if sigma < 0:
        msg = f"sigma must be non-negative, got {sigma}"
        raise ValueError(msg)
    states = _as_batch(x0)
    noise = wiener_increments(cfg.seed, 1, cfg.n_steps * cfg.substeps, states.shape[1])
    with torch.no_grad():
        return euler_maruyama_path(f, states, cfg.dt, cfg.n_steps, sigma, noise)[0].numpy()


# ---------------------------------------------------------------------------
# Preprocessing


def normalize(
    batch: TrajectoryBatch,
) -> tuple[TrajectoryBatch, NDArray[np.float64], NDArray[np.float64]]:
    """
    Standardize every dimension over all B (n+1) samples.

    The returned batch carries the composed normalization, so repeated
    calls still map back to the original coordinates.

    Returns:
        The standardized batch and this step's (mu, sigma).

    Raises:
        DegenerateDimension: A dimension has (numerically) zero spread.

    """
    points = batch.points()
    mu = points.mean(axis=0)
    sigma = points.std(axis=0)
    degenerate = np.flatnonzero(sigma < DEGENERATE_STD)
    if degenerate.size:
        raise DegenerateDimension(degenerate.tolist())
    data = (batch.data - mu) / sigma
    previous = batch.normalization or Normalization(
        mu=(0.0,) * batch.dim, sigma=(1.0,) * batch.dim
    )
    composed = previous.then(mu, sigma)
    return replace(batch, data=data, normalization=composed), mu, sigma


def apply_normalization(batch: TrajectoryBatch, norm: Normalization) -> TrajectoryBatch:
    """Standardize a raw batch with constants computed elsewhere."""
    if len(norm.mu) != batch.dim:
        raise DimensionMismatch(len(norm.mu), batch.dim, "normalization")
    return replace(batch, data=norm.apply(batch.data), normalization=norm)


def split(
    batch: TrajectoryBatch, ratio: float = DEFAULT_SPLIT_RATIO, seed: int = 0
) -> tuple[TrajectoryBatch, TrajectoryBatch]:
    """
    Partition trajectories (never time points) into train and test.

    Returns:
        (train, test), each keeping trajectories in ascending index order.

    """
    if batch.n_traj < 2:  # noqa: PLR2004
        msg = f"need at least 2 trajectories to split, got {batch.n_traj}"
        raise ValueError(msg)
    if not 0 < ratio < 1:
        msg = f"split ratio must be in (0, 1), got {ratio}"
        raise ValueError(msg)
    order = stream(seed, Stream.SPLIT).permutation(batch.n_traj)
    n_train = min(max(round(ratio * batch.n_traj), 1), batch.n_traj - 1)
    return batch.select(np.sort(order[:n_train])), batch.select(np.sort(order[n_train:]))


def trajectory_distance(a: TrajectoryBatch, b: TrajectoryBatch) -> float:
    """
    Time-averaged point-wise distance between batches from shared initial conditions.

    Mean over trajectories and samples of |a(t) - b(t)|.
    """
    if a.data.shape != b.data.shape:
        msg = f"batch shapes differ: {a.data.shape} vs {b.data.shape}"
        raise ValueError(msg)
    return float(np.linalg.norm(a.data - b.data, axis=-1).mean())


def max_deviation(a: TrajectoryBatch, b: TrajectoryBatch) -> NDArray[np.float64]:
    """Largest point-wise distance per sample time, over all trajectories."""
    if a.data.shape != b.data.shape:
        msg = f"batch shapes differ: {a.data.shape} vs {b.data.shape}"
        raise ValueError(msg)
    return np.linalg.norm(a.data - b.data, axis=-1).max(axis=0)
