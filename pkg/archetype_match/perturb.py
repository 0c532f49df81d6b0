"""
Controlled deformations of a reference system.

Two families: a random flow-map deformation interpolated from the identity
(topology preserved), and an additive Gaussian-process vector field of fixed
RMS norm (topology may break). Also the Grönwall bound on the trajectory
deviation a field perturbation can cause.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from ._compat import StrEnum
from functools import lru_cache
from typing import TYPE_CHECKING

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .archetypes import FieldFn, SystemSpec, field_fn
from .const import (
    DEFAULT_FLOW_STEPS,
    DEFAULT_GP_BOUNDS,
    DEFAULT_GP_LATTICE,
    DEFAULT_GP_PADDING,
    DEFAULT_GP_VARIANCE,
    GP_LENGTHSCALE_RANGE,
    RANDOM_DIFFEO_HIDDEN,
    RANDOM_DIFFEO_WEIGHT_MEAN,
    RANDOM_DIFFEO_WEIGHT_STD,
)
from .diffeo import DiffeoModel
from .exceptions import DegenerateLattice, DimensionMismatch
from .sim import SimConfig, Stream, simulate_batch, stream

if TYPE_CHECKING:
    from pathlib import Path

    from numpy.typing import ArrayLike, NDArray

    from .sim import TrajectoryBatch

LOGGER = logging.getLogger(__name__)

Bounds = tuple[tuple[float, float], tuple[float, float]]
_FD_STEP = 1e-6


class PerturbationKind(StrEnum):
    """Deformation families."""

    DIFFEO_INTERP = "DiffeoInterp"
    GP_FIELD = "GpField"


class GpKernelParams(BaseModel):
    """RBF kernel sigma^2 exp(-|x - x'|^2 / 2 l^2) and its sampling lattice."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    variance: float = Field(default=DEFAULT_GP_VARIANCE, gt=0)
    lengthscale: float | None = Field(default=None, gt=0)
    """Fixed lengthscale; None draws it uniformly from [0.1, 1] per seed."""
    lattice: int = DEFAULT_GP_LATTICE
    bounds: Bounds = DEFAULT_GP_BOUNDS
    """((x_lo, y_lo), (x_hi, y_hi)) of the lattice."""


class PerturbationSpec(BaseModel):
    """One member of a deformation family."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: PerturbationKind
    s: float = Field(ge=0)
    seed: int = Field(default=0, ge=0)
    gp: GpKernelParams | None = None

    @model_validator(mode="after")
    def _check_scale(self) -> PerturbationSpec:
        if self.kind is PerturbationKind.DIFFEO_INTERP and self.s > 1:
            msg = f"interpolation scale must be in [0, 1], got {self.s}"
            raise ValueError(msg)
        return self

    @property
    def kernel(self) -> GpKernelParams:
        """Kernel parameters, defaulted."""
        return self.gp or GpKernelParams()


def padded_bounds(points: ArrayLike, padding: float = DEFAULT_GP_PADDING) -> Bounds:
    """Bounding box of 2-D points, enlarged by `padding` of its extent on every side."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    margin = padding * (hi - lo)
    lo, hi = lo - margin, hi + margin
    return ((float(lo[0]), float(lo[1])), (float(hi[0]), float(hi[1])))


def trajectory_bounds(batch: TrajectoryBatch, padding: float = DEFAULT_GP_PADDING) -> Bounds:
    """Padded bounding box of every state a planar batch visits."""
    if batch.dim != 2:  # noqa: PLR2004
        raise DimensionMismatch(2, batch.dim, "GP lattice")
    return padded_bounds(batch.data, padding)


# ---------------------------------------------------------------------------
# Flow-map deformation


def random_diffeo_interp(spec: PerturbationSpec, dim: int = 2) -> DiffeoModel:
    """
    Random deformation Psi_s, the flow of s times a random MLP field.

    Weights and biases are drawn N(0.02, 0.5) from the perturbation seed; s = 0 is
    the identity.
    """
    if spec.kind is not PerturbationKind.DIFFEO_INTERP:
        msg = f"expected a {PerturbationKind.DIFFEO_INTERP} spec, got {spec.kind}"
        raise ValueError(msg)
    model = DiffeoModel(
        dim, RANDOM_DIFFEO_HIDDEN, DEFAULT_FLOW_STEPS, scale=spec.s, seed=spec.seed
    )
    model.field.init_normal(spec.seed, RANDOM_DIFFEO_WEIGHT_MEAN, RANDOM_DIFFEO_WEIGHT_STD)
    return model


# ---------------------------------------------------------------------------
# Gaussian-process field


def lattice_axes(kernel: GpKernelParams) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Grid coordinates along x and y.

    Raises:
        DegenerateLattice: Fewer than two nodes per axis or an empty box.

    """
    (x_lo, y_lo), (x_hi, y_hi) = kernel.bounds
    if kernel.lattice < 2 or not (x_lo < x_hi and y_lo < y_hi):  # noqa: PLR2004
        msg = f"lattice of {kernel.lattice} nodes over {kernel.bounds} has no extent"
        raise DegenerateLattice(msg)
    return np.linspace(x_lo, x_hi, kernel.lattice), np.linspace(y_lo, y_hi, kernel.lattice)


def rbf_kernel(points: NDArray[np.float64], variance: float, lengthscale: float) -> NDArray[np.float64]:
    """Gram matrix of the RBF kernel."""
    sq = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=-1)
    return variance * np.exp(-sq / (2.0 * lengthscale**2))


def sample_gp_values(
    kernel: GpKernelParams, seed: int
) -> tuple[float, NDArray[np.float64]]:
    """
    Draw both field components on the lattice from the zero-mean GP.

    Returns:
        The lengthscale used and raw values of shape (m, m, 2), indexed [ix, iy].

    """
    xs, ys = lattice_axes(kernel)
    rng = stream(seed, Stream.GP)
    lengthscale = kernel.lengthscale or float(rng.uniform(*GP_LENGTHSCALE_RANGE))
    nodes = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    gram = rbf_kernel(nodes, kernel.variance, lengthscale)
    draws = rng.multivariate_normal(
        np.zeros(len(nodes)), gram, size=2, method="eigh", check_valid="ignore"
    )
    return lengthscale, draws.T.reshape(len(xs), len(ys), 2)


@lru_cache(maxsize=64)
def _scaled_lattice(spec: PerturbationSpec) -> tuple[float, NDArray[np.float64]]:
    lengthscale, raw = sample_gp_values(spec.kernel, spec.seed)
    rms = math.sqrt(float(np.mean(np.sum(raw**2, axis=-1))))
    return lengthscale, raw * (spec.s / rms)


@dataclass(frozen=True)
class GpField:
    """Bilinearly interpolated lattice field, clamped to the lattice edge."""

    xs: torch.Tensor
    ys: torch.Tensor
    values: torch.Tensor
    lengthscale: float

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        """Evaluate the perturbation at (..., 2) states."""
        if x.shape[-1] != 2:  # noqa: PLR2004
            raise DimensionMismatch(2, x.shape[-1])
        m = self.xs.shape[0]
        gx = ((x[..., 0] - self.xs[0]) / (self.xs[1] - self.xs[0])).clamp(0, m - 1)
        gy = ((x[..., 1] - self.ys[0]) / (self.ys[1] - self.ys[0])).clamp(0, m - 1)
        ix = gx.detach().floor().long().clamp(max=m - 2)
        iy = gy.detach().floor().long().clamp(max=m - 2)
        fx, fy = (gx - ix)[..., None], (gy - iy)[..., None]
        v = self.values
        return (
            (1 - fx) * (1 - fy) * v[ix, iy]
            + fx * (1 - fy) * v[ix + 1, iy]
            + (1 - fx) * fy * v[ix, iy + 1]
            + fx * fy * v[ix + 1, iy + 1]
        )

    def rms(self) -> float:
        """Root-mean-square norm over the lattice nodes."""
        return float(torch.sqrt(torch.mean(torch.sum(self.values**2, dim=-1))))


def gp_field(spec: PerturbationSpec) -> GpField:
    """The perturbation Delta of a GpField spec, rescaled to RMS norm s."""
    if spec.kind is not PerturbationKind.GP_FIELD:
        msg = f"expected a {PerturbationKind.GP_FIELD} spec, got {spec.kind}"
        raise ValueError(msg)
    xs, ys = lattice_axes(spec.kernel)
    lengthscale, values = _scaled_lattice(spec)
    return GpField(
        xs=torch.from_numpy(xs),
        ys=torch.from_numpy(ys),
        values=torch.from_numpy(values.copy()),
        lengthscale=lengthscale,
    )


def gp_field_perturbation(spec: PerturbationSpec, base: SystemSpec | FieldFn) -> FieldFn:
    """
    Return f + Delta for a 2-D base field.

    s = 0 returns the base field itself, so trajectories are unchanged bit
    for bit.
    """
    f = field_fn(base) if isinstance(base, SystemSpec) else base
    if isinstance(base, SystemSpec) and base.dim != 2:  # noqa: PLR2004
        raise DimensionMismatch(2, base.dim, "perturbed system")
    if spec.s == 0:
        lattice_axes(spec.kernel)
        return f
    delta = gp_field(spec)
    LOGGER.debug("GP perturbation s=%s seed=%d lengthscale=%.3f", spec.s, spec.seed, delta.lengthscale)

    def perturbed(x: torch.Tensor) -> torch.Tensor:
        return f(x) + delta(x)

    return perturbed


def write_lattice_csv(spec: PerturbationSpec, path: Path) -> Path:
    """Dump the sampled perturbation as ``x,y,dx,dy`` rows."""
    delta = gp_field(spec)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["x", "y", "dx", "dy"])
        for i, x in enumerate(delta.xs.tolist()):
            for j, y in enumerate(delta.ys.tolist()):
                dx, dy = delta.values[i, j].tolist()
                writer.writerow([format(v, ".17g") for v in (x, y, dx, dy)])
    return path


# ---------------------------------------------------------------------------
# Grönwall bound


class GronwallInput(BaseModel):
    """Lipschitz constant, perturbation size and horizon."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    lipschitz: float = Field(gt=0)
    delta_sup: float = Field(ge=0)
    t: float = Field(ge=0)


def gronwall_bound(data: GronwallInput) -> float:
    """Point-wise deviation bound (delta / L)(e^{L t} - 1)."""
    return data.delta_sup / data.lipschitz * math.expm1(data.lipschitz * data.t)


def integrated_bound(data: GronwallInput) -> float:
    """Time-integrated value delta e^{L t} / L^2, recorded for reference only."""
    return data.delta_sup * math.exp(data.lipschitz * data.t) / data.lipschitz**2


def estimate_lipschitz(f: FieldFn, kernel: GpKernelParams) -> float:
    """Largest spectral norm of the central-difference Jacobian over the lattice."""
    xs, ys = lattice_axes(kernel)
    nodes = torch.from_numpy(np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2))
    columns = []
    with torch.no_grad():
        for axis in range(2):
            step = torch.zeros(2, dtype=torch.float64)
            step[axis] = _FD_STEP
            columns.append((f(nodes + step) - f(nodes - step)) / (2 * _FD_STEP))
        jac = torch.stack(columns, dim=-1)
    return float(torch.linalg.matrix_norm(jac, ord=2).max())


@dataclass(frozen=True)
class GronwallReport:
    """Measured deviation against the Grönwall bound."""

    lipschitz: float
    delta_sup: float
    integrated: float
    deviations: NDArray[np.float64]
    """Largest deviation over trajectories at each sample time."""
    bounds: NDArray[np.float64]
    """Point-wise bound at each sample time."""

    @property
    def max_deviation(self) -> float:
        """Largest deviation over the whole horizon."""
        return float(self.deviations.max())

    @property
    def bound(self) -> float:
        """Bound at the end of the horizon."""
        return float(self.bounds[-1])

    @property
    def holds(self) -> bool:
        """Whether the deviation stays within the bound at every sample time."""
        return bool(np.all(self.deviations <= self.bounds))


def gronwall_check(
    base: SystemSpec, spec: PerturbationSpec, x0: ArrayLike, cfg: SimConfig
) -> GronwallReport:
    """
    Simulate base and perturbed systems from shared initial conditions.

    delta_sup is the largest |Delta| seen at the states of either run; L is
    estimated on the perturbation lattice.
    """
    f = field_fn(base)
    g = gp_field_perturbation(spec, base)
    clean = simulate_batch(f, x0, cfg)
    perturbed = simulate_batch(g, x0, cfg)
    states = torch.from_numpy(np.concatenate((clean, perturbed)).reshape(-1, base.dim))
    with torch.no_grad():
        delta_sup = float(torch.linalg.vector_norm(g(states) - f(states), dim=-1).max())
    data = GronwallInput(
        lipschitz=estimate_lipschitz(f, spec.kernel), delta_sup=delta_sup, t=cfg.t_max
    )
    # Bound each sample time by its own horizon.
    deviation = np.linalg.norm(clean - perturbed, axis=-1).max(axis=0)
    bounds = np.array([gronwall_bound(data.model_copy(update={"t": t})) for t in cfg.times])
    return GronwallReport(
        lipschitz=data.lipschitz,
        delta_sup=delta_sup,
        integrated=integrated_bound(data),
        deviations=deviation,
        bounds=bounds,
    )
