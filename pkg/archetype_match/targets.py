"""
Benchmark target systems.

Closed-form oscillators (Van der Pol, Sel'kov, Liénard sigmoid), the ring and
its noisy or deformed variants, the two-bounded-line-attractor composite, and
ingestion of externally produced trajectories.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from ._compat import StrEnum
from typing import TYPE_CHECKING

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .archetypes import (
    FieldFn,
    SystemKind,
    SystemSpec,
    as_state,
    bistable,
    bounded_attractor,
    build_archetype,
    compose,
    external,
    field_fn,
    ring_attractor,
)
from .const import (
    DEFAULT_N_TRAJ,
    DEFAULT_SUBSTEPS,
    LIENARD_A,
    LIENARD_B,
    SELKOV_A,
    SELKOV_B,
    SIGMA_NOISY_ARCHETYPE,
    SIGMA_RING_NOISY,
    SIGMA_VDP_NOISY,
    VDP_MU,
)
from .exceptions import ExternalSystemHasNoField
from .perturb import (
    PerturbationKind,
    PerturbationSpec,
    gp_field_perturbation,
    random_diffeo_interp,
)
from .sim import (
    Annulus,
    BatchMeta,
    Box,
    InitSampler,
    SimConfig,
    TrajectoryBatch,
    sample_initial,
    simulate_batch,
)
from .trajectory_file import read_batch

if TYPE_CHECKING:
    from pathlib import Path

    from numpy.typing import ArrayLike, NDArray

    from .diffeo import DiffeoModel

LOGGER = logging.getLogger(__name__)


class OscillatorKind(StrEnum):
    """Closed-form benchmark fields."""

    VAN_DER_POL = "VanDerPol"
    SELKOV = "Selkov"
    LIENARD_SIGMOID = "LienardSigmoid"


class ClosedFormTarget(BaseModel):
    """
    A planar oscillator given by its equations.

    Van der Pol: x' = y, y' = mu (1 - x^2) y - x.
    Sel'kov: x' = -x + a y + x^2 y, y' = b - a y - x^2 y.
    Liénard sigmoid: x' = y, y' = 1/2 - sigmoid(a x) + b x^2 y, so b < 0 damps.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: OscillatorKind
    mu: float = VDP_MU
    a: float = 0.0
    b: float = 0.0

    @model_validator(mode="after")
    def _positive_mu(self) -> ClosedFormTarget:
        if self.kind is OscillatorKind.VAN_DER_POL and self.mu <= 0:
            msg = f"Van der Pol needs mu > 0, got {self.mu}"
            raise ValueError(msg)
        return self

    @property
    def dim(self) -> int:
        """State dimension."""
        return 2

    def field(self) -> FieldFn:
        """Torch drift of the oscillator."""
        kind, mu, a, b = self.kind, self.mu, self.a, self.b

        def evaluate(state: torch.Tensor) -> torch.Tensor:
            x, y = state[..., 0], state[..., 1]
            if kind is OscillatorKind.VAN_DER_POL:
                dx, dy = y, mu * (1 - x**2) * y - x
            elif kind is OscillatorKind.SELKOV:
                dx, dy = -x + a * y + x**2 * y, b - a * y - x**2 * y
            else:
                dx, dy = y, 0.5 - torch.sigmoid(a * x) + b * x**2 * y
            return torch.stack((dx, dy), dim=-1)

        return evaluate


class TargetSpec(BaseModel):
    """A target system together with how its trajectories are produced."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    base: SystemSpec | ClosedFormTarget
    noise_sigma: float = Field(default=0.0, ge=0)
    perturbation: PerturbationSpec | None = None
    sampler: InitSampler | None = None
    dt: float = Field(default=0.1, gt=0)
    t_max: float = Field(default=5.0, ge=0)

    @property
    def dim(self) -> int:
        """State dimension."""
        return self.base.dim

    @property
    def is_external(self) -> bool:
        """Whether the target is only known through trajectory files."""
        return isinstance(self.base, SystemSpec) and self.base.kind is SystemKind.EXTERNAL


@dataclass(frozen=True)
class ExternalTrajectorySet:
    """Trajectories produced outside this package."""

    batch: TrajectoryBatch
    source_label: str


# ---------------------------------------------------------------------------
# Registry


def two_blas() -> SystemSpec:
    """Planar two-bounded-line-attractor system: Bistable(1) x BLA(1)."""
    return compose([bistable(dim=1), bounded_attractor(dim=1, d_bca=1, B=1.0)])


def two_blas_3d() -> SystemSpec:
    """Three-dimensional variant: Bistable(1) x BLA embedded in the plane."""
    return compose([bistable(dim=1), bounded_attractor(dim=2, d_bca=1, B=1.0)])


_RING_SAMPLER = Annulus(r_min=0.5, r_max=1.5)
_OSCILLATOR_BOX = Box(lo=(-2.0, -2.0), hi=(2.0, 2.0))
_POSITIVE_BOX = Box(lo=(0.0, 0.0), hi=(3.0, 3.0))
_LIENARD_BOX = Box(lo=(-1.5, -1.5), hi=(1.5, 1.5))
_POSITIVE_CUBE = Box(lo=(0.0, 0.0, 0.0), hi=(3.0, 3.0, 3.0))


def _registry() -> dict[str, TargetSpec]:
    ring = TargetSpec(
        name="ring", base=ring_attractor(dim=2), sampler=_RING_SAMPLER, dt=0.2, t_max=2.0
    )
    vdp = TargetSpec(
        name="vdp",
        base=ClosedFormTarget(kind=OscillatorKind.VAN_DER_POL, mu=VDP_MU),
        sampler=_OSCILLATOR_BOX,
    )
    return {
        "ring": ring,
        "ring_noisy": ring.model_copy(update={"name": "ring_noisy", "noise_sigma": SIGMA_RING_NOISY}),
        "vdp": vdp,
        "vdp_noisy": vdp.model_copy(update={"name": "vdp_noisy", "noise_sigma": SIGMA_VDP_NOISY}),
        "selkov": TargetSpec(
            name="selkov",
            base=ClosedFormTarget(kind=OscillatorKind.SELKOV, a=SELKOV_A, b=SELKOV_B),
            sampler=_POSITIVE_BOX,
        ),
        "lienard": TargetSpec(
            name="lienard",
            base=ClosedFormTarget(kind=OscillatorKind.LIENARD_SIGMOID, a=LIENARD_A, b=LIENARD_B),
            sampler=_LIENARD_BOX,
            t_max=15.0,
        ),
        "two_blas": TargetSpec(name="two_blas", base=two_blas(), sampler=_POSITIVE_BOX),
        "two_blas_3d": TargetSpec(name="two_blas_3d", base=two_blas_3d(), sampler=_POSITIVE_CUBE),
        "external": TargetSpec(name="external", base=external(2)),
    }


TARGET_NAMES: tuple[str, ...] = tuple(_registry())


def build_target(name: str) -> TargetSpec:
    """Look up a registered target by name."""
    registry = _registry()
    try:
        return registry[name]
    except KeyError:
        msg = f"unknown system {name!r}; known: {', '.join(registry)}"
        raise KeyError(msg) from None


def perturbed_target(spec: PerturbationSpec, base: str = "ring") -> TargetSpec:
    """A registered planar target deformed by one member of a perturbation family."""
    target = build_target(base)
    label = "diffeo" if spec.kind is PerturbationKind.DIFFEO_INTERP else "vf"
    return target.model_copy(
        update={"name": f"{base}_{label}_s{spec.s:g}_seed{spec.seed}", "perturbation": spec}
    )


def archetype_target(archetype: str, dim: int = 2, *, noisy: bool = False) -> TargetSpec:
    """An archetype used as a target; noisy variants use sigma = 0.025."""
    return TargetSpec(
        name=f"{archetype}_noisy" if noisy else archetype,
        base=build_archetype(archetype, dim),
        noise_sigma=SIGMA_NOISY_ARCHETYPE if noisy else 0.0,
        sampler=Box(lo=(-1.5,) * dim, hi=(1.5,) * dim),
    )


# ---------------------------------------------------------------------------
# Fields and simulation


def _pushforward(model: DiffeoModel, f: FieldFn) -> FieldFn:
    """Field of the system conjugated by `model`: J(x) f(x) at x = model^-1(y)."""

    def evaluate(y: torch.Tensor) -> torch.Tensor:
        x = model.inverse(y, check=False)
        _, tangent = torch.func.jvp(lambda z: model(z, check=False), (x,), (f(x),))
        return tangent

    return evaluate


def target_field_fn(spec: TargetSpec) -> FieldFn:
    """
    Drift of a target, including any perturbation.

    Raises:
        ExternalSystemHasNoField: The target is only known through data.

    """
    if spec.is_external:
        msg = f"target {spec.name!r} carries trajectories only"
        raise ExternalSystemHasNoField(msg)
    f = spec.base.field() if isinstance(spec.base, ClosedFormTarget) else field_fn(spec.base)
    pert = spec.perturbation
    if pert is None:
        return f
    if pert.kind is PerturbationKind.GP_FIELD:
        return gp_field_perturbation(pert, f)
    return _pushforward(random_diffeo_interp(pert, spec.dim), f)


def eval_target_field(spec: TargetSpec, x: ArrayLike) -> NDArray[np.float64]:
    """Drift at a state; noise is left to the integrator."""
    f = target_field_fn(spec)
    return f(as_state(x)).detach().numpy()


def default_sim_config(
    spec: TargetSpec,
    n_traj: int = DEFAULT_N_TRAJ,
    seed: int = 0,
    substeps: int = DEFAULT_SUBSTEPS,
) -> SimConfig:
    """Recording grid of a registered target."""
    return SimConfig(dt=spec.dt, t_max=spec.t_max, n_traj=n_traj, seed=seed, substeps=substeps)


def simulate_target(spec: TargetSpec, cfg: SimConfig | None = None) -> TrajectoryBatch:
    """
    Produce trajectories of a target.

    Initial conditions come from the target's sampler seeded with
    ``cfg.seed``; GP-perturbed targets integrate f + Delta, flow-map
    deformed targets map the clean trajectories through Psi_s.
    """
    cfg = cfg or default_sim_config(spec)
    if spec.is_external:
        msg = f"target {spec.name!r} carries trajectories only"
        raise ExternalSystemHasNoField(msg)
    sampler = spec.sampler or Box(lo=(-1.0,) * spec.dim, hi=(1.0,) * spec.dim)
    x0 = sample_initial(sampler.model_copy(update={"seed": cfg.seed}), cfg.n_traj)
    base = spec.base.field() if isinstance(spec.base, ClosedFormTarget) else field_fn(spec.base)
    pert = spec.perturbation
    if pert is not None and pert.kind is PerturbationKind.GP_FIELD:
        base = gp_field_perturbation(pert, base)
    data = simulate_batch(base, x0, cfg, spec.noise_sigma)
    if pert is not None and pert.kind is PerturbationKind.DIFFEO_INTERP:
        psi = random_diffeo_interp(pert, spec.dim)
        with torch.no_grad():
            data = psi(torch.from_numpy(data)).numpy()
    LOGGER.info(
        "Simulated %s: %d trajectories x %d samples", spec.name, cfg.n_traj, cfg.n_steps + 1
    )
    meta = BatchMeta(
        source=spec.name,
        spec=spec.model_dump(mode="json"),
        seed=cfg.seed,
        sim=cfg,
        noise_sigma=spec.noise_sigma,
    )
    return TrajectoryBatch(data=data, dt=cfg.dt, meta=meta)


def noisy_archetype_batch(archetype: str, cfg: SimConfig, dim: int = 2) -> TrajectoryBatch:
    """Trajectories of an archetype with sigma = 0.025 diffusion."""
    return simulate_target(archetype_target(archetype, dim, noisy=True), cfg)


def load_external(path: Path) -> ExternalTrajectorySet:
    """
    Ingest trajectories from a trajectory file.

    Raises:
        ParseError: A cell is malformed, located by row and column.
        InconsistentTrajectoryLengths: Trajectories differ in length.

    """
    batch = read_batch(path)
    label = batch.meta.source if batch.meta.source != "unknown" else path.stem
    LOGGER.info("Loaded %d external trajectories from %s", batch.n_traj, path)
    return ExternalTrajectorySet(batch=batch, source_label=label)
