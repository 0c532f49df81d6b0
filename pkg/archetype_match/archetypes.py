"""
Archetype library.

Canonical reference systems (fixed point, multistable/bistable, limit cycle,
ring attractor, sphere attractor, bounded continuous attractor) with their
vector fields, closed-form flows where they exist, designed invariant
manifolds, and Cartesian-product composition.

Fields are written against torch tensors of shape (..., d) so the same code
serves simulation and the differentiable trajectory loss; `eval_field` and
`analytic_flow` are the NumPy-facing entry points.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from ._compat import StrEnum
from typing import TYPE_CHECKING, Any

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .exceptions import (
    DimensionMismatch,
    EmptyComposite,
    ExternalSystemHasNoField,
    NoClosedForm,
)

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

ParamValue = float | torch.Tensor
FieldFn = Callable[[torch.Tensor], torch.Tensor]


class SystemKind(StrEnum):
    """Kinds of system a SystemSpec can describe."""

    FIXED_POINT = "FixedPoint"
    MULTISTABLE = "Multistable"
    BISTABLE = "Bistable"
    LIMIT_CYCLE = "LimitCycle"
    RING_ATTRACTOR = "RingAttractor"
    SPHERE_ATTRACTOR = "SphereAttractor"
    BOUNDED_CONTINUOUS_ATTRACTOR = "BoundedContinuousAttractor"
    COMPOSITE = "Composite"
    EXTERNAL = "External"


class ManifoldDescriptor(StrEnum):
    """Shape of a designed invariant manifold."""

    POINT = "Point"
    CIRCLE = "Circle"
    SEGMENT = "Segment"
    BOX_INTERIOR = "BoxInterior"
    SPHERE = "Sphere"
    PRODUCT = "Product"


CLOSED_FORM_KINDS = frozenset(
    {SystemKind.FIXED_POINT, SystemKind.LIMIT_CYCLE, SystemKind.RING_ATTRACTOR}
)
# Scalar parameters that may be replaced by (trainable) tensors.
SCALAR_PARAMS = ("alpha", "v", "B", "R", "beta_res")


class ArchetypeParams(BaseModel):
    """Parameters of an archetype; unused entries are ignored by a kind."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = -1.0
    """Radial/contraction rate (1/time); negative values attract."""

    v: float = -1.0
    """Angular velocity of the limit cycle (rad/time)."""

    roots: tuple[float, ...] = ()
    """Fixed points of a Multistable system, kept sorted."""

    B: float = Field(default=1.0, gt=0)
    """Half-width of the bounded attractor's hypercube."""

    R: float = Field(default=1.0, gt=0)
    """Sphere radius."""

    beta_res: float = -1.0
    """Contraction rate of the residual dimensions of the sphere attractor."""

    d_bca: int = Field(default=1, ge=1)
    """Dimension of the bounded continuous attractor."""

    d_sphere: int | None = Field(default=None, ge=1)
    """Ambient dimension of the sphere block; defaults to the full state."""

    sub_specs: tuple[SystemSpec, ...] = ()
    """Blocks of a Composite system, in state order."""

    @field_validator("roots")
    @classmethod
    def _sorted_unique_roots(cls, roots: tuple[float, ...]) -> tuple[float, ...]:
        if not all(math.isfinite(r) for r in roots):
            msg = "roots must be finite"
            raise ValueError(msg)
        ordered = tuple(sorted(roots))
        if len(set(ordered)) != len(ordered):
            msg = f"duplicate roots in {list(roots)}"
            raise ValueError(msg)
        return ordered


class SystemSpec(BaseModel):
    """Declarative description of an archetype or benchmark vector field."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: SystemKind
    params: ArchetypeParams = Field(default_factory=lambda: ArchetypeParams())  # noqa: PLW0108
    dim: int = Field(ge=1)

    @model_validator(mode="after")
    def _check_dimensions(self) -> SystemSpec:
        kind, p = self.kind, self.params
        if kind in (SystemKind.LIMIT_CYCLE, SystemKind.RING_ATTRACTOR) and self.dim < 2:  # noqa: PLR2004
            msg = f"{kind} needs dim >= 2"
            raise ValueError(msg)
        if kind is SystemKind.BOUNDED_CONTINUOUS_ATTRACTOR and p.d_bca > self.dim:
            msg = f"d_bca={p.d_bca} exceeds dim={self.dim}"
            raise ValueError(msg)
        if kind is SystemKind.SPHERE_ATTRACTOR and (p.d_sphere or 0) > self.dim:
            msg = f"d_sphere={p.d_sphere} exceeds dim={self.dim}"
            raise ValueError(msg)
        if kind is SystemKind.MULTISTABLE and not p.roots:
            msg = "Multistable needs at least one root"
            raise ValueError(msg)
        if kind is SystemKind.COMPOSITE:
            total = sum(sub.dim for sub in p.sub_specs)
            if total != self.dim:
                msg = f"composite dim {self.dim} != sum of sub-dims {total}"
                raise ValueError(msg)
        return self


ArchetypeParams.model_rebuild()


@dataclass(frozen=True)
class ManifoldSample:
    """Points on the designed invariant manifold of a system."""

    points: NDArray[np.float64]
    descriptor: ManifoldDescriptor


# ---------------------------------------------------------------------------
# Constructors


def fixed_point(dim: int = 1, alpha: float = -1.0) -> SystemSpec:
    """Single fixed point at the origin, x' = alpha x."""
    return SystemSpec(kind=SystemKind.FIXED_POINT, params=ArchetypeParams(alpha=alpha), dim=dim)


def bistable(dim: int = 1, alpha: float = -1.0) -> SystemSpec:
    """x' = -(x^3 - x) on the first coordinate; alpha drives the residual dims."""
    return SystemSpec(kind=SystemKind.BISTABLE, params=ArchetypeParams(alpha=alpha), dim=dim)


def multistable(roots: list[float], dim: int = 1, alpha: float = -1.0) -> SystemSpec:
    """x' = alpha * prod(x - r_i); multistable for alpha < 0."""
    return SystemSpec(
        kind=SystemKind.MULTISTABLE,
        params=ArchetypeParams(alpha=alpha, roots=tuple(roots)),
        dim=dim,
    )


def limit_cycle(dim: int = 2, alpha: float = -1.0, v: float = -1.0) -> SystemSpec:
    """Unit-circle limit cycle with radial rate alpha and angular velocity v."""
    return SystemSpec(
        kind=SystemKind.LIMIT_CYCLE, params=ArchetypeParams(alpha=alpha, v=v), dim=dim
    )


def ring_attractor(dim: int = 2, alpha: float = -1.0) -> SystemSpec:
    """Continuum of fixed points on the unit circle."""
    return SystemSpec(
        kind=SystemKind.RING_ATTRACTOR, params=ArchetypeParams(alpha=alpha), dim=dim
    )


def sphere_attractor(  # noqa: PLR0913
    dim: int = 3,
    R: float = 1.0,  # noqa: N803
    alpha: float = -1.0,
    beta_res: float = -1.0,
    d_sphere: int | None = None,
) -> SystemSpec:
    """Continuum of fixed points on a sphere of radius R."""
    return SystemSpec(
        kind=SystemKind.SPHERE_ATTRACTOR,
        params=ArchetypeParams(R=R, alpha=alpha, beta_res=beta_res, d_sphere=d_sphere),
        dim=dim,
    )


def bounded_attractor(
    dim: int = 2,
    d_bca: int = 1,
    B: float = 1.0,  # noqa: N803
    alpha: float = -1.0,
) -> SystemSpec:
    """Bounded continuous attractor on [-B, B]^d_bca; d_bca=1 is the bounded line attractor."""
    return SystemSpec(
        kind=SystemKind.BOUNDED_CONTINUOUS_ATTRACTOR,
        params=ArchetypeParams(B=B, d_bca=d_bca, alpha=alpha),
        dim=dim,
    )


def external(dim: int) -> SystemSpec:
    """Placeholder for a system known only through its trajectories."""
    return SystemSpec(kind=SystemKind.EXTERNAL, dim=dim)


def compose(specs: list[SystemSpec]) -> SystemSpec:
    """
    Build the Cartesian product of several systems.

    Args:
        specs: Sub-systems in state order.

    Returns:
        Composite spec whose field and manifold act blockwise.

    Raises:
        EmptyComposite: Fewer than two sub-systems.
        ExternalSystemHasNoField: A sub-system has no vector field.

    """
    if len(specs) < 2:  # noqa: PLR2004
        msg = f"a composite needs at least 2 sub-systems, got {len(specs)}"
        raise EmptyComposite(msg)
    for sub in specs:
        if sub.kind is SystemKind.EXTERNAL:
            msg = "External systems cannot be composed"
            raise ExternalSystemHasNoField(msg)
    return SystemSpec(
        kind=SystemKind.COMPOSITE,
        params=ArchetypeParams(sub_specs=tuple(specs)),
        dim=sum(sub.dim for sub in specs),
    )


ARCHETYPE_NAMES: tuple[str, ...] = ("ring", "limit_cycle", "fixed_point", "bistable", "bla")


def build_archetype(name: str, dim: int = 2) -> SystemSpec:
    """Return the canonical archetype registered under `name` for a d-dimensional target."""
    builders: dict[str, Callable[[], SystemSpec]] = {
        "ring": lambda: ring_attractor(dim=dim),
        "limit_cycle": lambda: limit_cycle(dim=dim),
        "fixed_point": lambda: fixed_point(dim=dim),
        "bistable": lambda: bistable(dim=dim),
        "bla": lambda: bounded_attractor(dim=dim, d_bca=1),
    }
    try:
        return builders[name]()
    except KeyError:
        msg = f"unknown archetype {name!r}; known: {', '.join(builders)}"
        raise KeyError(msg) from None


# ---------------------------------------------------------------------------
# Vector fields


def _resolve(spec: SystemSpec, overrides: Mapping[str, ParamValue] | None) -> dict[str, Any]:
    values: dict[str, Any] = {name: getattr(spec.params, name) for name in SCALAR_PARAMS}
    if overrides:
        unknown = set(overrides) - set(SCALAR_PARAMS)
        if unknown:
            msg = f"cannot override {sorted(unknown)}"
            raise KeyError(msg)
        values.update(overrides)
    return values


def _planar(x: torch.Tensor, alpha: ParamValue, v: ParamValue | None) -> torch.Tensor:
    xy = x[..., :2]
    r = torch.linalg.vector_norm(xy, dim=-1, keepdim=True)
    out = alpha * (r - 1.0) * xy
    if v is not None:
        out = out + v * torch.stack((-xy[..., 1], xy[..., 0]), dim=-1)
    return out


def _field(spec: SystemSpec, p: Mapping[str, Any], x: torch.Tensor) -> torch.Tensor:  # noqa: PLR0911
    kind, alpha = spec.kind, p["alpha"]
    if kind is SystemKind.FIXED_POINT:
        return alpha * x
    if kind is SystemKind.BISTABLE:
        head = x[..., :1]
        return torch.cat((-(head**3 - head), alpha * x[..., 1:]), dim=-1)
    if kind is SystemKind.MULTISTABLE:
        head = x[..., :1]
        prod = torch.ones_like(head)
        for root in spec.params.roots:
            prod = prod * (head - root)
        return torch.cat((alpha * prod, alpha * x[..., 1:]), dim=-1)
    if kind is SystemKind.LIMIT_CYCLE:
        return torch.cat((_planar(x, alpha, p["v"]), alpha * x[..., 2:]), dim=-1)
    if kind is SystemKind.RING_ATTRACTOR:
        return torch.cat((_planar(x, alpha, None), alpha * x[..., 2:]), dim=-1)
    if kind is SystemKind.SPHERE_ATTRACTOR:
        ds = spec.params.d_sphere or spec.dim
        xs = x[..., :ds]
        norm = torch.linalg.vector_norm(xs, dim=-1, keepdim=True)
        unit = xs / torch.where(norm > 0, norm, torch.ones_like(norm))
        return torch.cat((alpha * (norm - p["R"]) * unit, p["beta_res"] * x[..., ds:]), dim=-1)
    if kind is SystemKind.BOUNDED_CONTINUOUS_ATTRACTOR:
        k, half = spec.params.d_bca, p["B"]
        box = x[..., :k]
        # Zero inside the box; outside, pull each coordinate back to its clip.
        return torch.cat((alpha * (box - torch.clamp(box, -half, half)), alpha * x[..., k:]), dim=-1)
    # Composite
    parts, start = [], 0
    for sub in spec.params.sub_specs:
        parts.append(_field(sub, _resolve(sub, None), x[..., start : start + sub.dim]))
        start += sub.dim
    return torch.cat(parts, dim=-1)


def field_fn(spec: SystemSpec, overrides: Mapping[str, ParamValue] | None = None) -> FieldFn:
    """
    Return the torch vector field of a system.

    Args:
        spec: The system.
        overrides: Scalar parameters to replace, possibly by tensors that
            require gradients (e.g. the limit-cycle velocity ``v``).

    Returns:
        Callable mapping a (..., d) tensor to its (..., d) time derivative.

    Raises:
        ExternalSystemHasNoField: The system is only known through data.

    """
    if spec.kind is SystemKind.EXTERNAL:
        msg = "External systems carry trajectories only"
        raise ExternalSystemHasNoField(msg)
    params = _resolve(spec, overrides)

    def evaluate(x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != spec.dim:
            raise DimensionMismatch(spec.dim, x.shape[-1])
        return _field(spec, params, x)

    return evaluate


def as_state(x: ArrayLike) -> torch.Tensor:
    """Convert array-like input to a float64 tensor with a trailing state axis."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return torch.from_numpy(arr.copy())


def eval_field(spec: SystemSpec, x: ArrayLike) -> NDArray[np.float64]:
    """Evaluate f(x) for a state (or a stack of states)."""
    with torch.no_grad():
        return field_fn(spec)(as_state(x)).numpy()


# ---------------------------------------------------------------------------
# Closed-form flows


def has_closed_form(spec: SystemSpec) -> bool:
    """Whether `analytic_flow` is defined for the system."""
    return spec.kind in CLOSED_FORM_KINDS


def flow_at_times(
    spec: SystemSpec,
    x0: torch.Tensor,
    times: torch.Tensor,
    overrides: Mapping[str, ParamValue] | None = None,
) -> torch.Tensor:
    """
    Exact flow of a closed-form archetype at several times.

    The radial part solves r' = alpha r (r - 1) exactly,
    r(t) = r0 / (r0 + (1 - r0) e^{alpha t}), which is attracting at r = 1
    for alpha < 0; the angle advances linearly, residual dims decay as
    x e^{alpha t}.

    Args:
        spec: FixedPoint, LimitCycle or RingAttractor.
        x0: Initial states, shape (..., d).
        times: Times, shape (n,).
        overrides: Scalar parameter overrides (tensors allowed).

    Returns:
        States of shape (..., n, d).

    Raises:
        NoClosedForm: The kind has no closed-form flow.

    """
    if not has_closed_form(spec):
        msg = f"{spec.kind} has no closed-form flow"
        raise NoClosedForm(msg)
    if x0.shape[-1] != spec.dim:
        raise DimensionMismatch(spec.dim, x0.shape[-1])
    p = _resolve(spec, overrides)
    decay = torch.exp(p["alpha"] * times)[:, None]
    start = x0[..., None, :]
    if spec.kind is SystemKind.FIXED_POINT:
        return start * decay

    xy = start[..., :2]
    r0 = torch.linalg.vector_norm(xy, dim=-1, keepdim=True)
    denom = r0 + (1.0 - r0) * decay
    if spec.kind is SystemKind.LIMIT_CYCLE:
        angle = (p["v"] * times)[:, None]
        cos, sin = torch.cos(angle), torch.sin(angle)
        x, y = xy[..., :1], xy[..., 1:2]
        xy = torch.cat((cos * x - sin * y, sin * x + cos * y), dim=-1)
    else:
        xy = xy.expand(*denom.shape[:-1], 2)
    return torch.cat((xy / denom, start[..., 2:] * decay), dim=-1)


def analytic_flow(spec: SystemSpec, x0: ArrayLike, t: float) -> NDArray[np.float64]:
    """Exact solution phi^t(x0) for FixedPoint, LimitCycle and RingAttractor."""
    state = as_state(x0)
    times = torch.tensor([float(t)], dtype=torch.float64)
    with torch.no_grad():
        return flow_at_times(spec, state, times)[..., 0, :].numpy()


# ---------------------------------------------------------------------------
# Invariant manifolds


def stable_roots(spec: SystemSpec) -> tuple[float, ...]:
    """Roots of a Multistable/Bistable field with negative linearization."""
    if spec.kind is SystemKind.BISTABLE:
        return (-1.0, 1.0)
    roots, alpha = spec.params.roots, spec.params.alpha
    stable = []
    for k, root in enumerate(roots):
        # f'(r_k) = alpha * prod_{i != k} (r_k - r_i); every larger root flips the sign.
        larger = len(roots) - k - 1
        if alpha * (-1) ** larger < 0:
            stable.append(root)
    return tuple(stable) or roots


def _circle(n: int) -> NDArray[np.float64]:
    angles = 2.0 * np.pi * np.arange(n) / n
    return np.stack((np.cos(angles), np.sin(angles)), axis=-1)


def _sphere(n: int, ambient: int, radius: float) -> NDArray[np.float64]:
    if ambient == 1:
        return radius * np.resize(np.array([[-1.0], [1.0]]), (n, 1))
    if ambient == 2:  # noqa: PLR2004
        return radius * _circle(n)
    if ambient == 3:  # noqa: PLR2004
        # Fibonacci lattice
        k = np.arange(n) + 0.5
        polar = np.arccos(1.0 - 2.0 * k / n)
        azimuth = np.pi * (1.0 + 5.0**0.5) * k
        return radius * np.stack(
            (np.cos(azimuth) * np.sin(polar), np.sin(azimuth) * np.sin(polar), np.cos(polar)),
            axis=-1,
        )
    gauss = np.random.default_rng(0).standard_normal((n, ambient))
    return radius * gauss / np.linalg.norm(gauss, axis=-1, keepdims=True)


def _box_grid(n: int, k: int, half: float) -> NDArray[np.float64]:
    per_axis = max(2, math.ceil(n ** (1.0 / k)))
    axis = np.linspace(-half, half, per_axis)
    grid = np.array(list(itertools.product(axis, repeat=k)), dtype=np.float64)
    return _evenly_spaced(grid, n)


def _evenly_spaced(points: NDArray[np.float64], n: int) -> NDArray[np.float64]:
    if len(points) == n:
        return points
    idx = np.round(np.linspace(0, len(points) - 1, n)).astype(int)
    return points[idx]


def _manifold_points(spec: SystemSpec, n: int) -> tuple[NDArray[np.float64], ManifoldDescriptor]:
    kind, p, d = spec.kind, spec.params, spec.dim
    pts = np.zeros((n, d))
    if kind is SystemKind.FIXED_POINT:
        return pts, ManifoldDescriptor.POINT
    if kind in (SystemKind.BISTABLE, SystemKind.MULTISTABLE):
        pts[:, 0] = np.resize(np.asarray(stable_roots(spec)), n)
        return pts, ManifoldDescriptor.POINT
    if kind in (SystemKind.LIMIT_CYCLE, SystemKind.RING_ATTRACTOR):
        pts[:, :2] = _circle(n)
        return pts, ManifoldDescriptor.CIRCLE
    if kind is SystemKind.SPHERE_ATTRACTOR:
        ds = p.d_sphere or d
        pts[:, :ds] = _sphere(n, ds, p.R)
        return pts, ManifoldDescriptor.SPHERE
    if kind is SystemKind.BOUNDED_CONTINUOUS_ATTRACTOR:
        pts[:, : p.d_bca] = _box_grid(n, p.d_bca, p.B)
        descriptor = ManifoldDescriptor.SEGMENT if p.d_bca == 1 else ManifoldDescriptor.BOX_INTERIOR
        return pts, descriptor
    # Composite: Cartesian product of per-block samples, thinned to n points.
    per_block = max(1, math.ceil(n ** (1.0 / len(p.sub_specs))))
    blocks = [_manifold_points(sub, per_block)[0] for sub in p.sub_specs]
    product = np.array(
        [np.concatenate(combo) for combo in itertools.product(*blocks)], dtype=np.float64
    )
    return _evenly_spaced(product, n), ManifoldDescriptor.PRODUCT


def invariant_manifold(spec: SystemSpec, n_points: int) -> ManifoldSample:
    """
    Sample the designed invariant manifold of a system.

    Unit circle for the ring and limit cycle, stable roots for multistable
    systems, a grid of the box for bounded attractors and a product grid for
    composites. Residual dimensions are zero.

    Raises:
        ExternalSystemHasNoField: The system is only known through data.

    """
    if spec.kind is SystemKind.EXTERNAL:
        msg = "External systems have no designed manifold"
        raise ExternalSystemHasNoField(msg)
    if n_points < 1:
        msg = "n_points must be positive"
        raise ValueError(msg)
    points, descriptor = _manifold_points(spec, n_points)
    return ManifoldSample(points=points, descriptor=descriptor)
