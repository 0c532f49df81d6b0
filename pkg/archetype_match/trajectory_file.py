"""
Trajectory files.

A batch is stored as CSV with header ``traj,t,x0,...,x{d-1}`` (one row per
sample, floats with 17 significant digits) plus a sidecar
``<stem>.meta.json`` holding the grid, provenance and normalization.
"""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from .const import META_SUFFIX
from .exceptions import InconsistentTrajectoryLengths, ParseError
from .sim import BatchMeta, Normalization, TrajectoryBatch

if TYPE_CHECKING:
    from collections.abc import Sequence

LOGGER = logging.getLogger(__name__)

_FIXED_COLUMNS = ("traj", "t")


class TrajectoryFileMeta(BaseModel):
    """Sidecar document written next to every trajectory CSV."""

    model_config = ConfigDict(extra="forbid")

    dt: float
    n_traj: int
    n_steps: int
    dim: int
    meta: BatchMeta = BatchMeta()
    normalization: Normalization | None = None


def meta_path(path: Path) -> Path:
    """Sidecar location for a trajectory CSV."""
    return path.with_name(path.stem + META_SUFFIX)


def _fmt(value: float) -> str:
    return format(value, ".17g")


def write_batch(batch: TrajectoryBatch, path: Path) -> list[Path]:
    """
    Write a batch and its sidecar.

    Returns:
        The written paths (CSV first).

    """
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [*_FIXED_COLUMNS, *(f"x{i}" for i in range(batch.dim))]
    times = batch.times
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for traj, samples in enumerate(batch.data):
            for t, state in zip(times, samples, strict=True):
                writer.writerow([traj, _fmt(t), *(_fmt(v) for v in state)])
    sidecar = meta_path(path)
    doc = TrajectoryFileMeta(
        dt=batch.dt,
        n_traj=batch.n_traj,
        n_steps=batch.n_steps,
        dim=batch.dim,
        meta=batch.meta,
        normalization=batch.normalization,
    )
    sidecar.write_text(doc.model_dump_json(indent=2) + "\n", encoding="utf-8")
    LOGGER.debug("Wrote %d trajectories to %s", batch.n_traj, path)
    return [path, sidecar]


def _parse_float(cell: str, row: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"not a number: {cell!r}", row, column) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {cell!r}", row, column)
    return value


def _check_header(header: Sequence[str]) -> int:
    dim = len(header) - len(_FIXED_COLUMNS)
    expected = [*_FIXED_COLUMNS, *(f"x{i}" for i in range(dim))]
    if dim < 1 or [h.strip() for h in header] != expected:
        msg = f"expected header {','.join(expected) if dim >= 1 else 'traj,t,x0,...'}"
        raise ParseError(msg, 1, "header")
    return dim


def _read_sidecar(path: Path) -> TrajectoryFileMeta | None:
    sidecar = meta_path(path)
    if not sidecar.exists():
        return None
    try:
        return TrajectoryFileMeta.model_validate_json(sidecar.read_text(encoding="utf-8"))
    except ValidationError as err:
        raise ParseError(f"invalid sidecar {sidecar.name}: {err.errors()[0]['msg']}", 0, "meta") from err


def _check_sidecar(sidecar: TrajectoryFileMeta, data: np.ndarray, first_times: list[float]) -> None:
    """Reject a sidecar whose grid disagrees with the CSV it describes."""
    found = {"n_traj": data.shape[0], "n_steps": data.shape[1] - 1, "dim": data.shape[2]}
    for key, value in found.items():
        declared = getattr(sidecar, key)
        if declared != value:
            raise ParseError(f"sidecar declares {key}={declared}, file has {value}", 0, key)
    if len(first_times) > 1:
        step = first_times[1] - first_times[0]
        if not math.isclose(step, sidecar.dt, rel_tol=1e-9, abs_tol=1e-12):
            raise ParseError(f"sidecar declares dt={sidecar.dt}, time stamps step by {step}", 3, "t")


def read_batch(path: Path) -> TrajectoryBatch:
    """
    Read a trajectory CSV (and its sidecar when present).

    Without a sidecar, dt is taken from the first two time stamps.

    Raises:
        ParseError: Malformed header or cell, located by row and column.
            Also raised when the sidecar grid disagrees with the file.
        InconsistentTrajectoryLengths: Trajectories differ in sample count.
        FileNotFoundError: The CSV does not exist.

    """
    trajectories: dict[str, list[list[float]]] = {}
    first_times: list[float] = []
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", 1, "header")
        dim = _check_header(header)
        columns = list(header)
        for line_no, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(columns):
                raise ParseError(
                    f"expected {len(columns)} cells, found {len(cells)}", line_no, len(cells)
                )
            traj = cells[0].strip()
            t = _parse_float(cells[1], line_no, "t")
            state = [_parse_float(cell, line_no, columns[i + 2]) for i, cell in enumerate(cells[2:])]
            samples = trajectories.setdefault(traj, [])
            if len(trajectories) == 1 and len(samples) < 2:  # noqa: PLR2004
                first_times.append(t)
            samples.append(state)

    if not trajectories:
        raise ParseError("no samples", 2, "traj")
    lengths = {traj: len(samples) for traj, samples in trajectories.items()}
    if len(set(lengths.values())) != 1:
        detail = ", ".join(f"{traj}: {n}" for traj, n in lengths.items())
        msg = f"trajectories have different lengths ({detail})"
        raise InconsistentTrajectoryLengths(msg)

    data = np.asarray(list(trajectories.values()), dtype=np.float64).reshape(
        len(trajectories), -1, dim
    )
    sidecar = _read_sidecar(path)
    if sidecar is not None:
        _check_sidecar(sidecar, data, first_times)
        return TrajectoryBatch(
            data=data, dt=sidecar.dt, meta=sidecar.meta, normalization=sidecar.normalization
        )
    dt = first_times[1] - first_times[0] if len(first_times) > 1 else 1.0
    if dt <= 0:
        raise ParseError("time stamps must increase", 3, "t")
    return TrajectoryBatch(data=data, dt=dt, meta=BatchMeta(source=path.stem))
