"""
Score matrices.

Collects fits over an archetype x target grid, normalizes each archetype row
into similarity and simplicity scores, picks the best archetype per target,
and maps archetype invariant manifolds into target coordinates.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.spatial.distance import directed_hausdorff

from .archetypes import invariant_manifold
from .diffeo import forward
from .exceptions import IncompleteGrid

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping, Sequence
    from pathlib import Path

    from numpy.typing import ArrayLike, NDArray

    from .sim import Normalization
    from .train import FitResult

LOGGER = logging.getLogger(__name__)

_CSV_COLUMNS = ("archetype", "target", "dissimilarity", "complexity", "similarity", "simplicity")


def row_scores(values: ArrayLike) -> NDArray[np.float64]:
    """
    1 - value / row max, applied per row.

    Rows whose maximum is 0 score 0 everywhere, like any row of equal values.
    """
    arr = np.asarray(values, dtype=np.float64)
    row_max = arr.max(axis=-1, keepdims=True)
    safe = np.where(row_max > 0, row_max, 1.0)
    return np.where(row_max > 0, 1.0 - arr / safe, 0.0)


class ScoreMatrix(BaseModel):
    """Archetype x target table of raw and normalized scores."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    archetypes: list[str]
    targets: list[str]
    dissimilarity: list[list[float]]
    complexity: list[list[float]]
    similarity: list[list[float]]
    simplicity: list[list[float]]

    @classmethod
    def from_raw(
        cls,
        archetypes: Sequence[str],
        targets: Sequence[str],
        dissimilarity: ArrayLike,
        complexity: ArrayLike,
    ) -> ScoreMatrix:
        """Derive the normalized scores from raw values."""
        dis = np.asarray(dissimilarity, dtype=np.float64)
        cpx = np.asarray(complexity, dtype=np.float64)
        return cls(
            archetypes=list(archetypes),
            targets=list(targets),
            dissimilarity=dis.tolist(),
            complexity=cpx.tolist(),
            similarity=row_scores(dis).tolist(),
            simplicity=row_scores(cpx).tolist(),
        )

    def entry(self, archetype: str, target: str) -> dict[str, float]:
        """All four scores of one cell."""
        a, t = self.archetypes.index(archetype), self.targets.index(target)
        return {
            "dissimilarity": self.dissimilarity[a][t],
            "complexity": self.complexity[a][t],
            "similarity": self.similarity[a][t],
            "simplicity": self.simplicity[a][t],
        }


def build_matrix(
    fits: Mapping[tuple[str, str], FitResult],
    archetypes: Sequence[str] | None = None,
    targets: Sequence[str] | None = None,
) -> ScoreMatrix:
    """
    Assemble the score matrix from per-pair fits.

    Args:
        fits: (archetype, target) -> fit.
        archetypes: Row order; defaults to first appearance in `fits`.
        targets: Column order; defaults to first appearance in `fits`.

    Raises:
        IncompleteGrid: Some (archetype, target) pairs have no fit.

    """
    rows = list(archetypes) if archetypes is not None else list(dict.fromkeys(a for a, _ in fits))
    cols = list(targets) if targets is not None else list(dict.fromkeys(t for _, t in fits))
    missing = [(a, t) for a in rows for t in cols if (a, t) not in fits]
    if missing or not rows or not cols:
        raise IncompleteGrid(missing)
    dis = [[fits[a, t].test_mse for t in cols] for a in rows]
    cpx = [[fits[a, t].complexity for t in cols] for a in rows]
    return ScoreMatrix.from_raw(rows, cols, dis, cpx)


def best_archetype(matrix: ScoreMatrix, target: str) -> str:
    """
    Archetype with the highest similarity to `target`.

    Ties go to the higher simplicity, then to the earlier row.
    """
    col = matrix.targets.index(target)
    ranked = max(
        range(len(matrix.archetypes)),
        key=lambda a: (matrix.similarity[a][col], matrix.simplicity[a][col], -a),
    )
    return matrix.archetypes[ranked]


# ---------------------------------------------------------------------------
# Manifold mapping


@dataclass(frozen=True)
class MappedManifold:
    """An archetype's invariant manifold pushed through a fitted flow map."""

    points: NDArray[np.float64]
    archetype_name: str
    target_name: str
    normalization: Normalization | None = None

    def denormalized(self) -> NDArray[np.float64]:
        """Points in the target's original coordinates."""
        if self.normalization is None:
            return self.points
        return self.normalization.invert(self.points)


def map_manifold(fit: FitResult, n_points: int) -> MappedManifold:
    """Phi*(invariant manifold of the fitted archetype), in normalized coordinates."""
    sample = invariant_manifold(fit.archetype, n_points)
    points = forward(fit.model, sample.points)
    return MappedManifold(
        points=points,
        archetype_name=fit.archetype_name,
        target_name=fit.target_name,
        normalization=fit.normalization,
    )


def hausdorff_distance(a: ArrayLike, b: ArrayLike) -> float:
    """Symmetric Hausdorff distance between two finite point sets."""
    pa, pb = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return max(directed_hausdorff(pa, pb)[0], directed_hausdorff(pb, pa)[0])


# ---------------------------------------------------------------------------
# Files


def write_matrix_csv(matrix: ScoreMatrix, path: Path) -> Path:
    """Long format, one row per (archetype, target)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(_CSV_COLUMNS)
        for a, archetype in enumerate(matrix.archetypes):
            for t, target in enumerate(matrix.targets):
                values = (
                    matrix.dissimilarity[a][t],
                    matrix.complexity[a][t],
                    matrix.similarity[a][t],
                    matrix.simplicity[a][t],
                )
                writer.writerow([archetype, target, *(format(v, ".17g") for v in values)])
    return path


def read_matrix_csv(path: Path) -> ScoreMatrix:
    """Rebuild a matrix from its long-format CSV."""
    with path.open(newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    archetypes = list(dict.fromkeys(row["archetype"] for row in rows))
    targets = list(dict.fromkeys(row["target"] for row in rows))
    cells = {(row["archetype"], row["target"]): row for row in rows}
    missing = [(a, t) for a in archetypes for t in targets if (a, t) not in cells]
    if missing:
        raise IncompleteGrid(missing)

    def table(column: str) -> list[list[float]]:
        return [[float(cells[a, t][column]) for t in targets] for a in archetypes]

    return ScoreMatrix(
        archetypes=archetypes,
        targets=targets,
        dissimilarity=table("dissimilarity"),
        complexity=table("complexity"),
        similarity=table("similarity"),
        simplicity=table("simplicity"),
    )


def write_matrix_json(matrix: ScoreMatrix, path: Path) -> Path:
    """Full matrix as JSON."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(matrix.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def read_matrix_json(path: Path) -> ScoreMatrix:
    """Inverse of `write_matrix_json`."""
    return ScoreMatrix.model_validate_json(path.read_text(encoding="utf-8"))


def write_manifold_csv(manifold: MappedManifold, path: Path, *, original: bool = False) -> Path:
    """Point list ``x0,...`` of a mapped manifold."""
    points = manifold.denormalized() if original else manifold.points
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(points.shape[1])])
        writer.writerows([format(v, ".17g") for v in point] for point in points)
    return path


def fits_by_pair(results: Iterable[FitResult]) -> dict[tuple[str, str], FitResult]:
    """Index fits by (archetype, target) name."""
    return {(r.archetype_name, r.target_name): r for r in results}
