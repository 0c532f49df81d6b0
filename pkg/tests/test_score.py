"""Unit tests for score matrices and manifold mapping."""

from __future__ import annotations

from typing import TYPE_CHECKING
from unittest.mock import MagicMock

import numpy as np
import pytest

from archetype_match.archetypes import invariant_manifold, ring_attractor
from archetype_match.diffeo import DiffeoModel
from archetype_match.exceptions import IncompleteGrid
from archetype_match.score import (
    ScoreMatrix,
    best_archetype,
    build_matrix,
    fits_by_pair,
    hausdorff_distance,
    map_manifold,
    read_matrix_csv,
    read_matrix_json,
    row_scores,
    write_manifold_csv,
    write_matrix_csv,
    write_matrix_json,
)
from archetype_match.sim import Normalization
from archetype_match.train import FitConfig, FitResult

if TYPE_CHECKING:
    from pathlib import Path


def _fit(archetype: str, target: str, mse: float, cpx: float) -> MagicMock:
    return MagicMock(archetype_name=archetype, target_name=target, test_mse=mse, complexity=cpx)


@pytest.fixture
def fits() -> dict[tuple[str, str], MagicMock]:
    """A complete 2 x 2 grid."""
    return fits_by_pair(
        [
            _fit("ring", "a", 0.1, 0.2),
            _fit("ring", "b", 0.4, 0.1),
            _fit("bistable", "a", 0.3, 0.05),
            _fit("bistable", "b", 0.2, 0.3),
        ]
    )


class TestRowScores:
    """Tests for row normalization."""

    def test_two_entries(self) -> None:
        """[2, 4] -> [0.5, 0]."""
        np.testing.assert_allclose(row_scores([[2.0, 4.0]]), [[0.5, 0.0]])

    def test_all_equal(self) -> None:
        """Every entry is the maximum."""
        np.testing.assert_array_equal(row_scores([[3.0, 3.0, 3.0]]), [[0.0, 0.0, 0.0]])

    def test_single_entry(self) -> None:
        """A 1 x 1 matrix scores 0."""
        np.testing.assert_array_equal(row_scores([[5.0]]), [[0.0]])

    def test_zero_row(self) -> None:
        """An all-zero row scores 0 instead of dividing by zero."""
        np.testing.assert_array_equal(row_scores([[0.0, 0.0]]), [[0.0, 0.0]])

    def test_range(self) -> None:
        """Scores lie in [0, 1] with one zero per row."""
        scores = row_scores(np.random.default_rng(0).random((4, 6)))
        assert (scores >= 0).all()
        assert (scores <= 1).all()
        assert ((scores == 0).sum(axis=1) >= 1).all()


class TestBuildMatrix:
    """Tests for matrix assembly."""

    def test_values(self, fits: dict) -> None:
        """Rows are normalized per archetype."""
        matrix = build_matrix(fits, ["ring", "bistable"], ["a", "b"])
        assert matrix.dissimilarity == [[0.1, 0.4], [0.3, 0.2]]
        np.testing.assert_allclose(matrix.similarity, [[0.75, 0.0], [0.0, 1 / 3]])
        np.testing.assert_allclose(matrix.simplicity, [[0.0, 0.5], [5 / 6, 0.0]])

    def test_missing_pair(self, fits: dict) -> None:
        """Every pair needs a fit."""
        with pytest.raises(IncompleteGrid) as excinfo:
            build_matrix(fits, ["ring", "bistable"], ["a", "b", "c"])
        assert ("ring", "c") in excinfo.value.missing

    def test_best_archetype(self, fits: dict) -> None:
        """The highest similarity wins."""
        matrix = build_matrix(fits, ["ring", "bistable"], ["a", "b"])
        assert best_archetype(matrix, "a") == "ring"
        assert best_archetype(matrix, "b") == "bistable"

    def test_tie_broken_by_simplicity(self) -> None:
        """Equal similarity: the simpler map wins."""
        matrix = ScoreMatrix(
            archetypes=["ring", "bistable"],
            targets=["a"],
            dissimilarity=[[1.0], [1.0]],
            complexity=[[1.0], [1.0]],
            similarity=[[0.5], [0.5]],
            simplicity=[[0.1], [0.4]],
        )
        assert best_archetype(matrix, "a") == "bistable"

    def test_entry(self, fits: dict) -> None:
        """A cell exposes all four scores."""
        matrix = build_matrix(fits, ["ring", "bistable"], ["a", "b"])
        assert matrix.entry("ring", "a")["similarity"] == pytest.approx(0.75)


class TestMatrixFiles:
    """Tests for matrix persistence."""

    def test_csv_round_trip(self, fits: dict, tmp_path: Path) -> None:
        """Long-format CSV reloads to the same matrix."""
        matrix = build_matrix(fits, ["ring", "bistable"], ["a", "b"])
        assert read_matrix_csv(write_matrix_csv(matrix, tmp_path / "m.csv")) == matrix

    def test_json_round_trip(self, fits: dict, tmp_path: Path) -> None:
        """JSON reloads to the same matrix."""
        matrix = build_matrix(fits, ["ring", "bistable"], ["a", "b"])
        assert read_matrix_json(write_matrix_json(matrix, tmp_path / "m.json")) == matrix

    def test_incomplete_csv(self, tmp_path: Path) -> None:
        """A CSV with a hole is rejected."""
        path = tmp_path / "m.csv"
        path.write_text(
            "archetype,target,dissimilarity,complexity,similarity,simplicity\n"
            "ring,a,1,1,0,0\n"
            "bistable,b,1,1,0,0\n",
            encoding="utf-8",
        )
        with pytest.raises(IncompleteGrid):
            read_matrix_csv(path)


class TestManifolds:
    """Tests for mapped manifolds."""

    @pytest.fixture
    def identity_fit(self) -> FitResult:
        """A ring fit whose flow map is the identity."""
        spec = ring_attractor()
        return FitResult(
            model=DiffeoModel(2),
            archetype=spec,
            beta_star=spec.params,
            train_mse=0.0,
            test_mse=0.0,
            complexity=0.0,
            complexity_lp=0.0,
            loss_curve=[],
            normalization=Normalization(mu=(1.0, 0.0), sigma=(2.0, 2.0)),
            config=FitConfig(),
            archetype_name="ring",
            target_name="ring",
        )

    def test_identity_maps_unit_circle(self, identity_fit: FitResult) -> None:
        """The identity leaves the unit circle in place."""
        mapped = map_manifold(identity_fit, 128)
        circle = invariant_manifold(ring_attractor(), 256).points
        assert hausdorff_distance(mapped.points, circle) <= 0.05

    def test_denormalized(self, identity_fit: FitResult) -> None:
        """Original coordinates undo the standardization."""
        mapped = map_manifold(identity_fit, 4)
        np.testing.assert_allclose(mapped.denormalized()[0], [3.0, 0.0])

    def test_manifold_csv(self, identity_fit: FitResult, tmp_path: Path) -> None:
        """One row per mapped point."""
        path = write_manifold_csv(map_manifold(identity_fit, 10), tmp_path / "m.csv")
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "x0,x1"
        assert len(lines) == 11

    def test_hausdorff(self) -> None:
        """Symmetric distance between point sets."""
        assert hausdorff_distance([[0.0, 0.0]], [[3.0, 4.0], [0.0, 1.0]]) == pytest.approx(5.0)
