"""Errors raised by archetype_match."""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence


class ArchetypeMatchError(Exception):
    """Base class for every error raised by this package."""


class ExternalSystemHasNoField(ArchetypeMatchError):
    """An External system only carries trajectories; it has no vector field."""


class DimensionMismatch(ArchetypeMatchError):
    """A state or batch does not have the dimension the system expects."""

    def __init__(self, expected: int, got: int, what: str = "state") -> None:
        """Record the expected and observed dimensions."""
        super().__init__(f"{what} has dimension {got}, expected {expected}")
        self.expected = expected
        self.got = got


class NoClosedForm(ArchetypeMatchError):
    """The archetype has no closed-form flow."""


class EmptyComposite(ArchetypeMatchError):
    """A composite needs at least two sub-systems with vector fields."""


class ParseError(ArchetypeMatchError):
    """A trajectory file could not be parsed."""

    def __init__(self, message: str, row: int, column: int | str) -> None:
        """
        Store the location of the offending cell.

        Args:
            message: What went wrong.
            row: 1-based line number in the file (header is line 1).
            column: Column index or header name.

        """
        super().__init__(f"{message} (row {row}, column {column})")
        self.row = row
        self.column = column


class InconsistentTrajectoryLengths(ArchetypeMatchError):
    """Trajectories in one file do not share the same number of samples."""


class NonFiniteState(ArchetypeMatchError):
    """Integration produced a NaN or infinite state."""

    def __init__(self, step: int) -> None:
        """Record the first step with a non-finite state."""
        super().__init__(f"state left the finite range at step {step}")
        self.step = step


class DegenerateDimension(ArchetypeMatchError):
    """A dimension has zero spread and cannot be standardized."""

    def __init__(self, dims: Sequence[int]) -> None:
        """Record the offending dimensions."""
        super().__init__(f"zero standard deviation in dimension(s) {list(dims)}")
        self.dims = tuple(dims)


class EmptyPointSet(ArchetypeMatchError):
    """Complexity needs at least one evaluation point."""


class NonFiniteLoss(ArchetypeMatchError):
    """The trajectory loss diverged; reduce the learning rate or reinitialize."""

    def __init__(self, epoch: int | None = None) -> None:
        """Record the epoch at which the loss stopped being finite."""
        where = "at initialization" if epoch is None else f"in epoch {epoch}"
        super().__init__(f"non-finite trajectory loss {where}")
        self.epoch = epoch


class DegenerateLattice(ArchetypeMatchError):
    """The sampling lattice has no extent or too few nodes."""


class IncompleteGrid(ArchetypeMatchError):
    """The archetype x target grid is missing fits."""

    def __init__(self, missing: Iterable[tuple[str, str]]) -> None:
        """Record the missing (archetype, target) pairs."""
        self.missing = tuple(missing)
        pairs = ", ".join(f"{a}/{t}" for a, t in self.missing)
        super().__init__(f"missing fits for: {pairs}")
