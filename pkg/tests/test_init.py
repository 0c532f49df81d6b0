"""Import tests for the package."""

from __future__ import annotations

import importlib

import pytest

import archetype_match
from archetype_match.archetypes import ArchetypeParams, SystemKind, SystemSpec

MODULES = (
    "archetypes",
    "cli",
    "config",
    "const",
    "diffeo",
    "exceptions",
    "perturb",
    "report",
    "runner",
    "score",
    "sim",
    "targets",
    "train",
    "trajectory_file",
)


class TestImports:
    """Tests that every module loads."""

    @pytest.mark.parametrize("name", MODULES)
    def test_module_imports(self, name: str) -> None:
        """The module imports without side effects failing."""
        assert importlib.import_module(f"archetype_match.{name}") is not None

    def test_version(self) -> None:
        """The package exposes its version."""
        assert archetype_match.__version__

    def test_spec_default_params(self) -> None:
        """A spec built without parameters gets fresh defaults."""
        spec = SystemSpec(kind=SystemKind.FIXED_POINT, dim=2)
        assert spec.params == ArchetypeParams()
        assert SystemSpec.model_validate_json(spec.model_dump_json()) == spec
