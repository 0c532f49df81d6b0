"""Unit tests for run configuration."""

from __future__ import annotations

import json
from typing import TYPE_CHECKING

import pytest
import voluptuous as vol

from archetype_match.config import DEFAULTS, config_hash, load_config_file, resolve

if TYPE_CHECKING:
    from pathlib import Path


def _write(tmp_path: Path, payload: object) -> Path:
    path = tmp_path / "run.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


class TestResolve:
    """Tests for value precedence."""

    def test_defaults(self) -> None:
        """Nothing given: package defaults, seed 0."""
        values = resolve("fit", {"epochs": None})
        assert values["epochs"] == DEFAULTS["fit"]["epochs"]
        assert values["seed"] == 0
        assert values["out"] == "out"

    def test_flag_beats_file_beats_preset(self) -> None:
        """Flags override the file, which overrides the preset."""
        values = resolve("fit", {"hidden": 16}, {"preset": "deform", "hidden": 32, "epochs": 5})
        assert values["hidden"] == 16
        assert values["epochs"] == 5
        assert values["dt"] == 0.2

    def test_preset(self) -> None:
        """Presets set the experiment's grid and model size."""
        values = resolve("fit", {"preset": "vfpert"})
        assert values["epochs"] == 1000
        assert values["dt"] == 0.05

    def test_classify_source_horizon(self) -> None:
        """The classify preset runs archetypes over a fixed horizon."""
        assert resolve("score", {"preset": "classify"})["source_tmax"] == 5.0
        assert "source_tmax" not in resolve("score", {})
        assert resolve("fit", {"source_tmax": 2.5})["source_tmax"] == 2.5

    def test_seed_from_environment(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """DAA_SEED is used when no seed is given."""
        monkeypatch.setenv("DAA_SEED", "17")
        assert resolve("simulate", {})["seed"] == 17
        assert resolve("simulate", {"seed": 3})["seed"] == 3

    def test_out_of_range(self) -> None:
        """Values are validated after merging."""
        with pytest.raises(vol.Invalid):
            resolve("simulate", {"dt": -1.0})


class TestLoadConfigFile:
    """Tests for config files."""

    def test_valid(self, tmp_path: Path) -> None:
        """Known keys are coerced."""
        values = load_config_file(_write(tmp_path, {"n_traj": "20", "dt": 0.1}), "simulate")
        assert values == {"n_traj": 20, "dt": 0.1}

    def test_unknown_key(self, tmp_path: Path) -> None:
        """Keys of other commands are rejected."""
        with pytest.raises(vol.Invalid):
            load_config_file(_write(tmp_path, {"epochs": 3}), "simulate")

    def test_exclusive_source(self, tmp_path: Path) -> None:
        """A system name and a spec file cannot both be given."""
        with pytest.raises(vol.Invalid):
            load_config_file(_write(tmp_path, {"system": "ring", "spec_file": "x.json"}), "simulate")

    def test_not_an_object(self, tmp_path: Path) -> None:
        """The file must hold a JSON object."""
        with pytest.raises(ValueError, match="JSON object"):
            load_config_file(_write(tmp_path, [1, 2]), "simulate")


class TestConfigHash:
    """Tests for config hashing."""

    def test_order_independent(self) -> None:
        """Key order does not change the hash."""
        assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})

    def test_value_sensitive(self) -> None:
        """Different values hash differently."""
        assert config_hash({"a": 1}) != config_hash({"a": 2})
