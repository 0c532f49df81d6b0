"""
Run configuration.

JSON config files mirror the command-line flags (dashes become
underscores) and are validated per command with voluptuous. Values resolve
as: explicit flag, then config file, then preset, then package default.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import TYPE_CHECKING, Any

import voluptuous as vol

from .archetypes import ARCHETYPE_NAMES
from .const import (
    CLASSIFY_SOURCE_TMAX,
    CONF_ARCHETYPE,
    CONF_ARCHETYPES,
    CONF_BATCH_SIZE,
    CONF_DT,
    CONF_EPOCHS,
    CONF_FITS_DIR,
    CONF_FLOW_STEPS,
    CONF_HIDDEN,
    CONF_KIND,
    CONF_LEARN_BETA,
    CONF_LENGTHSCALE,
    CONF_LOG_LEVEL,
    CONF_LR,
    CONF_MANIFOLD_POINTS,
    CONF_MATRIX,
    CONF_N_TRAJ,
    CONF_OUT,
    CONF_PRESET,
    CONF_SCALE,
    CONF_SEED,
    CONF_SIGMA,
    CONF_SOURCE_TMAX,
    CONF_SPEC_FILE,
    CONF_SUBSTEPS,
    CONF_SYSTEM,
    CONF_TARGET,
    CONF_TARGETS,
    CONF_TMAX,
    CONF_WORKERS,
    DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS,
    DEFAULT_FLOW_STEPS,
    DEFAULT_HIDDEN,
    DEFAULT_LR,
    DEFAULT_MANIFOLD_POINTS,
    DEFAULT_N_TRAJ,
    DEFAULT_OUT,
    DEFAULT_SUBSTEPS,
    DEFAULT_TRAINABLE_BETA,
    ENV_SEED,
)

if TYPE_CHECKING:
    from collections.abc import Mapping
    from pathlib import Path

COMMANDS = ("simulate", "perturb", "fit", "score", "report")
LOG_LEVELS = ("debug", "info", "warning", "error")
CLASSIFY_TARGETS = ("ring", "ring_noisy", "vdp", "selkov", "lienard", "two_blas")

# Experiment presets: deformed ring, vector-field perturbation, classification.
PRESETS: dict[str, dict[str, Any]] = {
    "deform": {CONF_DT: 0.2, CONF_TMAX: 2.0, CONF_HIDDEN: 128, CONF_EPOCHS: 200},
    "vfpert": {CONF_DT: 0.05, CONF_TMAX: 5.0, CONF_HIDDEN: 64, CONF_EPOCHS: 1000},
    "classify": {CONF_HIDDEN: 64, CONF_EPOCHS: 200, CONF_SOURCE_TMAX: CLASSIFY_SOURCE_TMAX},
}

_positive = vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
_non_negative = vol.All(vol.Coerce(float), vol.Range(min=0))
_count = vol.All(vol.Coerce(int), vol.Range(min=1))
_names = vol.All(vol.Coerce(list), [str])

_COMMON = {
    vol.Optional(CONF_SEED): vol.All(vol.Coerce(int), vol.Range(min=0, max=2**64 - 1)),
    vol.Optional(CONF_OUT): str,
    vol.Optional(CONF_LOG_LEVEL): vol.In(LOG_LEVELS),
}
_SIM = {
    vol.Optional(CONF_DT): _positive,
    vol.Optional(CONF_TMAX): _non_negative,
    vol.Optional(CONF_N_TRAJ): _count,
    vol.Optional(CONF_SUBSTEPS): _count,
}
_FIT = {
    vol.Optional(CONF_EPOCHS): vol.All(vol.Coerce(int), vol.Range(min=0)),
    vol.Optional(CONF_LR): _positive,
    vol.Optional(CONF_BATCH_SIZE): _count,
    vol.Optional(CONF_HIDDEN): _count,
    vol.Optional(CONF_FLOW_STEPS): _count,
    vol.Optional(CONF_SOURCE_TMAX): _positive,
    vol.Optional(CONF_LEARN_BETA): _names,
    vol.Optional(CONF_PRESET): vol.In(list(PRESETS)),
}

SCHEMAS: dict[str, vol.Schema] = {
    "simulate": vol.Schema(
        {
            **_COMMON,
            **_SIM,
            vol.Exclusive(CONF_SYSTEM, "source"): str,
            vol.Exclusive(CONF_SPEC_FILE, "source"): str,
            vol.Optional(CONF_SIGMA): _non_negative,
        }
    ),
    "perturb": vol.Schema(
        {
            **_COMMON,
            **_SIM,
            vol.Optional(CONF_SYSTEM): str,
            vol.Optional(CONF_KIND): vol.In(["diffeo", "vf"]),
            vol.Optional(CONF_SCALE): vol.All(vol.Coerce(list), [_non_negative]),
            vol.Optional(CONF_LENGTHSCALE): _positive,
        }
    ),
    "fit": vol.Schema(
        {
            **_COMMON,
            **_SIM,
            **_FIT,
            vol.Optional(CONF_ARCHETYPE): vol.In(list(ARCHETYPE_NAMES)),
            vol.Optional(CONF_TARGET): str,
            vol.Optional(CONF_MANIFOLD_POINTS): _count,
        }
    ),
    "score": vol.Schema(
        {
            **_COMMON,
            **_SIM,
            **_FIT,
            vol.Optional(CONF_FITS_DIR): str,
            vol.Optional(CONF_ARCHETYPES): vol.All(_names, [vol.In(list(ARCHETYPE_NAMES))]),
            vol.Optional(CONF_TARGETS): _names,
            vol.Optional(CONF_WORKERS): _count,
            vol.Optional(CONF_MANIFOLD_POINTS): _count,
        }
    ),
    "report": vol.Schema(
        {
            **_COMMON,
            vol.Optional(CONF_MATRIX): str,
            vol.Optional(CONF_FITS_DIR): str,
        }
    ),
}

_FIT_DEFAULTS = {
    CONF_EPOCHS: DEFAULT_EPOCHS,
    CONF_LR: DEFAULT_LR,
    CONF_BATCH_SIZE: DEFAULT_BATCH_SIZE,
    CONF_HIDDEN: DEFAULT_HIDDEN,
    CONF_FLOW_STEPS: DEFAULT_FLOW_STEPS,
    CONF_LEARN_BETA: list(DEFAULT_TRAINABLE_BETA),
}
_SIM_DEFAULTS = {CONF_N_TRAJ: DEFAULT_N_TRAJ, CONF_SUBSTEPS: DEFAULT_SUBSTEPS}

DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate": {**_SIM_DEFAULTS},
    "perturb": {**_SIM_DEFAULTS, CONF_SYSTEM: "ring", CONF_KIND: "diffeo", CONF_SCALE: [0.0]},
    "fit": {
        **_SIM_DEFAULTS,
        **_FIT_DEFAULTS,
        CONF_ARCHETYPE: "ring",
        CONF_MANIFOLD_POINTS: DEFAULT_MANIFOLD_POINTS,
    },
    "score": {
        **_SIM_DEFAULTS,
        **_FIT_DEFAULTS,
        CONF_ARCHETYPES: list(ARCHETYPE_NAMES),
        CONF_TARGETS: list(CLASSIFY_TARGETS),
        CONF_WORKERS: 1,
        CONF_MANIFOLD_POINTS: DEFAULT_MANIFOLD_POINTS,
    },
    "report": {},
}


def load_config_file(path: Path, command: str) -> dict[str, Any]:
    """
    Read and validate a JSON run-config for `command`.

    Raises:
        vol.Invalid: Unknown key or out-of-range value.
        ValueError: The file is not a JSON object.

    """
    raw = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        msg = f"{path} must hold a JSON object"
        raise ValueError(msg)  # noqa: TRY004
    return SCHEMAS[command](raw)


def resolve(
    command: str,
    flags: Mapping[str, Any],
    file_values: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    """
    Merge flag, file, preset and default values.

    Flags that were not given must be None. The seed falls back to the
    DAA_SEED environment variable and then to 0.
    """
    given = {k: v for k, v in flags.items() if v is not None}
    file_values = dict(file_values or {})
    preset_name = given.get(CONF_PRESET, file_values.get(CONF_PRESET))
    values: dict[str, Any] = {**DEFAULTS[command], CONF_OUT: DEFAULT_OUT}
    if preset_name is not None:
        values.update(PRESETS[preset_name])
    values.update(file_values)
    values.update(given)
    if values.get(CONF_SEED) is None:
        env = os.environ.get(ENV_SEED)
        values[CONF_SEED] = int(env) if env else 0
    return SCHEMAS[command]({k: v for k, v in values.items() if v is not None and k != "config"})


def config_hash(values: Mapping[str, Any]) -> str:
    """SHA-256 of the resolved configuration in canonical JSON form."""
    canonical = json.dumps(values, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
