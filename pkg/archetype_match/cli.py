"""
Command-line interface.

Sub-commands: simulate, perturb, fit, score, report. Every run writes a
manifest (command line, resolved configuration and its hash, seeds, library
versions, wall time, written artifacts) at the root of the output directory,
including runs that fail part way.
"""

from __future__ import annotations

import argparse
import asyncio
import sys
import time
from collections.abc import Callable
from importlib import metadata
from pathlib import Path
from typing import Any

import colorlog
import voluptuous as vol
from pydantic import BaseModel, ConfigDict, ValidationError

from . import __version__
from .archetypes import ARCHETYPE_NAMES, SystemSpec, build_archetype
from .config import COMMANDS, LOG_LEVELS, PRESETS, config_hash, load_config_file, resolve
from .const import (
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
    DOMAIN,
    FIT_SUFFIX,
    LOGGER,
    MANIFEST_FILENAME,
    MATRIX_STEM,
)
from .exceptions import ArchetypeMatchError, DimensionMismatch
from .perturb import (
    GpKernelParams,
    PerturbationKind,
    PerturbationSpec,
    trajectory_bounds,
    write_lattice_csv,
)
from .report import matrix_svg, sweep_points, sweep_svg, write_sweep_csv
from .runner import FitJob, run_fit_grid
from .score import (
    build_matrix,
    best_archetype,
    fits_by_pair,
    map_manifold,
    read_matrix_csv,
    read_matrix_json,
    write_manifold_csv,
    write_matrix_csv,
    write_matrix_json,
)
from .sim import Box, SimConfig, TrajectoryBatch
from .targets import (
    TargetSpec,
    build_target,
    load_external,
    perturbed_target,
    simulate_target,
)
from .train import FitConfig, FitResult, fit, fit_stem, load_fit, save_fit
from .trajectory_file import write_batch

_HANDLER_NAME = DOMAIN
_TRACKED_PACKAGES = ("numpy", "scipy", "torch", "pydantic", "voluptuous", "colorlog")

Handler = Callable[[dict[str, Any], list[Path]], None]


class RunManifest(BaseModel):
    """Reproducibility record written at the root of the output directory."""

    model_config = ConfigDict(extra="forbid")

    command: str
    argv: list[str]
    config: dict[str, Any]
    config_hash: str
    seeds: dict[str, int]
    versions: dict[str, str]
    wall_time: float
    outputs: list[str]
    status: str
    error: str | None = None


def setup_logging(level: str = "info") -> None:
    """Attach a colored console handler to the package logger."""
    for handler in list(LOGGER.handlers):
        if handler.get_name() == _HANDLER_NAME:
            LOGGER.removeHandler(handler)
    handler = colorlog.StreamHandler()
    handler.set_name(_HANDLER_NAME)
    handler.setFormatter(
        colorlog.ColoredFormatter("%(log_color)s%(levelname)-8s%(reset)s %(name)s: %(message)s")
    )
    LOGGER.addHandler(handler)
    LOGGER.setLevel(level.upper())


def _versions() -> dict[str, str]:
    versions = {DOMAIN: __version__, "python": sys.version.split()[0]}
    for package in _TRACKED_PACKAGES:
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = "unknown"
    return versions


# ---------------------------------------------------------------------------
# Shared helpers


def _sim_config(target: TargetSpec, values: dict[str, Any]) -> SimConfig:
    return SimConfig(
        dt=values.get(CONF_DT, target.dt),
        t_max=values.get(CONF_TMAX, target.t_max),
        n_traj=values[CONF_N_TRAJ],
        seed=values[CONF_SEED],
        substeps=values[CONF_SUBSTEPS],
    )


def _fit_config(values: dict[str, Any]) -> FitConfig:
    return FitConfig(
        lr=values[CONF_LR],
        epochs=values[CONF_EPOCHS],
        batch_size=values[CONF_BATCH_SIZE],
        seed=values[CONF_SEED],
        learn_beta=tuple(values[CONF_LEARN_BETA]),
        hidden=values[CONF_HIDDEN],
        flow_steps=values[CONF_FLOW_STEPS],
        substeps=values[CONF_SUBSTEPS],
        source_t_max=values.get(CONF_SOURCE_TMAX),
    )


def _load_spec_file(path: Path) -> TargetSpec:
    text = path.read_text(encoding="utf-8")
    try:
        return TargetSpec.model_validate_json(text)
    except ValidationError as target_err:
        try:
            spec = SystemSpec.model_validate_json(text)
        except ValidationError:
            raise target_err from None
    return TargetSpec(name=path.stem, base=spec, sampler=Box(lo=(-1.5,) * spec.dim, hi=(1.5,) * spec.dim))


def _target_batch(
    target: str, values: dict[str, Any]
) -> tuple[TrajectoryBatch, str, PerturbationSpec | None]:
    """Trajectories of a registered target or of a trajectory file."""
    path = Path(target)
    if path.suffix == ".csv" or path.exists():
        external = load_external(path)
        batch, name = external.batch, external.source_label
        perturbation = None
        if batch.meta.spec and batch.meta.spec.get("perturbation"):
            perturbation = PerturbationSpec.model_validate(batch.meta.spec["perturbation"])
        return batch, name, perturbation
    spec = build_target(target)
    return simulate_target(spec, _sim_config(spec, values)), spec.name, spec.perturbation


def _registry_order(names: set[str], registry: tuple[str, ...]) -> list[str]:
    return sorted(names, key=lambda n: (registry.index(n) if n in registry else len(registry), n))


def _load_fits(fits_dir: Path) -> list[FitResult]:
    paths = sorted(fits_dir.glob(f"*{FIT_SUFFIX}"))
    if not paths:
        msg = f"no *{FIT_SUFFIX} files in {fits_dir}"
        raise FileNotFoundError(msg)
    return [load_fit(p) for p in paths]


# ---------------------------------------------------------------------------
# Commands


def cmd_simulate(values: dict[str, Any], outputs: list[Path]) -> None:
    """Simulate a registered system or a spec file and write its trajectories."""
    if values.get(CONF_SPEC_FILE):
        target = _load_spec_file(Path(values[CONF_SPEC_FILE]))
    elif values.get(CONF_SYSTEM):
        target = build_target(values[CONF_SYSTEM])
    else:
        msg = "simulate needs --system or --spec-file"
        raise ValueError(msg)
    if values.get(CONF_SIGMA) is not None:
        target = target.model_copy(update={"noise_sigma": values[CONF_SIGMA]})
    batch = simulate_target(target, _sim_config(target, values))
    outputs.extend(write_batch(batch, Path(values[CONF_OUT]) / f"{target.name}.csv"))


def cmd_perturb(values: dict[str, Any], outputs: list[Path]) -> None:
    """Write trajectories of a planar system under each requested perturbation scale."""
    base_name = values[CONF_SYSTEM]
    base = build_target(base_name)
    if base.dim != 2:  # noqa: PLR2004
        raise DimensionMismatch(2, base.dim, "perturbed system")
    is_gp = values[CONF_KIND] == "vf"
    kind = PerturbationKind.GP_FIELD if is_gp else PerturbationKind.DIFFEO_INTERP
    gp = None
    if is_gp:
        clean = simulate_target(base, _sim_config(base, values))
        gp = GpKernelParams(lengthscale=values.get(CONF_LENGTHSCALE), bounds=trajectory_bounds(clean))
    out = Path(values[CONF_OUT])
    for s in values[CONF_SCALE]:
        spec = PerturbationSpec(kind=kind, s=s, seed=values[CONF_SEED], gp=gp)
        target = perturbed_target(spec, base_name)
        batch = simulate_target(target, _sim_config(target, values))
        outputs.extend(write_batch(batch, out / f"{target.name}.csv"))
        if is_gp and s > 0:
            outputs.append(write_lattice_csv(spec, out / f"{target.name}.lattice.csv"))


def cmd_fit(values: dict[str, Any], outputs: list[Path]) -> None:
    """Fit one archetype to one target and write the fit artifacts."""
    if not values.get(CONF_TARGET):
        msg = "fit needs --target (a system name or a trajectory file)"
        raise ValueError(msg)
    batch, target_name, perturbation = _target_batch(values[CONF_TARGET], values)
    archetype_name = values[CONF_ARCHETYPE]
    result = fit(
        build_archetype(archetype_name, batch.dim),
        None,
        batch,
        _fit_config(values),
        archetype_name=archetype_name,
        target_name=target_name,
    )
    result.perturbation = perturbation
    out = Path(values[CONF_OUT])
    outputs.extend(save_fit(result, out))
    manifold = map_manifold(result, values[CONF_MANIFOLD_POINTS])
    stem = fit_stem(archetype_name, target_name)
    outputs.append(write_manifold_csv(manifold, out / f"{stem}.manifold.csv"))


def cmd_score(values: dict[str, Any], outputs: list[Path]) -> None:
    """Build the score matrix from a directory of fits or by running the fit grid."""
    out = Path(values[CONF_OUT])
    if values.get(CONF_FITS_DIR):
        by_pair = fits_by_pair(_load_fits(Path(values[CONF_FITS_DIR])))
        rows = _registry_order({a for a, _ in by_pair}, ARCHETYPE_NAMES)
        cols = _registry_order({t for _, t in by_pair}, tuple(values[CONF_TARGETS]))
    else:
        jobs, cols = [], []
        for target in values[CONF_TARGETS]:
            batch, target_name, perturbation = _target_batch(target, values)
            cols.append(target_name)
            jobs.extend(
                FitJob(
                    archetype_name=name,
                    target_name=target_name,
                    archetype=build_archetype(name, batch.dim),
                    batch=batch,
                    cfg=_fit_config(values),
                    out_dir=out,
                    perturbation=perturbation,
                )
                for name in values[CONF_ARCHETYPES]
            )
        results = asyncio.run(run_fit_grid(jobs, values[CONF_WORKERS]))
        for result in results:
            outputs.extend(result.paths)
        by_pair = fits_by_pair(load_fit(r.paths[0]) for r in results if r.status == "success")
        rows = list(values[CONF_ARCHETYPES])

    matrix = build_matrix(by_pair, rows, cols)
    outputs.append(write_matrix_csv(matrix, out / f"{MATRIX_STEM}.csv"))
    outputs.append(write_matrix_json(matrix, out / f"{MATRIX_STEM}.json"))
    best_path = out / "best_archetype.csv"
    lines = ["target,archetype"]
    for target in matrix.targets:
        winner = best_archetype(matrix, target)
        LOGGER.info("Best archetype for %s: %s", target, winner)
        lines.append(f"{target},{winner}")
        manifold = map_manifold(by_pair[winner, target], values[CONF_MANIFOLD_POINTS])
        stem = fit_stem(winner, target)
        outputs.append(write_manifold_csv(manifold, out / f"{stem}.manifold.csv"))
    best_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    outputs.append(best_path)


def cmd_report(values: dict[str, Any], outputs: list[Path]) -> None:
    """Render the score matrix and perturbation sweeps as SVG and CSV."""
    if not values.get(CONF_MATRIX) and not values.get(CONF_FITS_DIR):
        msg = "report needs --matrix and/or --fits-dir"
        raise ValueError(msg)
    out = Path(values[CONF_OUT])
    if values.get(CONF_MATRIX):
        path = Path(values[CONF_MATRIX])
        matrix = read_matrix_csv(path) if path.suffix == ".csv" else read_matrix_json(path)
        outputs.append(matrix_svg(matrix, out / f"{MATRIX_STEM}.svg"))
    if values.get(CONF_FITS_DIR):
        points = sweep_points(_load_fits(Path(values[CONF_FITS_DIR])))
        if not points:
            LOGGER.warning("No fits of perturbed targets in %s", values[CONF_FITS_DIR])
        for kind in sorted({p.kind for p in points}):
            group = [p for p in points if p.kind == kind]
            outputs.append(write_sweep_csv(group, out / f"sweep_{kind}.csv"))
            outputs.append(sweep_svg(group, out / f"sweep_{kind}.svg"))


COMMAND_HANDLERS: dict[str, Handler] = {
    "simulate": cmd_simulate,
    "perturb": cmd_perturb,
    "fit": cmd_fit,
    "score": cmd_score,
    "report": cmd_report,
}


# ---------------------------------------------------------------------------
# Parser


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON run-config mirroring the flags")
    parser.add_argument("--seed", type=int, help="global seed (falls back to $DAA_SEED, then 0)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--log-level", choices=LOG_LEVELS)


def _add_sim(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dt", type=float, help="sampling interval")
    parser.add_argument("--tmax", type=float, help="horizon")
    parser.add_argument("--n-traj", type=int, help="number of trajectories")
    parser.add_argument("--substeps", type=int, help="integrator steps per sample")


def _add_fit(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--hidden", type=int, help="hidden width of the flow-map field")
    parser.add_argument("--flow-steps", type=int, help="RK4 steps of the flow map")
    parser.add_argument("--source-tmax", type=float, help="horizon of the archetype flow")
    parser.add_argument("--learn-beta", nargs="*", help="trainable archetype parameters")
    parser.add_argument("--preset", choices=list(PRESETS))
    parser.add_argument("--manifold-points", type=int)


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one sub-parser per command."""
    parser = argparse.ArgumentParser(
        prog=DOMAIN, description="Compare dynamical systems against attractor archetypes."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="simulate a system")
    _add_common(simulate)
    _add_sim(simulate)
    simulate.add_argument("--system", help="registered system name")
    simulate.add_argument("--spec-file", help="TargetSpec or SystemSpec JSON")
    simulate.add_argument("--sigma", type=float, help="diffusion coefficient")

    perturb = sub.add_parser("perturb", help="simulate deformed versions of a system")
    _add_common(perturb)
    _add_sim(perturb)
    perturb.add_argument("--system", help="registered planar system (default ring)")
    perturb.add_argument("--kind", choices=["diffeo", "vf"])
    perturb.add_argument("--scale", type=float, nargs="+", help="perturbation scales s")
    perturb.add_argument("--lengthscale", type=float, help="fixed GP lengthscale")

    fit_parser = sub.add_parser("fit", help="fit one archetype to one target")
    _add_common(fit_parser)
    _add_sim(fit_parser)
    _add_fit(fit_parser)
    fit_parser.add_argument("--archetype", choices=list(ARCHETYPE_NAMES))
    fit_parser.add_argument("--target", help="registered system or trajectory CSV")

    score = sub.add_parser("score", help="build the archetype x target score matrix")
    _add_common(score)
    _add_sim(score)
    _add_fit(score)
    score.add_argument("--fits-dir", help="directory of existing fits")
    score.add_argument("--archetypes", nargs="+", choices=list(ARCHETYPE_NAMES))
    score.add_argument("--targets", nargs="+", help="systems or trajectory CSVs")
    score.add_argument("--workers", type=int, help="parallel fit processes")

    report = sub.add_parser("report", help="render figures and tables")
    _add_common(report)
    report.add_argument("--matrix", help="score matrix JSON or CSV")
    report.add_argument("--fits-dir", help="directory of fits for sweep curves")
    return parser


# ---------------------------------------------------------------------------
# Entry point


def _write_manifest(out_dir: Path, manifest: RunManifest) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / MANIFEST_FILENAME).write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")


def main(argv: list[str] | None = None) -> int:
    """
    Run one command.

    Returns:
        0 when every artifact was written, 2 for invalid input, 1 for
        failures while running.

    """
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    flags = vars(args)
    command: str = flags.pop("command")
    config_path: Path | None = flags.pop("config")
    setup_logging(flags.get(CONF_LOG_LEVEL) or "info")

    try:
        file_values = load_config_file(config_path, command) if config_path else {}
        values = resolve(command, flags, file_values)
    except (vol.Invalid, ValueError, OSError) as err:
        LOGGER.error("Invalid configuration: %s", err)  # noqa: TRY400
        return 2
    setup_logging(values.get(CONF_LOG_LEVEL, "info"))

    started = time.perf_counter()
    outputs: list[Path] = []
    status, error, code = "error", None, 1
    try:
        COMMAND_HANDLERS[command](values, outputs)
        status, code = "success", 0
    except ArchetypeMatchError as err:
        error = str(err)
        LOGGER.error("%s failed: %s", command, err)  # noqa: TRY400
    except (KeyError, ValueError, OSError, vol.Invalid) as err:
        error, code = str(err), 2
        LOGGER.error("%s: invalid input: %s", command, err)  # noqa: TRY400
    except Exception as err:
        error = repr(err)
        LOGGER.exception("Unexpected error in %s", command)
    finally:
        out_dir = Path(values[CONF_OUT])
        manifest = RunManifest(
            command=command,
            argv=[DOMAIN, *argv],
            config=values,
            config_hash=config_hash(values),
            seeds={CONF_SEED: values[CONF_SEED]},
            versions=_versions(),
            wall_time=time.perf_counter() - started,
            outputs=[_relative(p, out_dir) for p in outputs],
            status=status,
            error=error,
        )
        _write_manifest(out_dir, manifest)
    LOGGER.info("Wrote %d artifact(s) to %s", len(outputs), values[CONF_OUT])
    return code


def _relative(path: Path, root: Path) -> str:
    try:
        return path.relative_to(root).as_posix()
    except ValueError:
        return path.as_posix()


if COMMANDS != tuple(COMMAND_HANDLERS):  # pragma: no cover
    msg = "command table out of sync"
    raise RuntimeError(msg)
