"""
Run (archetype, target) fits concurrently.

Each job fits one pair and writes its artifacts; failures are reported per
job instead of aborting the grid. Jobs fan out to a process pool through
asyncio and results come back in job order.
"""

from __future__ import annotations

import asyncio
import logging
import multiprocessing
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from pydantic import ValidationError

from .exceptions import ArchetypeMatchError
from .train import FitConfig, fit, save_fit

if TYPE_CHECKING:
    from collections.abc import Sequence
    from pathlib import Path

    from .archetypes import SystemSpec
    from .perturb import PerturbationSpec
    from .sim import TrajectoryBatch

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitJob:
    """One cell of the fit grid."""

    archetype_name: str
    target_name: str
    archetype: SystemSpec
    batch: TrajectoryBatch
    cfg: FitConfig
    out_dir: Path
    perturbation: PerturbationSpec | None = None


@dataclass
class FitJobResult:
    """Outcome of a fit job."""

    archetype_name: str
    target_name: str
    content: str
    status: str = "success"
    paths: list[Path] = field(default_factory=list)
    test_mse: float | None = None
    complexity: float | None = None


def run_fit_job(job: FitJob) -> FitJobResult:
    """
    Fit one pair and write its artifacts.

    Args:
        job: The pair, its data and settings.

    Returns:
        FitJobResult with the written paths, or status "error" and the message.

    """
    LOGGER.debug("Running fit job %s/%s", job.archetype_name, job.target_name)
    try:
        result = fit(
            job.archetype,
            None,
            job.batch,
            job.cfg,
            archetype_name=job.archetype_name,
            target_name=job.target_name,
        )
        result.perturbation = job.perturbation
        paths = save_fit(result, job.out_dir)
    except (ArchetypeMatchError, ValidationError, ValueError) as err:
        LOGGER.warning("Fit %s/%s failed: %s", job.archetype_name, job.target_name, err)
        return FitJobResult(
            archetype_name=job.archetype_name,
            target_name=job.target_name,
            content=f"Error: {err!r}",
            status="error",
        )
    except Exception as err:
        LOGGER.exception("Unexpected error in fit %s/%s", job.archetype_name, job.target_name)
        return FitJobResult(
            archetype_name=job.archetype_name,
            target_name=job.target_name,
            content=f"Error: {err!r}",
            status="error",
        )

    return FitJobResult(
        archetype_name=job.archetype_name,
        target_name=job.target_name,
        content=paths[0].name,
        status="success",
        paths=paths,
        test_mse=result.test_mse,
        complexity=result.complexity,
    )


async def execute_fit(job: FitJob, executor: Executor | None = None) -> FitJobResult:
    """Run a fit job in `executor`, or inline when none is given."""
    if executor is None:
        return run_fit_job(job)
    loop = asyncio.get_running_loop()
    return await loop.run_in_executor(executor, run_fit_job, job)


async def run_fit_grid(jobs: Sequence[FitJob], workers: int = 1) -> list[FitJobResult]:
    """
    Run every job, at most `workers` at a time.

    Returns:
        One result per job, in the order of `jobs`.

    """
    if workers < 1:
        msg = f"workers must be >= 1, got {workers}"
        raise ValueError(msg)
    LOGGER.info("Running %d fits with %d worker(s)", len(jobs), workers)
    if workers == 1:
        return [await execute_fit(job) for job in jobs]
    context = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=workers, mp_context=context) as pool:
        return list(await asyncio.gather(*(execute_fit(job, pool) for job in jobs)))
