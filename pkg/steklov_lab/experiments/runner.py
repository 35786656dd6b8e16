"""Run one experiment: pipeline, summary.json and manifest.json."""

import platform
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
import scipy
import shapely
import structlog

from .. import __version__
from ..config import settings
from ..errors import ExperimentError, LabError
from ..schemas.run import ArtifactRecord, RunConfig, RunManifest, RunSummary
from ..services import storage
from . import pipelines
from .context import ExperimentContext

logger = structlog.get_logger()


def library_versions() -> dict[str, str]:
    return {
        "steklov_lab": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "shapely": shapely.__version__,
        "pandas": pd.__version__,
        "python": platform.python_version(),
    }


def _artifacts(out_dir: Path, files: list[Path]) -> list[ArtifactRecord]:
    return [
        ArtifactRecord(path=path.relative_to(out_dir).as_posix(), sha256=storage.sha256_file(path), bytes=path.stat().st_size)
        for path in sorted(files)
    ]


def run(config: RunConfig, out_dir: Union[str, Path, None] = None, threads: Optional[int] = None) -> RunManifest:
    """Execute the configured pipeline and write its summary and manifest.

    Module errors do not escape: they end the pipeline, and the summary
    records the failing step and message with passed = false.
    """

    pipeline = pipelines.get(config.experiment)
    out_dir = Path(out_dir or Path(settings.output_dir) / config.experiment)
    ctx = ExperimentContext(config, out_dir, threads or settings.threads)

    started_at = datetime.now(timezone.utc)
    clock = time.perf_counter()
    structlog.contextvars.bind_contextvars(experiment=config.experiment)
    logger.info("Experiment started", out_dir=str(out_dir), seed=config.seed)

    failed_step, error = None, None
    try:
        pipeline(config, ctx)
    except ExperimentError as e:
        failed_step, error = e.step, e.message
    except LabError as e:
        failed_step, error = ctx.current_step, e.message
        logger.error("Experiment failed", step=failed_step, error=e.message, **e.context)

    passed = error is None and ctx.passed
    summary = RunSummary(
        experiment=config.experiment, passed=passed, checks=ctx.checks, failed_step=failed_step, error=error
    )
    ctx.write_json("summary.json", summary)

    manifest = RunManifest(
        config=config.model_dump(mode="json"),
        versions=library_versions(),
        seed=config.seed,
        started_at=started_at,
        wall_clock_seconds=time.perf_counter() - clock,
        passed=passed,
        files=_artifacts(ctx.out_dir, ctx.files),
    )
    storage.write_json(manifest, ctx.path("manifest.json"))

    n_failed = sum(not check.passed for check in ctx.checks)
    logger.info("Experiment finished", passed=passed, n_checks=len(ctx.checks), n_failed=n_failed)
    structlog.contextvars.unbind_contextvars("experiment")
    return manifest
