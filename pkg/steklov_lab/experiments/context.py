from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel

from ..errors import ExperimentError, LabError
from ..schemas.run import Check, RunConfig
from ..services import storage
from ..services.dtn import SteklovSpectrum
from ..services.geometry import MeasuredBoundary
from ..services.mesh import Mesh
from ..schemas.transport import FluxReport

logger = structlog.get_logger()


class ExperimentContext:
    """Output directory, acceptance checks and emitted files of one run"""

    def __init__(self, config: RunConfig, out_dir: Path, threads: int = 1):
        self.config = config
        self.out_dir = Path(out_dir)
        self.threads = threads
        self.checks: list[Check] = []
        self.files: list[Path] = []
        self.current_step: Optional[str] = None

    @contextmanager
    def step(self, name: str) -> Iterator[None]:
        """Run a pipeline step; module errors are re-raised with the step name"""
        self.current_step = name
        logger.info("Step started", step=name)
        try:
            yield
        except LabError as e:
            logger.error("Step failed", step=name, error=e.message, **e.context)
            raise ExperimentError(name, e) from e
        logger.info("Step finished", step=name)

    def check(
        self,
        name: str,
        value: float,
        reference: Optional[float] = None,
        tolerance: Optional[float] = None,
        passed: Optional[bool] = None,
        oracle: Optional[str] = None,
        relative: bool = True,
    ) -> Check:
        """Record an acceptance check; by default |value - reference| within tolerance"""

        if passed is None:
            if reference is None or tolerance is None:
                raise ValueError(f"Check '{name}' needs a reference and tolerance or an explicit outcome")
            error = abs(value - reference)
            if relative:
                error /= abs(reference)
            passed = bool(error <= tolerance)

        check = Check(
            name=name,
            value=float(value),
            reference=None if reference is None else float(reference),
            tolerance=tolerance,
            passed=bool(passed),
            oracle=oracle,
        )
        self.checks.append(check)
        log = logger.info if check.passed else logger.warning
        log("Check recorded", check=name, value=check.value, reference=check.reference, passed=check.passed)
        return check

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(check.passed for check in self.checks)

    def path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def _record(self, path: Path) -> Path:
        if path not in self.files:
            self.files.append(path)
        return path

    def write_table(self, name: str, table: pd.DataFrame) -> Path:
        return self._record(storage.write_table(table, self.path(name)))

    def write_mesh(self, name: str, mesh: Mesh) -> Path:
        return self._record(storage.write_mesh(mesh, self.path(name)))

    def write_boundary(self, name: str, boundary: MeasuredBoundary) -> Path:
        return self._record(storage.write_boundary(boundary, self.path(name)))

    def write_spectrum(self, name: str, spectrum: SteklovSpectrum, oracle: Optional[np.ndarray] = None) -> Path:
        table = storage.spectrum_table(spectrum)
        if oracle is not None:
            table["oracle"] = oracle[: len(table)]
        return self.write_table(name, table)

    def write_eigenvectors(self, name: str, spectrum: SteklovSpectrum) -> Path:
        return self._record(storage.write_eigenvectors(spectrum, self.path(name)))

    def write_flux(self, name: str, report: FluxReport) -> Path:
        return self._record(storage.write_flux(report, self.path(name)))

    def write_json(self, name: str, model: BaseModel) -> Path:
        return self._record(storage.write_json(model, self.path(name)))
