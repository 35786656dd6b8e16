from typing import Any, Optional


class LabError(Exception):
    """Base error; `context` carries the key/value details that get logged"""

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context = context

    def __str__(self) -> str:
        if not any(value is not None for value in self.context.values()):
            return self.message
        details = ", ".join(f"{key}={value}" for key, value in self.context.items() if value is not None)
        return f"{self.message} ({details})"


class ParameterError(LabError, ValueError):
    pass


class GeometryError(LabError):
    pass


class MeshQualityError(LabError):
    def __init__(self, message: str, min_angle: float, **context: Any):
        super().__init__(message, min_angle=min_angle, **context)
        self.min_angle = min_angle


class MeshValidationError(LabError):
    def __init__(self, violations: list[str]):
        super().__init__(f"{len(violations)} mesh invariant(s) violated: " + "; ".join(violations))
        self.violations = violations


class AssemblyError(LabError):
    pass


class SolverError(LabError):
    def __init__(self, message: str, residuals: Optional[list[float]] = None, **context: Any):
        super().__init__(message, **context)
        self.residuals = residuals or []


class EigensolverError(LabError):
    pass


class MatrixError(LabError):
    pass


class NumericalQualityError(LabError):
    pass


class SingularityError(LabError):
    pass


class PreconditionError(LabError):
    pass


class ConfigError(LabError):
    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None):
        super().__init__(message, line=line, key=key)
        self.line = line
        self.key = key


class ExperimentError(LabError):
    def __init__(self, step: str, cause: LabError):
        super().__init__(f"Experiment step '{step}' failed: {cause.message}", step=step, **cause.context)
        self.step = step
        self.cause = cause
