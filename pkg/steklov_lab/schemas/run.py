from pydantic import BaseModel, ConfigDict, Field, field_validator
from datetime import datetime
from fractions import Fraction
from typing import Any, Dict, List, Literal, Optional


Experiment = Literal[
    "mesh",
    "dset-check",
    "steklov",
    "spectrum-compare",
    "mu0-decay",
    "truncation-convergence",
    "flux-compare",
    "monotonicity",
]


class RunConfig(BaseModel):
    """Flat experiment configuration, one `key=value` per line in the config file"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    experiment: Experiment

    # Gamma
    boundary: Literal["circle", "koch", "square"] = "circle"
    radius: float = Field(1.0, gt=0)
    segments: int = Field(256, ge=8)
    side: float = Field(1.0, gt=0)
    generation: int = Field(3, ge=0, le=8)
    measure: Literal["self_similar", "arclength"] = "self_similar"

    # Domain and truncation boundary S
    domain: Literal["interior", "truncated"] = "interior"
    outer: Literal["circle", "square", "koch"] = "circle"
    outer_shapes: List[Literal["circle", "square", "koch"]] = ["circle", "square", "koch"]
    outer_segments: int = Field(64, ge=8)
    outer_generation: int = Field(2, ge=0, le=6)
    outer_condition: Literal["dirichlet", "neumann"] = "dirichlet"
    L: List[float] = [2.0, 4.0, 8.0, 16.0]

    # Discretization
    h: float = Field(0.05, gt=0)
    h_outer: Optional[float] = Field(None, gt=0)
    grading: Optional[float] = Field(None, ge=0)

    # Problem data
    lambdas: List[float] = [0.1, 1.0, 10.0]
    k_compare: int = Field(7, ge=1)
    probes: List[float] = [1.5]

    # d-set check
    dset_radii: List[float] = [1 / 3, 1 / 9, 1 / 27, 1 / 81]
    n_centers: int = Field(64, ge=8)

    # Acceptance tolerances
    oracle_tol: float = Field(0.02, gt=0)
    decay_tol: float = Field(0.05, gt=0)
    gap_tol: float = Field(0.05, gt=0)
    dset_tol: float = Field(0.05, gt=0)
    identity_tol: float = Field(1e-8, gt=0)

    seed: int = 0

    @field_validator("L", "lambdas", "probes", "dset_radii", mode="before")
    @classmethod
    def parse_fractions(cls, values):
        """Accept entries such as 1/27 in float lists"""
        if isinstance(values, (list, tuple)):
            return [float(Fraction(v)) if isinstance(v, str) and "/" in v else v for v in values]
        return values


class Check(BaseModel):
    name: str
    value: Optional[float] = None
    reference: Optional[float] = None
    tolerance: Optional[float] = None
    passed: bool
    oracle: Optional[str] = None


class RunSummary(BaseModel):
    experiment: str
    passed: bool
    checks: List[Check]
    failed_step: Optional[str] = None
    error: Optional[str] = None


class ArtifactRecord(BaseModel):
    path: str
    sha256: str
    bytes: int


class RunManifest(BaseModel):
    config: Dict[str, Any]
    versions: Dict[str, str]
    seed: int
    started_at: datetime
    wall_clock_seconds: float
    passed: bool
    files: List[ArtifactRecord]
