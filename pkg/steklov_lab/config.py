from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Literal
from dotenv import load_dotenv

load_dotenv()

class Settings(BaseSettings):

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="STEKLOV_LAB_",
        case_sensitive=False,
        extra="ignore",
    )

    # Linear solvers (CG tolerance is relative; max_iter = factor * n)
    cg_tol: float = 1e-12
    cg_max_iter_factor: int = 20
    linear_solver: Literal["direct", "cg"] = "direct"

    # Dense eigensolver
    eigensolver: Literal["jacobi", "lapack"] = "jacobi"
    jacobi_tol: float = 1e-12
    jacobi_max_sweeps: int = 30
    symmetry_tol: float = 1e-8

    # Mesher
    min_angle: float = 20.0
    max_refinement_rounds: int = 200
    mesh_grading: float = 0.25
    family_max_rounds: int = 6

    # Runner
    threads: int = 1
    output_dir: str = "runs"
    float_digits: int = 17

    # Logging
    log_level: str = "INFO"
    log_json: bool = False

    @property
    def float_format(self) -> str:
        """printf-style format used for every floating-point artifact"""
        return f"%.{self.float_digits}g"


settings = Settings()
