from pydantic import BaseModel
from typing import List, Optional


class FluxTerm(BaseModel):
    k: int
    mu: float
    c_k: float
    term: float
    partial_sum: float


class FluxReport(BaseModel):
    lam: float
    phi_direct: Optional[float] = None
    phi_spectral_full: float
    phi_partial: List[float]
    coefficients: List[FluxTerm]
    complete: bool = True
    relative_gap: Optional[float] = None
    message: Optional[str] = None
