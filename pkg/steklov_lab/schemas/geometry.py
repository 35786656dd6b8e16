from pydantic import BaseModel, ConfigDict, FiniteFloat
from typing import List


class Point2(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: FiniteFloat
    y: FiniteFloat

    def as_tuple(self) -> tuple[float, float]:
        return (self.x, self.y)


class DsetEstimate(BaseModel):
    """Ball-mass scaling fit of a measured boundary"""

    slope: float
    c1_hat: float
    c2_hat: float
    radii: List[float]
    n_centers: int
    seed: int
    in_scale_band: bool = True
