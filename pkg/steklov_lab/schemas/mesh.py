from pydantic import BaseModel, Field


class MeshQuality(BaseModel):
    min_angle: float = Field(gt=0, description="Smallest triangle angle in degrees")
    max_aspect: float = Field(description="Largest circumradius / (2 * inradius), 1 for equilateral")
    h_max: float = Field(gt=0, description="Longest edge")
    n_vertices: int
    n_triangles: int
    n_boundary_edges: int
    euler_characteristic: int
    area: float
