"""Boundaries and domains described by a RunConfig."""

from typing import Optional

import numpy as np

from ..schemas.run import RunConfig
from ..services.geometry import (
    DomainSpec,
    MeasuredBoundary,
    circle_polygon,
    equilateral_triangle,
    inradius,
    koch_prefractal,
    make_domain,
    scale_boundary,
    square_polygon,
)


def build_gamma(config: RunConfig) -> MeasuredBoundary:
    if config.boundary == "circle":
        return circle_polygon(config.radius, config.segments)
    if config.boundary == "square":
        return square_polygon(config.side / 2)
    return koch_prefractal(equilateral_triangle(config.side), config.generation, measure=config.measure)


def build_outer(shape: str, size: float, config: RunConfig) -> MeasuredBoundary:
    """Truncation boundary S whose distance from the origin is `size`"""
    if shape == "circle":
        return circle_polygon(size, config.outer_segments)
    if shape == "square":
        return square_polygon(size, n_per_side=max(1, config.outer_segments // 4))
    unit = koch_prefractal(equilateral_triangle(1.0), config.outer_generation, measure="arclength")
    return scale_boundary(unit, size / inradius(unit))


def build_domain(config: RunConfig, size: Optional[float] = None, shape: Optional[str] = None) -> DomainSpec:
    gamma = build_gamma(config)
    if config.domain == "interior" and size is None:
        return make_domain("interior", gamma, label="interior")
    size = config.L[0] if size is None else size
    shape = shape or config.outer
    return make_domain("truncated", gamma, build_outer(shape, size, config), label=f"{shape}-{size:g}")


def truncation_family(config: RunConfig, shape: Optional[str] = None) -> list[DomainSpec]:
    return [build_domain(config, size, shape) for size in config.L]


def gamma_oracle_radius(config: RunConfig) -> Optional[float]:
    """Radius for the disk/annulus oracles, None when Gamma is not a circle"""
    return config.radius if config.boundary == "circle" else None


def is_strictly_decreasing(values) -> bool:
    return bool(np.all(np.diff(np.asarray(values, dtype=float)) < 0))
