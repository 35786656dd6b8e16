"""Boundaries, domains and the d-set check.

Polygons are stored counterclockwise as (n, 2) arrays; edge i runs from
vertex i to vertex (i + 1) % n. A MeasuredBoundary attaches one mass per edge,
the discrete stand-in for the d-dimensional measure on the boundary.
"""

from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np
import shapely
import structlog

from ..errors import GeometryError, ParameterError
from ..schemas.geometry import DsetEstimate, Point2

logger = structlog.get_logger()

KOCH_DIMENSION = float(np.log(4.0) / np.log(3.0))
MAX_KOCH_GENERATION = 8

PointLike = Union[Point2, Sequence[float], np.ndarray]


def _as_xy(point: Optional[PointLike]) -> np.ndarray:
    if point is None:
        return np.zeros(2)
    if isinstance(point, Point2):
        return np.array([point.x, point.y], dtype=float)
    xy = np.asarray(point, dtype=float).reshape(2)
    if not np.all(np.isfinite(xy)):
        raise ParameterError("Point coordinates must be finite", point=xy.tolist())
    return xy


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


def self_intersections(vertices: np.ndarray) -> list[tuple[int, int]]:
    """Pairs (i, j), i < j, of non-adjacent polygon edges that intersect"""

    n = len(vertices)
    starts = vertices
    ends = np.roll(vertices, -1, axis=0)
    segments = shapely.linestrings(np.stack([starts, ends], axis=1))
    tree = shapely.STRtree(segments)
    left, right = tree.query(segments, predicate="intersects")

    keep = left < right
    left, right = left[keep], right[keep]
    adjacent = (right - left == 1) | ((left == 0) & (right == n - 1))
    return [(int(i), int(j)) for i, j in zip(left[~adjacent], right[~adjacent])]


@dataclass(frozen=True, eq=False)
class Polygon:
    vertices: np.ndarray

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise GeometryError("Polygon vertices must be an (n, 2) array", shape=vertices.shape)
        if len(vertices) < 3:
            raise GeometryError("Polygon needs at least 3 vertices", n_vertices=len(vertices))
        if not np.all(np.isfinite(vertices)):
            raise GeometryError("Polygon vertices must be finite")
        steps = np.linalg.norm(np.roll(vertices, -1, axis=0) - vertices, axis=1)
        if np.any(steps == 0.0):
            raise GeometryError("Consecutive polygon vertices coincide", edge=int(np.argmin(steps)))
        object.__setattr__(self, "vertices", _frozen(vertices))

        crossings = self_intersections(vertices)
        if crossings:
            raise GeometryError("Polygon is not simple", first_crossing=crossings[0], n_crossings=len(crossings))

    @property
    def n_edges(self) -> int:
        return len(self.vertices)

    @property
    def edge_starts(self) -> np.ndarray:
        return self.vertices

    @cached_property
    def edge_ends(self) -> np.ndarray:
        return np.roll(self.vertices, -1, axis=0)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.edge_ends - self.edge_starts, axis=1)

    @cached_property
    def signed_area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    @property
    def is_ccw(self) -> bool:
        return self.signed_area > 0

    @property
    def area(self) -> float:
        return abs(self.signed_area)

    @property
    def perimeter(self) -> float:
        return float(self.edge_lengths.sum())

    @cached_property
    def diameter(self) -> float:
        points = self.vertices
        if len(points) > 2000:
            # the diameter is realized on the convex hull
            hull = shapely.convex_hull(shapely.multipoints(points))
            points = shapely.get_coordinates(hull)
        diffs = points[:, None, :] - points[None, :, :]
        return float(np.sqrt((diffs**2).sum(axis=-1)).max())

    def point_on_edge(self, edge: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Points P_e + t (Q_e - P_e); t = 0 returns the stored vertex exactly"""
        edge = np.asarray(edge)
        t = np.asarray(t, dtype=float)[..., None]
        start = self.edge_starts[edge]
        return start + t * (self.edge_ends[edge] - start)

    def as_ring(self) -> shapely.LinearRing:
        return shapely.LinearRing(self.vertices)

    def as_shape(self) -> shapely.Polygon:
        return shapely.Polygon(self.vertices)


@dataclass(frozen=True, eq=False)
class MeasuredBoundary:
    polygon: Polygon
    segment_masses: np.ndarray
    d: float
    measure: str = "arclength"

    def __post_init__(self):
        masses = np.asarray(self.segment_masses, dtype=float)
        if masses.shape != (self.polygon.n_edges,):
            raise GeometryError(
                "One mass per edge is required", n_masses=masses.size, n_edges=self.polygon.n_edges
            )
        if np.any(~np.isfinite(masses)) or np.any(masses <= 0):
            raise GeometryError("Segment masses must be positive", min_mass=float(masses.min()))
        if not 0.0 < self.d < 2.0:
            raise GeometryError("Dimension d must lie in (0, 2)", d=self.d)
        object.__setattr__(self, "segment_masses", _frozen(masses))

    @cached_property
    def total_mass(self) -> float:
        return float(self.segment_masses.sum())

    @property
    def n_edges(self) -> int:
        return self.polygon.n_edges


class DomainKind(str, Enum):
    INTERIOR = "interior"
    TRUNCATED = "truncated"


@dataclass(frozen=True, eq=False)
class DomainSpec:
    kind: DomainKind
    gamma: MeasuredBoundary
    s: Optional[MeasuredBoundary] = None
    clearance: Optional[float] = None
    label: str = ""

    @property
    def is_truncated(self) -> bool:
        return self.kind is DomainKind.TRUNCATED

    @cached_property
    def shape(self) -> shapely.Polygon:
        """Polygon of the meshed region (Omega_0, or Omega_S with Gamma as its hole)"""
        if self.is_truncated:
            return shapely.Polygon(self.s.polygon.vertices, holes=[self.gamma.polygon.vertices])
        return self.gamma.polygon.as_shape()

    @property
    def area(self) -> float:
        if self.is_truncated:
            return self.s.polygon.area - self.gamma.polygon.area
        return self.gamma.polygon.area


def regular_polygon(
    radius: float,
    n_segments: int,
    center: Optional[PointLike] = None,
    phase: float = 0.0,
) -> MeasuredBoundary:
    """Regular n-gon inscribed in a circle, arclength masses, d = 1"""

    if radius <= 0:
        raise ParameterError("Radius must be positive", radius=radius)
    if n_segments < 3:
        raise ParameterError("A polygon needs at least 3 segments", n_segments=n_segments)
    theta = phase + 2.0 * np.pi * np.arange(n_segments) / n_segments
    vertices = _as_xy(center) + radius * np.column_stack([np.cos(theta), np.sin(theta)])
    polygon = Polygon(vertices)
    return MeasuredBoundary(polygon, polygon.edge_lengths, d=1.0, measure="arclength")


def circle_polygon(radius: float, n_segments: int, center: Optional[PointLike] = None) -> MeasuredBoundary:
    if n_segments < 8:
        raise ParameterError("circle_polygon needs at least 8 segments", n_segments=n_segments)
    return regular_polygon(radius, n_segments, center)


def square_polygon(half_side: float, center: Optional[PointLike] = None, n_per_side: int = 1) -> MeasuredBoundary:
    """Axis-aligned square with each side split into n_per_side equal edges"""

    if half_side <= 0:
        raise ParameterError("Half side must be positive", half_side=half_side)
    if n_per_side < 1:
        raise ParameterError("Need at least one edge per side", n_per_side=n_per_side)
    corners = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]) * half_side
    t = np.arange(n_per_side) / n_per_side
    sides = [corners[i] + t[:, None] * (corners[(i + 1) % 4] - corners[i]) for i in range(4)]
    polygon = Polygon(np.vstack(sides) + _as_xy(center))
    return MeasuredBoundary(polygon, polygon.edge_lengths, d=1.0, measure="arclength")


def equilateral_triangle(side: float = 1.0, center: Optional[PointLike] = None) -> Polygon:
    """Counterclockwise equilateral triangle with a horizontal base, centered at its centroid"""
    circumradius = side / np.sqrt(3.0)
    theta = np.pi / 2 + 2.0 * np.pi * np.arange(3) / 3
    return Polygon(_as_xy(center) + circumradius * np.column_stack([np.cos(theta), np.sin(theta)]))


def _koch_step(vertices: np.ndarray, bump_sign: float) -> np.ndarray:
    starts = vertices
    steps = np.roll(vertices, -1, axis=0) - starts
    # right-hand normal, outward for a counterclockwise polygon
    normals = np.column_stack([steps[:, 1], -steps[:, 0]])
    first = starts + steps / 3.0
    second = starts + 2.0 * steps / 3.0
    apex = starts + 0.5 * steps + bump_sign * (np.sqrt(3.0) / 6.0) * normals
    return np.stack([starts, first, apex, second], axis=1).reshape(-1, 2)


def koch_prefractal(
    base: Polygon,
    generation: int,
    measure: str = "self_similar",
    base_masses: Optional[np.ndarray] = None,
    inward: bool = False,
) -> MeasuredBoundary:
    """Replace every edge `generation` times by the four-segment Koch generator.

    With the self-similar measure each base edge keeps its mass (length**d by
    default, so a dilated base gives a dilated measure) and spreads it evenly
    over its 4**generation descendants; with the arclength measure every
    segment carries its Euclidean length. Inward bumps are rejected on a
    triangle, where the first generation already meets at the centroid.
    """

    if generation < 0 or generation > MAX_KOCH_GENERATION:
        raise ParameterError(
            "Koch generation out of range", generation=generation, max_generation=MAX_KOCH_GENERATION
        )
    if measure not in ("self_similar", "arclength"):
        raise ParameterError("Unknown boundary measure", measure=measure)

    if inward and base.n_edges == 3:
        raise ParameterError("Inward Koch bumps on a triangle are not simple", generation=generation)

    bump_sign = 1.0 if base.is_ccw else -1.0
    if inward:
        bump_sign = -bump_sign

    vertices = np.asarray(base.vertices)
    for _ in range(generation):
        vertices = _koch_step(vertices, bump_sign)

    try:
        polygon = Polygon(vertices)
    except GeometryError as e:
        raise GeometryError("Koch prefractal is not simple", generation=generation, **e.context) from e

    if measure == "arclength":
        return MeasuredBoundary(polygon, polygon.edge_lengths, d=1.0, measure="arclength")

    if base_masses is None:
        base_masses = base.edge_lengths**KOCH_DIMENSION
    base_masses = np.asarray(base_masses, dtype=float)
    if base_masses.shape != (base.n_edges,):
        raise ParameterError("One base mass per base edge is required", n_masses=base_masses.size)
    masses = np.repeat(base_masses, 4**generation) / 4.0**generation

    logger.debug("Koch prefractal generated", generation=generation, n_edges=polygon.n_edges)
    return MeasuredBoundary(polygon, masses, d=KOCH_DIMENSION, measure="self_similar")


def scale_boundary(b: MeasuredBoundary, factor: float, center: Optional[PointLike] = None) -> MeasuredBoundary:
    """Dilation about `center`; masses scale like factor**d"""
    if factor <= 0:
        raise ParameterError("Scale factor must be positive", factor=factor)
    origin = _as_xy(center)
    polygon = Polygon(origin + factor * (b.polygon.vertices - origin))
    return MeasuredBoundary(polygon, b.segment_masses * factor**b.d, d=b.d, measure=b.measure)


def translate_boundary(b: MeasuredBoundary, offset: PointLike) -> MeasuredBoundary:
    polygon = Polygon(b.polygon.vertices + _as_xy(offset))
    return MeasuredBoundary(polygon, b.segment_masses, d=b.d, measure=b.measure)


def inradius(b: MeasuredBoundary, center: Optional[PointLike] = None) -> float:
    """Distance from `center` to the boundary curve"""
    return float(shapely.distance(shapely.Point(_as_xy(center)), b.polygon.as_ring()))


def make_domain(
    kind: Union[DomainKind, str],
    gamma: MeasuredBoundary,
    s: Optional[MeasuredBoundary] = None,
    label: str = "",
) -> DomainSpec:
    kind = DomainKind(kind)

    if kind is DomainKind.INTERIOR:
        return DomainSpec(kind, gamma, None, None, label)

    if s is None:
        raise ParameterError("Truncated domain requires a boundary S")

    gamma_ring = gamma.polygon.as_ring()
    s_ring = s.polygon.as_ring()
    if shapely.intersects(gamma_ring, s_ring):
        raise GeometryError("Boundaries Gamma and S intersect")

    s_shape = s.polygon.as_shape()
    shapely.prepare(s_shape)
    inside = shapely.contains_xy(s_shape, gamma.polygon.vertices[:, 0], gamma.polygon.vertices[:, 1])
    if not np.all(inside):
        raise GeometryError(
            "Gamma is not strictly inside S", first_outside_vertex=int(np.argmin(inside)),
        )

    clearance = float(shapely.distance(gamma_ring, s_ring))
    if clearance <= 0:
        raise GeometryError("Gamma and S have no positive clearance", clearance=clearance)

    logger.debug("Domain created", kind=kind.value, clearance=clearance)
    return DomainSpec(kind, gamma, s, clearance, label)


def ball_masses(b: MeasuredBoundary, centers: np.ndarray, radius: float) -> np.ndarray:
    """m(B_r(x) ∩ Γ) for every center, clipping each segment's mass by its length fraction in the ball"""

    starts = b.polygon.edge_starts
    steps = b.polygon.edge_ends - starts
    length_sq = (steps**2).sum(axis=1)

    offsets = starts[None, :, :] - centers[:, None, :]
    half_b = (offsets * steps[None, :, :]).sum(axis=-1)
    c = (offsets**2).sum(axis=-1) - radius**2
    disc = half_b**2 - length_sq * c

    root = np.sqrt(np.clip(disc, 0.0, None))
    t_in = np.clip((-half_b - root) / length_sq, 0.0, 1.0)
    t_out = np.clip((-half_b + root) / length_sq, 0.0, 1.0)
    fraction = np.where(disc > 0, t_out - t_in, 0.0)
    return fraction @ b.segment_masses


def dset_dimension_estimate(
    b: MeasuredBoundary,
    radii: Sequence[float],
    n_centers: int,
    seed: int = 0,
) -> DsetEstimate:
    """Least-squares slope of log m(B_r(x) ∩ Γ) against log r, pooled over random centers on Γ"""

    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or len(radii) < 2:
        raise ParameterError("Need at least two radii")
    if np.any(radii <= 0) or np.any(radii > 1):
        raise ParameterError("Radii must lie in (0, 1]", radii=radii.tolist())
    if np.any(np.diff(radii) >= 0):
        raise ParameterError("Radii must be strictly decreasing", radii=radii.tolist())
    if n_centers < 8:
        raise ParameterError("Need at least 8 centers", n_centers=n_centers)
    diameter = b.polygon.diameter
    if radii[0] > diameter:
        raise ParameterError("Radius exceeds the boundary diameter", radius=float(radii[0]), diameter=diameter)

    longest = float(b.polygon.edge_lengths.max())
    in_band = bool(radii[-1] >= 3.0 * longest and radii[0] <= diameter / 3.0)
    if not in_band:
        logger.warning(
            "Radii leave the prefractal scale band",
            r_min=float(radii[-1]),
            r_max=float(radii[0]),
            band_low=3.0 * longest,
            band_high=diameter / 3.0,
        )

    rng = np.random.default_rng(seed)
    edges = rng.choice(b.n_edges, size=n_centers, p=b.segment_masses / b.total_mass)
    centers = b.polygon.point_on_edge(edges, rng.random(n_centers))

    masses = np.column_stack([ball_masses(b, centers, r) for r in radii])
    log_r = np.broadcast_to(np.log(radii), masses.shape).ravel()
    slope, _ = np.polyfit(log_r, np.log(masses).ravel(), 1)

    ratios = masses / radii[None, :] ** slope
    estimate = DsetEstimate(
        slope=float(slope),
        c1_hat=float(ratios.min()),
        c2_hat=float(ratios.max()),
        radii=radii.tolist(),
        n_centers=n_centers,
        seed=seed,
        in_scale_band=in_band,
    )
    logger.info("d-set estimate", slope=estimate.slope, c1=estimate.c1_hat, c2=estimate.c2_hat)
    return estimate
