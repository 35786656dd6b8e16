"""Conforming triangulations of Omega_0 and Omega_S.

Boundary vertices remember the polygon edge they sit on and their parameter
t in [0, 1) along it, so every boundary mesh edge knows exactly which share
of its polygon edge's mass it carries.
"""

from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np
import shapely
import structlog
from scipy.spatial import Delaunay, cKDTree

from ..config import settings
from ..errors import GeometryError, MeshQualityError, MeshValidationError, ParameterError
from ..schemas.mesh import MeshQuality
from .geometry import DomainSpec, MeasuredBoundary, Polygon, make_domain

logger = structlog.get_logger()

# |cross| / (longest edge)^2 at or below which a simplex counts as flat
FLAT_TOL = 1e-10


class VertexTag(IntEnum):
    INTERIOR = 0
    GAMMA = 1
    S = 2


_TAG_NAMES = {"interior": VertexTag.INTERIOR, "gamma": VertexTag.GAMMA, "s": VertexTag.S}

Which = Union[VertexTag, str]


def as_tag(which: Which) -> VertexTag:
    if isinstance(which, VertexTag):
        return which
    try:
        return _TAG_NAMES[str(which).lower()]
    except KeyError:
        raise ParameterError("Unknown boundary tag", which=which) from None


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


def _edge_keys(a: np.ndarray, b: np.ndarray, n: int) -> np.ndarray:
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    return lo.astype(np.int64) * n + hi.astype(np.int64)


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    vertex_tags: np.ndarray
    vertex_edges: np.ndarray
    vertex_params: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    boundary_polygon_edges: np.ndarray
    boundary_params: np.ndarray
    boundary_masses: np.ndarray
    domain: Optional[DomainSpec] = None

    def __post_init__(self):
        for name in (
            "vertices",
            "triangles",
            "vertex_tags",
            "vertex_edges",
            "vertex_params",
            "boundary_edges",
            "boundary_tags",
            "boundary_polygon_edges",
            "boundary_params",
            "boundary_masses",
        ):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name))))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        u, v = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])

    @property
    def area(self) -> float:
        return float(self.signed_areas.sum())

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex pairs"""
        t = self.triangles
        pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(pairs, axis=1), axis=0)

    @cached_property
    def triangle_neighbors(self) -> np.ndarray:
        """Neighbor across the edge opposite each local vertex, -1 on the boundary"""
        nt = self.n_triangles
        t = self.triangles
        keys = np.concatenate([_edge_keys(t[:, (i + 1) % 3], t[:, (i + 2) % 3], self.n_vertices) for i in range(3)])
        owner = np.tile(np.arange(nt), 3)
        local = np.repeat(np.arange(3), nt)

        order = np.argsort(keys, kind="stable")
        keys, owner, local = keys[order], owner[order], local[order]
        shared = np.flatnonzero(keys[1:] == keys[:-1])

        neighbors = np.full((nt, 3), -1, dtype=np.int64)
        neighbors[owner[shared], local[shared]] = owner[shared + 1]
        neighbors[owner[shared + 1], local[shared + 1]] = owner[shared]
        return neighbors

    @cached_property
    def vertex_triangle(self) -> np.ndarray:
        """One triangle touching each vertex"""
        first = np.full(self.n_vertices, -1, dtype=np.int64)
        flat = self.triangles.ravel()
        owners = np.repeat(np.arange(self.n_triangles), 3)
        first[flat[::-1]] = owners[::-1]
        return first

    def has_tag(self, which: Which) -> bool:
        return bool(np.any(self.boundary_tags == as_tag(which)))

    def boundary_dofs(self, which: Which) -> np.ndarray:
        """Vertices on Gamma (or S) ordered along the polygon"""
        tag = as_tag(which)
        idx = np.flatnonzero(self.vertex_tags == tag)
        order = np.lexsort((self.vertex_params[idx], self.vertex_edges[idx]))
        return idx[order]

    def boundary(self, which: Which) -> MeasuredBoundary:
        if self.domain is None:
            raise ParameterError("Mesh carries no domain description")
        tag = as_tag(which)
        if tag is VertexTag.GAMMA:
            return self.domain.gamma
        if tag is VertexTag.S and self.domain.s is not None:
            return self.domain.s
        raise ParameterError("Mesh has no such boundary", which=str(which))

    @property
    def is_truncated(self) -> bool:
        return self.has_tag(VertexTag.S)


def triangle_geometry(points: np.ndarray, triangles: np.ndarray) -> dict[str, np.ndarray]:
    """Angles (degrees), signed area, circumcenter and circumradius of every triangle"""

    p = points[triangles]
    opposite = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    lengths = np.linalg.norm(opposite, axis=-1)

    u, v = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]

    a, b, c = lengths[:, 0], lengths[:, 1], lengths[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        cos_angles = np.stack(
            [
                (b**2 + c**2 - a**2) / (2 * b * c),
                (c**2 + a**2 - b**2) / (2 * c * a),
                (a**2 + b**2 - c**2) / (2 * a * b),
            ],
            axis=1,
        )
        angles = np.degrees(np.arccos(np.clip(cos_angles, -1.0, 1.0)))

        uu, vv = (u**2).sum(axis=1), (v**2).sum(axis=1)
        cx = (v[:, 1] * uu - u[:, 1] * vv) / (2 * cross)
        cy = (u[:, 0] * vv - v[:, 0] * uu) / (2 * cross)
    centers = p[:, 0] + np.column_stack([cx, cy])
    radii = np.hypot(cx, cy)

    return {
        "lengths": lengths,
        "angles": angles,
        "area": 0.5 * cross,
        "circumcenter": centers,
        "circumradius": radii,
    }


class _DelaunayRefiner:
    """Ruppert-style refinement with batched insertions over scipy's Delaunay.

    Each round retriangulates the whole point set, splits every encroached or
    missing boundary subsegment at its parameter midpoint, then inserts the
    circumcenters of triangles that are too flat or too large. Circumcenters
    of flat triangles that encroach a subsegment split it instead.
    """

    def __init__(
        self,
        domain: DomainSpec,
        h_target: float,
        grading: float,
        min_angle: float,
        max_rounds: int,
        gamma_params: Optional[Sequence[np.ndarray]] = None,
        h_outer: Optional[float] = None,
    ):
        self.domain = domain
        self.h_target = h_target
        self.h_edges = {VertexTag.GAMMA: h_target, VertexTag.S: h_outer or h_target}
        self.grading = grading
        self.min_angle = min_angle
        self.max_rounds = max_rounds

        self.shape = domain.shape
        shapely.prepare(self.shape)

        self.polygons: dict[VertexTag, Polygon] = {VertexTag.GAMMA: domain.gamma.polygon}
        if domain.is_truncated:
            self.polygons[VertexTag.S] = domain.s.polygon

        self._points: list[np.ndarray] = []
        self._tags: list[np.ndarray] = []
        self._edges: list[np.ndarray] = []
        self._params: list[np.ndarray] = []
        self.n_points = 0

        seg_columns = [self._seed_boundary(tag, gamma_params if tag is VertexTag.GAMMA else None) for tag in self.polygons]
        self.seg = {key: np.concatenate([columns[key] for columns in seg_columns]) for key in seg_columns[0]}

        boundary_points = self.points
        self.boundary_tree = cKDTree(boundary_points)
        self.gamma_tree = cKDTree(boundary_points[np.concatenate(self._tags) == VertexTag.GAMMA])
        self._seed_layer()

    # point store

    def _append(self, xy: np.ndarray, tag, edge, param) -> np.ndarray:
        xy = np.atleast_2d(xy)
        n = len(xy)
        ids = np.arange(self.n_points, self.n_points + n)
        self._points.append(xy)
        self._tags.append(np.broadcast_to(np.asarray(tag, dtype=np.int8), (n,)))
        self._edges.append(np.broadcast_to(np.asarray(edge, dtype=np.int64), (n,)))
        self._params.append(np.broadcast_to(np.asarray(param, dtype=float), (n,)))
        self.n_points += n
        self._cache = None
        return ids

    @property
    def points(self) -> np.ndarray:
        if getattr(self, "_cache", None) is None:
            self._cache = np.vstack(self._points)
        return self._cache

    # boundary subdivision

    def _seed_boundary(self, tag: VertexTag, seeds: Optional[Sequence[np.ndarray]]) -> dict[str, np.ndarray]:
        polygon = self.polygons[tag]
        n = polygon.n_edges
        if seeds is not None and len(seeds) != n:
            raise ParameterError("Seed parameters must be given for every edge", n_seeds=len(seeds), n_edges=n)

        per_edge = []
        for e in range(n):
            if seeds is not None:
                ts = np.asarray(seeds[e], dtype=float)
            else:
                pieces = max(1, int(np.ceil(polygon.edge_lengths[e] / self.h_edges[tag] * (1.0 - 1e-12))))
                ts = np.arange(pieces) / pieces
            if ts[0] != 0.0 or np.any(np.diff(ts) <= 0) or ts[-1] >= 1.0:
                raise ParameterError("Edge parameters must start at 0, increase and stay below 1", edge=e)
            per_edge.append(ts)

        first_ids = []
        for e, ts in enumerate(per_edge):
            ids = self._append(polygon.point_on_edge(np.full(len(ts), e), ts), tag, e, ts)
            first_ids.append(ids)

        v0, v1, edges, t0, t1 = [], [], [], [], []
        for e, ts in enumerate(per_edge):
            ids = first_ids[e]
            v0.append(ids)
            v1.append(np.append(ids[1:], first_ids[(e + 1) % n][0]))
            edges.append(np.full(len(ts), e))
            t0.append(ts)
            t1.append(np.append(ts[1:], 1.0))

        return {
            "v0": np.concatenate(v0),
            "v1": np.concatenate(v1),
            "tag": np.full(sum(len(ts) for ts in per_edge), int(tag), dtype=np.int8),
            "edge": np.concatenate(edges),
            "t0": np.concatenate(t0),
            "t1": np.concatenate(t1),
        }

    def _domain_side(self, tag: VertexTag) -> float:
        """+1 when the meshed region lies to the left of the polygon's edges"""
        polygon = self.polygons[tag]
        region_inside = not (tag is VertexTag.GAMMA and self.domain.is_truncated)
        return 1.0 if region_inside == polygon.is_ccw else -1.0

    def _seed_layer(self):
        """One near-equilateral apex over every subsegment, on the domain side"""

        points = self.points
        a, b = points[self.seg["v0"]], points[self.seg["v1"]]
        steps = b - a
        lengths = np.linalg.norm(steps, axis=1)
        side = np.array([self._domain_side(VertexTag(int(tag))) for tag in self.seg["tag"]])
        left = np.column_stack([-steps[:, 1], steps[:, 0]])
        candidates = 0.5 * (a + b) + (np.sqrt(3.0) / 2.0) * side[:, None] * left

        keep = shapely.contains_xy(self.shape, candidates[:, 0], candidates[:, 1])
        keep &= np.array([len(hits) == 0 for hits in self._encroached_by(candidates)])
        nearest, _ = self.boundary_tree.query(candidates)
        keep &= nearest >= 0.5 * lengths

        chosen = self._spread(candidates, 0.5 * lengths, keep)
        if len(chosen):
            self._append(candidates[chosen], VertexTag.INTERIOR, -1, np.nan)

    @staticmethod
    def _spread(candidates: np.ndarray, spacing: np.ndarray, keep: np.ndarray) -> np.ndarray:
        """Greedy selection, in index order, of candidates at least `spacing` apart"""
        order = np.flatnonzero(keep)
        if len(order) == 0:
            return order
        tree = cKDTree(candidates[order])
        alive = np.ones(len(order), dtype=bool)
        for i in range(len(order)):
            if not alive[i]:
                continue
            for j in tree.query_ball_point(candidates[order[i]], spacing[order[i]]):
                if j > i:
                    alive[j] = False
        return order[alive]

    # encroachment

    def _segment_geometry(self):
        points = self.points
        a, b = points[self.seg["v0"]], points[self.seg["v1"]]
        return 0.5 * (a + b), 0.5 * np.linalg.norm(b - a, axis=1)

    def _encroached_by(self, candidates: np.ndarray) -> list[list[int]]:
        """Subsegments whose open diametral disk contains each candidate"""
        mids, halves = self._segment_geometry()
        tree = cKDTree(mids)
        hits = tree.query_ball_point(candidates, halves.max())
        result = []
        for x, near in zip(candidates, hits):
            near = np.asarray(near, dtype=np.int64)
            if len(near):
                dist = np.linalg.norm(mids[near] - x, axis=1)
                near = near[dist < halves[near] * (1.0 - 1e-10)]
            result.append(sorted(near.tolist()))
        return result

    def _encroached_segments(self, triangles: np.ndarray) -> np.ndarray:
        points = self.points
        mids, halves = self._segment_geometry()
        tree = cKDTree(points)
        hits = tree.query_ball_point(mids, halves * (1.0 - 1e-10))
        v0, v1 = self.seg["v0"], self.seg["v1"]
        encroached = np.array(
            [any(j != v0[i] and j != v1[i] for j in near) for i, near in enumerate(hits)], dtype=bool
        )

        tri_keys = np.concatenate(
            [_edge_keys(triangles[:, i], triangles[:, (i + 1) % 3], self.n_points) for i in range(3)]
        )
        missing = ~np.isin(_edge_keys(v0, v1, self.n_points), tri_keys)
        return np.flatnonzero(encroached | missing)

    def _split(self, which: np.ndarray):
        seg = self.seg
        t_mid = 0.5 * (seg["t0"][which] + seg["t1"][which])
        new_ids = np.empty(len(which), dtype=np.int64)
        for tag, polygon in self.polygons.items():
            mask = seg["tag"][which] == tag
            if not np.any(mask):
                continue
            edges = seg["edge"][which][mask]
            xy = polygon.point_on_edge(edges, t_mid[mask])
            new_ids[mask] = self._append(xy, tag, edges, t_mid[mask])

        keep = np.ones(len(seg["v0"]), dtype=bool)
        keep[which] = False
        self.seg = {
            "v0": np.concatenate([seg["v0"][keep], seg["v0"][which], new_ids]),
            "v1": np.concatenate([seg["v1"][keep], new_ids, seg["v1"][which]]),
            "tag": np.concatenate([seg["tag"][keep], seg["tag"][which], seg["tag"][which]]),
            "edge": np.concatenate([seg["edge"][keep], seg["edge"][which], seg["edge"][which]]),
            "t0": np.concatenate([seg["t0"][keep], seg["t0"][which], t_mid]),
            "t1": np.concatenate([seg["t1"][keep], t_mid, seg["t1"][which]]),
        }

    # refinement loop

    def local_size(self, x: np.ndarray) -> np.ndarray:
        distance, _ = self.gamma_tree.query(x)
        return self.h_target + self.grading * distance

    def _triangulate(self) -> np.ndarray:
        points = self.points
        delaunay = Delaunay(points)
        if len(delaunay.coplanar):
            raise GeometryError("Duplicate or degenerate mesh points", n_dropped=len(delaunay.coplanar))
        simplices = delaunay.simplices.astype(np.int64)

        p = points[simplices]
        u, v = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
        flipped = cross < 0
        simplices[flipped] = simplices[flipped][:, [0, 2, 1]]

        # Qhull's triangulated output may close collinear hull runs with zero-area simplices
        longest = np.max(np.sum((p - np.roll(p, 1, axis=1)) ** 2, axis=2), axis=1)
        flat = np.abs(cross) <= FLAT_TOL * longest

        centroids = p.mean(axis=1)
        inside = shapely.contains_xy(self.shape, centroids[:, 0], centroids[:, 1])
        return simplices[inside & ~flat]

    def _insert_circumcenters(self, triangles: np.ndarray, geometry: dict, angle_bad: np.ndarray, size_bad: np.ndarray) -> int:
        bad = np.flatnonzero(angle_bad | size_bad)
        min_angles = geometry["angles"].min(axis=1)
        order = bad[np.lexsort((-geometry["circumradius"][bad], min_angles[bad]))]

        centers = geometry["circumcenter"][order]
        radii = geometry["circumradius"][order]
        inside = shapely.contains_xy(self.shape, centers[:, 0], centers[:, 1])
        encroached = self._encroached_by(centers)

        mids, halves = self._segment_geometry()
        oversized = 2.0 * halves > self.local_size(mids) * (1.0 + 1e-9)

        to_split: set[int] = set()
        usable = np.zeros(len(order), dtype=bool)
        for i, tri in enumerate(order):
            if encroached[i]:
                if angle_bad[tri]:
                    to_split.update(encroached[i])
                else:
                    to_split.update(s for s in encroached[i] if oversized[s])
            elif inside[i]:
                usable[i] = True

        chosen = self._spread(centers, 0.5 * radii, usable)
        if len(chosen):
            self._append(centers[chosen], VertexTag.INTERIOR, -1, np.nan)
        if to_split:
            self._split(np.array(sorted(to_split), dtype=np.int64))
        return len(chosen) + len(to_split)

    def run(self) -> "Mesh":
        triangles = None
        conforming = False
        worst_angle = 0.0

        for round_index in range(self.max_rounds):
            triangles = self._triangulate()

            split = self._encroached_segments(triangles)
            if len(split):
                conforming = False
                self._split(split)
                continue
            conforming = True

            geometry = triangle_geometry(self.points, triangles)
            min_angles = geometry["angles"].min(axis=1)
            worst_angle = float(min_angles.min())
            centroids = self.points[triangles].mean(axis=1)
            angle_bad = min_angles < self.min_angle
            size_bad = geometry["circumradius"] * np.sqrt(3.0) > self.local_size(centroids) * (1.0 + 1e-9)

            if not np.any(angle_bad | size_bad):
                break
            if self._insert_circumcenters(triangles, geometry, angle_bad, size_bad) == 0:
                if np.any(angle_bad):
                    break
                logger.warning("Size refinement stalled", n_large=int(size_bad.sum()))
                break
            logger.debug("Refinement round", round=round_index, n_points=self.n_points, worst_angle=worst_angle)

        if not conforming:
            raise MeshQualityError(
                "Boundary recovery did not finish within the refinement budget", min_angle=worst_angle
            )
        if worst_angle < self.min_angle - 1e-9:
            raise MeshQualityError(
                "Angle bound not reached after bounded refinement", min_angle=worst_angle, bound=self.min_angle
            )
        return self._assemble(triangles)

    def _assemble(self, triangles: np.ndarray) -> "Mesh":
        seg = self.seg
        masses = np.empty(len(seg["v0"]))
        boundaries = {VertexTag.GAMMA: self.domain.gamma, VertexTag.S: self.domain.s}
        for tag in self.polygons:
            mask = seg["tag"] == tag
            masses[mask] = boundaries[tag].segment_masses[seg["edge"][mask]] * (seg["t1"][mask] - seg["t0"][mask])

        order = np.lexsort((seg["t0"], seg["edge"], seg["tag"]))
        return Mesh(
            vertices=self.points,
            triangles=triangles,
            vertex_tags=np.concatenate(self._tags),
            vertex_edges=np.concatenate(self._edges),
            vertex_params=np.concatenate(self._params),
            boundary_edges=np.column_stack([seg["v0"], seg["v1"]])[order],
            boundary_tags=seg["tag"][order],
            boundary_polygon_edges=seg["edge"][order],
            boundary_params=np.column_stack([seg["t0"], seg["t1"]])[order],
            boundary_masses=masses[order],
            domain=self.domain,
        )


def _check_h_target(domain: DomainSpec, h_target: float):
    if not h_target > 0:
        raise ParameterError("h_target must be positive", h_target=h_target)
    if domain.is_truncated and h_target > domain.clearance / 2:
        raise ParameterError(
            "h_target too large for the Gamma-S clearance", h_target=h_target, clearance=domain.clearance
        )
    if h_target > domain.gamma.polygon.diameter / 2:
        raise ParameterError(
            "h_target too large to resolve Gamma", h_target=h_target, diameter=domain.gamma.polygon.diameter
        )


def triangulate(
    domain: DomainSpec,
    h_target: float,
    grading: Optional[float] = None,
    gamma_params: Optional[Sequence[np.ndarray]] = None,
    h_outer: Optional[float] = None,
) -> Mesh:
    """Conforming Delaunay mesh of the domain, boundary edges no longer than h_target.

    Interior sizes grow like h_target + grading * (distance to Gamma). S edges
    start at length h_outer (h_target by default) and are split further only
    where the size field asks for it. `gamma_params` fixes the initial
    subdivision of Gamma, edge by edge.
    """

    _check_h_target(domain, h_target)
    if h_outer is not None and not h_outer > 0:
        raise ParameterError("h_outer must be positive", h_outer=h_outer)
    refiner = _DelaunayRefiner(
        domain,
        h_target,
        settings.mesh_grading if grading is None else grading,
        settings.min_angle,
        settings.max_refinement_rounds,
        gamma_params,
        h_outer,
    )
    mesh = refiner.run()
    logger.info(
        "Mesh generated",
        kind=domain.kind.value,
        n_vertices=mesh.n_vertices,
        n_triangles=mesh.n_triangles,
        n_gamma=int(np.sum(mesh.vertex_tags == VertexTag.GAMMA)),
    )
    return mesh


def gamma_parameters(mesh: Mesh) -> list[np.ndarray]:
    """Sorted parameters of the Gamma vertices, one array per polygon edge"""
    dofs = mesh.boundary_dofs(VertexTag.GAMMA)
    edges, params = mesh.vertex_edges[dofs], mesh.vertex_params[dofs]
    n = mesh.domain.gamma.n_edges
    return [params[edges == e] for e in range(n)]


def triangulate_family(
    domains: Sequence[DomainSpec],
    h_target: float,
    grading: Optional[float] = None,
    h_outer: Optional[float] = None,
) -> list[Mesh]:
    """Mesh domains built on the same Gamma so that all share one Gamma subdivision.

    Any Gamma split requested by one member is pushed to every member and the
    family is remeshed until the subdivisions agree.
    """

    if not domains:
        raise ParameterError("Empty domain family")
    reference = domains[0].gamma.polygon.vertices
    for domain in domains[1:]:
        if domain.gamma.polygon.vertices.shape != reference.shape or not np.array_equal(
            domain.gamma.polygon.vertices, reference
        ):
            raise ParameterError("Every domain of a family must use the same Gamma polygon")

    seeds = None
    for round_index in range(settings.family_max_rounds):
        meshes = [triangulate(domain, h_target, grading, seeds, h_outer) for domain in domains]
        per_mesh = [gamma_parameters(mesh) for mesh in meshes]
        union = [np.unique(np.concatenate(edge_params)) for edge_params in zip(*per_mesh)]
        if all(all(np.array_equal(p, u) for p, u in zip(params, union)) for params in per_mesh):
            logger.info("Mesh family agreed on Gamma", rounds=round_index + 1, n_gamma=sum(len(u) for u in union))
            return meshes
        seeds = union

    raise MeshQualityError(
        "Mesh family did not agree on a common Gamma subdivision",
        min_angle=min(float(triangle_geometry(m.vertices, m.triangles)["angles"].min()) for m in meshes),
        rounds=settings.family_max_rounds,
    )


def refine(mesh: Mesh) -> Mesh:
    """Split every triangle in four through its edge midpoints"""

    nv = mesh.n_vertices
    tri = mesh.triangles
    edges = mesh.edges
    edge_keys = _edge_keys(edges[:, 0], edges[:, 1], nv)
    mid_ids = nv + np.arange(len(edges))

    midpoints = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    tags = np.zeros(len(edges), dtype=np.int8)
    poly_edges = np.full(len(edges), -1, dtype=np.int64)
    params = np.full(len(edges), np.nan)

    b_edges = mesh.boundary_edges
    b_slot = np.searchsorted(edge_keys, _edge_keys(b_edges[:, 0], b_edges[:, 1], nv))
    t_mid = mesh.boundary_params.mean(axis=1)
    tags[b_slot] = mesh.boundary_tags
    poly_edges[b_slot] = mesh.boundary_polygon_edges
    params[b_slot] = t_mid
    if mesh.domain is not None:
        for tag in (VertexTag.GAMMA, VertexTag.S):
            mask = mesh.boundary_tags == tag
            if np.any(mask):
                polygon = mesh.boundary(tag).polygon
                midpoints[b_slot[mask]] = polygon.point_on_edge(mesh.boundary_polygon_edges[mask], t_mid[mask])

    def mid(a, b):
        return mid_ids[np.searchsorted(edge_keys, _edge_keys(a, b, nv))]

    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
    triangles = np.concatenate(
        [
            np.column_stack([a, ab, ca]),
            np.column_stack([ab, b, bc]),
            np.column_stack([ca, bc, c]),
            np.column_stack([ab, bc, ca]),
        ]
    )

    m = mid_ids[b_slot]
    t0, t1 = mesh.boundary_params[:, 0], mesh.boundary_params[:, 1]
    if mesh.domain is not None:
        seg_mass = np.empty(len(b_edges))
        for tag in (VertexTag.GAMMA, VertexTag.S):
            mask = mesh.boundary_tags == tag
            if np.any(mask):
                seg_mass[mask] = mesh.boundary(tag).segment_masses[mesh.boundary_polygon_edges[mask]]
        first_mass, second_mass = seg_mass * (t_mid - t0), seg_mass * (t1 - t_mid)
    else:
        first_mass = mesh.boundary_masses * (t_mid - t0) / (t1 - t0)
        second_mass = mesh.boundary_masses - first_mass

    boundary_edges = np.concatenate([np.column_stack([b_edges[:, 0], m]), np.column_stack([m, b_edges[:, 1]])])
    boundary_params = np.concatenate([np.column_stack([t0, t_mid]), np.column_stack([t_mid, t1])])
    boundary_tags = np.concatenate([mesh.boundary_tags, mesh.boundary_tags])
    boundary_polygon_edges = np.concatenate([mesh.boundary_polygon_edges, mesh.boundary_polygon_edges])
    boundary_masses = np.concatenate([first_mass, second_mass])
    order = np.lexsort((boundary_params[:, 0], boundary_polygon_edges, boundary_tags))

    refined = Mesh(
        vertices=np.vstack([mesh.vertices, midpoints]),
        triangles=triangles,
        vertex_tags=np.concatenate([mesh.vertex_tags, tags]),
        vertex_edges=np.concatenate([mesh.vertex_edges, poly_edges]),
        vertex_params=np.concatenate([mesh.vertex_params, params]),
        boundary_edges=boundary_edges[order],
        boundary_tags=boundary_tags[order],
        boundary_polygon_edges=boundary_polygon_edges[order],
        boundary_params=boundary_params[order],
        boundary_masses=boundary_masses[order],
        domain=mesh.domain,
    )
    logger.debug("Mesh refined", n_vertices=refined.n_vertices, n_triangles=refined.n_triangles)
    return refined


def mesh_quality(mesh: Mesh) -> MeshQuality:
    geometry = triangle_geometry(mesh.vertices, mesh.triangles)
    lengths = geometry["lengths"]
    area = np.abs(geometry["area"])
    semi = 0.5 * lengths.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        aspect = geometry["circumradius"] / (2.0 * area / semi)
    n_edges = len(mesh.edges)
    return MeshQuality(
        min_angle=float(geometry["angles"].min()),
        max_aspect=float(np.nanmax(aspect)),
        h_max=float(lengths.max()),
        n_vertices=mesh.n_vertices,
        n_triangles=mesh.n_triangles,
        n_boundary_edges=len(mesh.boundary_edges),
        euler_characteristic=mesh.n_vertices - n_edges + mesh.n_triangles,
        area=mesh.area,
    )


def validate_mesh(mesh: Mesh) -> MeshQuality:
    """Quality metrics, or MeshValidationError listing every violated invariant"""

    violations: list[str] = []
    nv = mesh.n_vertices

    areas = mesh.signed_areas
    for i in np.flatnonzero(areas <= 0):
        violations.append(f"orientation: triangle {i} has signed area {areas[i]:.3e}")

    t = mesh.triangles
    keys = np.concatenate([_edge_keys(t[:, i], t[:, (i + 1) % 3], nv) for i in range(3)])
    unique_keys, counts = np.unique(keys, return_counts=True)
    for key in unique_keys[counts > 2]:
        violations.append(f"conformity: edge ({key // nv}, {key % nv}) shared by more than two triangles")

    b = mesh.boundary_edges
    boundary_keys = _edge_keys(b[:, 0], b[:, 1], nv)
    single = set(unique_keys[counts == 1].tolist())
    declared = set(boundary_keys.tolist())
    for key in sorted(single - declared):
        violations.append(f"conformity: edge ({key // nv}, {key % nv}) bounds one triangle but is not a boundary edge")
    for key in sorted(declared - single):
        violations.append(f"conformity: boundary edge ({key // nv}, {key % nv}) does not bound exactly one triangle")

    for i, (v0, v1) in enumerate(b):
        tag = mesh.boundary_tags[i]
        if mesh.vertex_tags[v0] != tag or mesh.vertex_tags[v1] != tag:
            violations.append(f"tags: boundary edge {i} ({v0}, {v1}) has endpoints not tagged {VertexTag(tag).name}")

    if mesh.domain is not None:
        scale = max(1.0, float(np.abs(mesh.vertices).max()))
        for tag in (VertexTag.GAMMA, VertexTag.S):
            if tag is VertexTag.S and not mesh.domain.is_truncated:
                continue
            boundary = mesh.boundary(tag)
            on = np.flatnonzero(mesh.vertex_tags == tag)
            expected = boundary.polygon.point_on_edge(mesh.vertex_edges[on], mesh.vertex_params[on])
            off = np.linalg.norm(mesh.vertices[on] - expected, axis=1) > 1e-12 * scale
            for v in on[off]:
                violations.append(f"tags: vertex {v} is not on its recorded {tag.name} edge {mesh.vertex_edges[v]}")

            mask = mesh.boundary_tags == tag
            sums = np.bincount(
                mesh.boundary_polygon_edges[mask], weights=mesh.boundary_masses[mask], minlength=boundary.n_edges
            )
            relative = np.abs(sums - boundary.segment_masses) / boundary.segment_masses
            for e in np.flatnonzero(relative > 1e-12):
                violations.append(
                    f"mass partition: {tag.name} edge {e} carries {sums[e]:.17g} of {boundary.segment_masses[e]:.17g}"
                )

    if violations:
        logger.warning("Mesh validation failed", n_violations=len(violations))
        raise MeshValidationError(violations)
    return mesh_quality(mesh)


def is_delaunay(mesh: Mesh, tol: float = 1e-10) -> bool:
    """Opposite angles of every interior edge sum to at most pi, boundary edges see at most pi/2.

    Equivalent to non-positive off-diagonal P1 stiffness entries (M-matrix).
    """
    p = mesh.vertices[mesh.triangles]
    cot = np.empty((mesh.n_triangles, 3))
    for i in range(3):
        u = p[:, (i + 1) % 3] - p[:, i]
        v = p[:, (i + 2) % 3] - p[:, i]
        cot[:, i] = (u * v).sum(axis=1) / (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])

    t = mesh.triangles
    keys = np.concatenate([_edge_keys(t[:, (i + 1) % 3], t[:, (i + 2) % 3], mesh.n_vertices) for i in range(3)])
    weights = np.concatenate([cot[:, i] for i in range(3)])
    unique_keys, inverse = np.unique(keys, return_inverse=True)
    sums = np.bincount(inverse.ravel(), weights=weights, minlength=len(unique_keys))
    return bool(np.all(sums >= -tol))


def _barycentric(points: np.ndarray, tri_points: np.ndarray, x: np.ndarray) -> np.ndarray:
    a, b, c = tri_points[..., 0, :], tri_points[..., 1, :], tri_points[..., 2, :]

    def cross(u, v):
        return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]

    total = cross(b - a, c - a)
    return np.stack([cross(b - x, c - x), cross(c - x, a - x), cross(a - x, b - x)], axis=-1) / total[..., None]


def locate(mesh: Mesh, points: np.ndarray, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Containing triangle and barycentric coordinates by walking search"""

    points = np.atleast_2d(np.asarray(points, dtype=float))
    tree = cKDTree(mesh.vertices)
    _, nearest = tree.query(points)
    neighbors = mesh.triangle_neighbors

    found = np.empty(len(points), dtype=np.int64)
    bary = np.empty((len(points), 3))
    for k, x in enumerate(points):
        t = int(mesh.vertex_triangle[nearest[k]])
        for _ in range(mesh.n_triangles):
            coords = _barycentric(mesh.vertices, mesh.vertices[mesh.triangles[t]], x)
            j = int(np.argmin(coords))
            if coords[j] >= -tol:
                break
            t = int(neighbors[t, j])
            if t < 0:
                break
        else:
            t = -1

        if t < 0 or _barycentric(mesh.vertices, mesh.vertices[mesh.triangles[t]], x).min() < -tol:
            coords_all = _barycentric(mesh.vertices, mesh.vertices[mesh.triangles], x)
            inside = np.flatnonzero(coords_all.min(axis=1) >= -tol)
            if len(inside) == 0:
                raise ParameterError("Point lies outside the mesh", point=x.tolist())
            t = int(inside[0])
            coords = coords_all[t]
        found[k] = t
        bary[k] = coords
    return found, bary


def interpolate(mesh: Mesh, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """P1 interpolation of nodal values at arbitrary points of the mesh"""
    triangles, bary = locate(mesh, points)
    return (np.asarray(values)[mesh.triangles[triangles]] * bary).sum(axis=1)


def transform_mesh(mesh: Mesh, factor: float = 1.0, angle: float = 0.0, shift=(0.0, 0.0)) -> Mesh:
    """x -> factor * R(angle) x + shift; boundary masses scale like factor**d"""

    if factor <= 0:
        raise ParameterError("Scale factor must be positive", factor=factor)
    rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    shift = np.asarray(shift, dtype=float)

    def move(xy):
        return factor * xy @ rotation.T + shift

    domain = None
    masses = mesh.boundary_masses * factor
    if mesh.domain is not None:

        def move_boundary(b: MeasuredBoundary) -> MeasuredBoundary:
            return MeasuredBoundary(Polygon(move(b.polygon.vertices)), b.segment_masses * factor**b.d, b.d, b.measure)

        d = mesh.domain
        domain = make_domain(d.kind, move_boundary(d.gamma), move_boundary(d.s) if d.s is not None else None, d.label)
        scales = np.where(mesh.boundary_tags == VertexTag.GAMMA, factor**d.gamma.d, factor ** (d.s.d if d.s else 1.0))
        masses = mesh.boundary_masses * scales

    return Mesh(
        vertices=move(mesh.vertices),
        triangles=mesh.triangles,
        vertex_tags=mesh.vertex_tags,
        vertex_edges=mesh.vertex_edges,
        vertex_params=mesh.vertex_params,
        boundary_edges=mesh.boundary_edges,
        boundary_tags=mesh.boundary_tags,
        boundary_polygon_edges=mesh.boundary_polygon_edges,
        boundary_params=mesh.boundary_params,
        boundary_masses=masses,
        domain=domain,
    )


def scale_mesh(mesh: Mesh, factor: float) -> Mesh:
    return transform_mesh(mesh, factor=factor)
