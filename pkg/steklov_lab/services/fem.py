"""P1 finite elements: stiffness and mass assembly, Robin solves, discrete Green identity."""

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np
import structlog
from scipy import sparse

from ..errors import AssemblyError, ParameterError, PreconditionError, SingularityError
from .linalg import SymmetricCSR, sparse_solver
from .mesh import Mesh, VertexTag, Which, as_tag

logger = structlog.get_logger()

BoundaryData = Union[float, np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]]

OUTER_CONDITIONS = ("dirichlet", "neumann")


def _local_gradients(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Edge vectors opposite each vertex and the triangle areas"""

    p = mesh.vertices[mesh.triangles]
    opposite = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    areas = mesh.signed_areas

    h_sq = (opposite**2).sum(axis=-1).max(axis=1)
    bad = np.flatnonzero(areas < 1e-14 * h_sq)
    if len(bad):
        raise AssemblyError(
            "Degenerate or inverted triangle",
            triangle=int(bad[0]),
            area=float(areas[bad[0]]),
            n_bad=len(bad),
        )
    return opposite, areas


def _scatter(mesh: Mesh, local: np.ndarray) -> SymmetricCSR:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    return SymmetricCSR.from_triplets(rows, cols, local.ravel(), mesh.n_vertices)


def assemble_stiffness(mesh: Mesh) -> SymmetricCSR:
    """K_ij = integral of grad(phi_i) . grad(phi_j); locally e_i . e_j / (4 area)"""
    edges, areas = _local_gradients(mesh)
    local = np.einsum("tik,tjk->tij", edges, edges) / (4.0 * areas[:, None, None])
    return _scatter(mesh, local)


def assemble_mass(mesh: Mesh) -> SymmetricCSR:
    """Consistent domain mass matrix, area/12 * [[2,1,1],[1,2,1],[1,1,2]] per triangle"""
    _, areas = _local_gradients(mesh)
    reference = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _scatter(mesh, areas[:, None, None] * reference)


def is_m_matrix(K: SymmetricCSR, tol: float = 1e-12) -> bool:
    """Every off-diagonal entry is non-positive"""
    lower = sparse.tril(K.lower, k=-1).tocoo()
    if lower.nnz == 0:
        return True
    scale = float(np.abs(K.diagonal()).max())
    return bool(lower.data.max() <= tol * scale)


@dataclass(frozen=True, eq=False)
class BoundaryMassMatrix:
    """Discrete L2 inner product on Gamma (or S) in the boundary's d-measure"""

    dofs: np.ndarray
    matrix: SymmetricCSR
    which: VertexTag = VertexTag.GAMMA

    @classmethod
    def from_array(cls, matrix: np.ndarray, dofs: Optional[np.ndarray] = None) -> "BoundaryMassMatrix":
        matrix = np.asarray(matrix, dtype=float)
        dofs = np.arange(len(matrix)) if dofs is None else np.asarray(dofs)
        return cls(dofs, SymmetricCSR.from_matrix(matrix))

    @property
    def size(self) -> int:
        return len(self.dofs)

    @cached_property
    def dense(self) -> np.ndarray:
        return self.matrix.to_dense()

    @property
    def total_mass(self) -> float:
        ones = np.ones(self.size)
        return float(ones @ (self.matrix @ ones))

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(u @ (self.matrix @ v))

    def norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(u, u), 0.0)))


def assemble_boundary_mass(mesh: Mesh, which: Which = VertexTag.GAMMA, lumped: bool = False) -> BoundaryMassMatrix:
    """Per boundary edge m_e/6 [[2,1],[1,2]], m_e the edge's share of its segment mass"""

    tag = as_tag(which)
    mask = mesh.boundary_tags == tag
    if not np.any(mask):
        raise ParameterError("Mesh has no boundary edges with this tag", which=tag.name)

    dofs = mesh.boundary_dofs(tag)
    position = np.full(mesh.n_vertices, -1, dtype=np.int64)
    position[dofs] = np.arange(len(dofs))

    edges = mesh.boundary_edges[mask]
    masses = mesh.boundary_masses[mask]
    i, j = position[edges[:, 0]], position[edges[:, 1]]
    n = len(dofs)

    if lumped:
        diagonal = np.bincount(i, weights=masses / 2, minlength=n) + np.bincount(j, weights=masses / 2, minlength=n)
        matrix = SymmetricCSR(sparse.diags(diagonal, format="csr"))
    else:
        rows = np.concatenate([i, j, i, j])
        cols = np.concatenate([i, j, j, i])
        values = np.concatenate([masses / 3, masses / 3, masses / 6, masses / 6])
        matrix = SymmetricCSR.from_triplets(rows, cols, values, n)
    return BoundaryMassMatrix(dofs, matrix, tag)


def apply_dirichlet(K: SymmetricCSR, mesh: Mesh, tag: Which = VertexTag.S) -> tuple[SymmetricCSR, np.ndarray]:
    """Eliminate the rows and columns of `tag` vertices; dof_map[i] is the mesh vertex of free dof i"""

    constrained = mesh.vertex_tags == as_tag(tag)
    if not np.any(constrained):
        return K, np.arange(mesh.n_vertices)
    free = np.flatnonzero(~constrained)
    if len(free) == 0:
        raise ParameterError("No free degrees of freedom left after the Dirichlet condition")
    return K.submatrix(free), free


def sample_boundary_data(points: np.ndarray, data: BoundaryData) -> np.ndarray:
    """Nodal values of boundary data at the given points"""

    n = len(points)
    if callable(data):
        values = np.asarray(data(points[:, 0], points[:, 1]), dtype=float)
        return np.broadcast_to(values, (n,)).copy()
    values = np.asarray(data, dtype=float)
    if values.ndim == 0:
        return np.full(n, float(values))
    if values.shape != (n,):
        raise ParameterError("Boundary data has the wrong length", expected=n, got=values.shape[0])
    return values.copy()


def _check_outer(outer: str):
    if outer not in OUTER_CONDITIONS:
        raise ParameterError("Unknown outer condition", outer=outer)


def free_dofs(mesh: Mesh, outer: str = "dirichlet") -> np.ndarray:
    _check_outer(outer)
    if mesh.is_truncated and outer == "dirichlet":
        return np.flatnonzero(mesh.vertex_tags != VertexTag.S)
    return np.arange(mesh.n_vertices)


def robin_matrix(
    K: SymmetricCSR, M: BoundaryMassMatrix, free: np.ndarray, lam: float
) -> tuple[SymmetricCSR, sparse.csr_matrix]:
    """K_ff + lam R M_Gamma R^T and the injection R of Gamma dofs into the free dofs"""
    n_free, n_gamma = len(free), M.size
    injection = sparse.csr_matrix(
        (np.ones(n_gamma), (np.searchsorted(free, M.dofs), np.arange(n_gamma))), shape=(n_free, n_gamma)
    )
    system = K.block(free, free) + lam * (injection @ M.matrix.full @ injection.T)
    return SymmetricCSR(system), injection


@dataclass(frozen=True, eq=False)
class RobinSolution:
    u: np.ndarray
    lam: float
    psi: np.ndarray
    trace: np.ndarray
    total_flux: float
    free_dofs: np.ndarray


def robin_solve(
    mesh: Mesh,
    lam: float,
    psi: BoundaryData,
    outer: str = "dirichlet",
    stiffness: Optional[SymmetricCSR] = None,
    gamma_mass: Optional[BoundaryMassMatrix] = None,
    method: Optional[str] = None,
) -> RobinSolution:
    """Solve (K_ff + lam R M_Gamma R^T) u = R M_Gamma psi.

    On truncated meshes S carries u = 0 (outer="dirichlet") or a natural
    zero-flux condition (outer="neumann"). `psi` may be a constant, one value
    per Gamma dof, or a function of (x, y) sampled at the Gamma vertices.
    """

    if not np.isfinite(lam) or lam < 0:
        raise ParameterError("lambda must be finite and non-negative", lam=lam)
    free = free_dofs(mesh, outer)
    if lam == 0 and len(free) == mesh.n_vertices:
        raise SingularityError(
            "lambda = 0 without a Dirichlet boundary is the pure Neumann problem; constants span the kernel",
            outer=outer,
            truncated=mesh.is_truncated,
        )

    K = assemble_stiffness(mesh) if stiffness is None else stiffness
    M = assemble_boundary_mass(mesh, VertexTag.GAMMA) if gamma_mass is None else gamma_mass
    psi_nodal = sample_boundary_data(mesh.vertices[M.dofs], psi)

    system, injection = robin_matrix(K, M, free, lam)
    rhs = injection @ (M.matrix @ psi_nodal)
    n_free, n_gamma = len(free), M.size

    u = np.zeros(mesh.n_vertices)
    u[free] = sparse_solver(system, method)(rhs)
    trace = u[M.dofs]
    total_flux = float(np.ones(n_gamma) @ (M.matrix @ (psi_nodal - lam * trace)))

    logger.debug("Robin problem solved", lam=lam, n_free=n_free, total_flux=total_flux)
    return RobinSolution(u, float(lam), psi_nodal, trace, total_flux, free)


def harmonic_extension(mesh: Mesh, values: BoundaryData, stiffness: Optional[SymmetricCSR] = None) -> np.ndarray:
    """Discrete-harmonic u: boundary values kept on Gamma and S, K_II u_I = -K_IB u_B"""

    K = assemble_stiffness(mesh) if stiffness is None else stiffness
    interior = np.flatnonzero(mesh.vertex_tags == VertexTag.INTERIOR)
    boundary = np.flatnonzero(mesh.vertex_tags != VertexTag.INTERIOR)

    u = np.zeros(mesh.n_vertices)
    if callable(values) or np.ndim(values) == 0:
        u[boundary] = sample_boundary_data(mesh.vertices[boundary], values)
    else:
        values = np.asarray(values, dtype=float)
        if values.shape == (mesh.n_vertices,):
            u[boundary] = values[boundary]
        else:
            u[boundary] = sample_boundary_data(mesh.vertices[boundary], values)

    if len(interior):
        rhs = -(K.block(interior, boundary) @ u[boundary])
        u[interior] = sparse_solver(K.submatrix(interior))(rhs)
    return u


def discrete_green_check(
    mesh: Mesh,
    u: np.ndarray,
    v: np.ndarray,
    stiffness: Optional[SymmetricCSR] = None,
    harmonic_tol: float = 1e-8,
) -> float:
    """|v^T K u - (Tr v)^T g| with g = (K u) on the boundary dofs (Gamma and S)"""

    K = assemble_stiffness(mesh) if stiffness is None else stiffness
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    Ku = K @ u

    interior = mesh.vertex_tags == VertexTag.INTERIOR
    defect = float(np.abs(Ku[interior]).max()) if np.any(interior) else 0.0
    scale = float(np.abs(K.diagonal()).max()) * max(float(np.abs(u).max()), 1e-300)
    if defect > harmonic_tol * scale:
        raise PreconditionError("u is not discrete-harmonic", interior_defect=defect, scale=scale)

    g = Ku[~interior]
    return float(abs(v @ Ku - v[~interior] @ g))
