"""Discrete Dirichlet-to-Neumann operators on Gamma and their spectra.

The DtN matrix is the Schur complement of the stiffness matrix onto the
Gamma dofs. All operator statements (spectrum, resolvent, distances) are
taken in the geometry of the boundary mass matrix M, so "A V = mu M V"
and "(lam M + A) phi = M psi".
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
import scipy.linalg
import structlog

from ..config import settings
from ..errors import EigensolverError, MatrixError, NumericalQualityError, ParameterError, SingularityError
from .fem import (
    BoundaryData,
    BoundaryMassMatrix,
    assemble_mass,
    assemble_stiffness,
    free_dofs,
    sample_boundary_data,
)
from .geometry import DomainKind
from .linalg import SymmetricCSR, cholesky_lower, factorize, generalized_eigh, solve_spd
from .mesh import Mesh, VertexTag

logger = structlog.get_logger()

# bound on ||A v - mu M v|| / (1 + |mu|) for every returned pair
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class DtnMatrix:
    matrix: np.ndarray
    gamma_dofs: np.ndarray
    gamma_points: Optional[np.ndarray] = None
    domain_kind: DomainKind = DomainKind.INTERIOR
    outer: str = "dirichlet"
    asymmetry: float = 0.0
    meta: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_array(
        cls, matrix: np.ndarray, kind: DomainKind = DomainKind.INTERIOR, gamma_dofs: Optional[np.ndarray] = None
    ) -> "DtnMatrix":
        matrix = np.array(matrix, dtype=float)
        dofs = np.arange(len(matrix)) if gamma_dofs is None else np.asarray(gamma_dofs)
        return cls(matrix, dofs, domain_kind=DomainKind(kind))

    @property
    def size(self) -> int:
        return len(self.gamma_dofs)

    @property
    def is_definite(self) -> bool:
        """Truncated with Dirichlet data on S: the constants are not in the kernel"""
        return self.domain_kind is DomainKind.TRUNCATED and self.outer == "dirichlet"


def schur_dtn(
    mesh: Mesh,
    outer: str = "dirichlet",
    stiffness: Optional[SymmetricCSR] = None,
    method: Optional[str] = None,
    threads: Optional[int] = None,
) -> DtnMatrix:
    """A = K_GG - K_GI K_II^-1 K_IG, with the S dofs eliminated first (outer="dirichlet")"""

    K = assemble_stiffness(mesh) if stiffness is None else stiffness
    method = method or settings.linear_solver
    threads = threads or settings.threads

    gamma = mesh.boundary_dofs(VertexTag.GAMMA)
    if len(gamma) == 0:
        raise ParameterError("Mesh has no Gamma vertices")
    free = free_dofs(mesh, outer)
    interior = np.setdiff1d(free, gamma, assume_unique=True)

    A = K.block(gamma, gamma).toarray()
    if len(interior):
        K_ig = K.block(interior, gamma).toarray()
        K_ii = K.submatrix(interior)
        if method == "direct":
            X = factorize(K_ii)(K_ig)
        elif method == "cg":
            X = np.empty_like(K_ig)
            operator = K_ii.full

            def solve_column(j: int):
                X[:, j] = solve_spd(operator, K_ig[:, j])

            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(solve_column, range(len(gamma))))
        else:
            raise ParameterError("Unknown linear solver", method=method)
        A -= K_ig.T @ X

    scale = float(np.abs(A).max())
    asymmetry = float(np.abs(A - A.T).max()) / scale if scale > 0 else 0.0
    if asymmetry > settings.symmetry_tol:
        raise NumericalQualityError("DtN matrix asymmetry too large", asymmetry=asymmetry, tol=settings.symmetry_tol)
    A = 0.5 * (A + A.T)

    kind = DomainKind.TRUNCATED if mesh.is_truncated else DomainKind.INTERIOR
    meta = {"n_interior": int(len(interior)), "solver": method}
    if mesh.domain is not None:
        meta["label"] = mesh.domain.label
    logger.info("DtN matrix assembled", kind=kind.value, outer=outer, n_gamma=len(gamma), asymmetry=asymmetry)
    return DtnMatrix(A, gamma, mesh.vertices[gamma], kind, outer, asymmetry, meta)


@dataclass(frozen=True, eq=False)
class SteklovSpectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    complete: bool = True

    @property
    def size(self) -> int:
        return len(self.eigenvalues)


def _check_pair(dtn: DtnMatrix, M: BoundaryMassMatrix):
    if dtn.matrix.shape != (M.size, M.size):
        raise ParameterError("DtN and mass matrices live on different dof sets", n_dtn=dtn.size, n_mass=M.size)


def _canonical_order(eigenvalues: np.ndarray, vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sign-normalize columns, then order ties by the lexicographic order of their vectors"""

    vectors = vectors.copy()
    for k in range(vectors.shape[1]):
        column = vectors[:, k]
        significant = np.flatnonzero(np.abs(column) > 1e-8 * np.abs(column).max())
        if len(significant) and column[significant[0]] < 0:
            vectors[:, k] = -column

    order = np.arange(len(eigenvalues))
    start = 0
    while start < len(eigenvalues):
        stop = start + 1
        while stop < len(eigenvalues) and eigenvalues[stop] - eigenvalues[start] <= 1e-10 * max(
            1.0, abs(eigenvalues[start])
        ):
            stop += 1
        if stop - start > 1:
            cluster = np.arange(start, stop)
            keys = np.round(vectors[:, cluster], 10)[::-1]
            order[start:stop] = cluster[np.lexsort(keys)]
        start = stop
    return eigenvalues[order], vectors[:, order]


def _eigenpairs(dtn: DtnMatrix, M: BoundaryMassMatrix, method: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    eigenvalues, vectors = generalized_eigh(dtn.matrix, M.dense, method)
    eigenvalues, vectors = _canonical_order(eigenvalues, vectors)
    residuals = np.linalg.norm(dtn.matrix @ vectors - (M.dense @ vectors) * eigenvalues, axis=0)
    return eigenvalues, vectors, residuals


def steklov_spectrum(
    dtn: DtnMatrix,
    M: BoundaryMassMatrix,
    k_max: Optional[int] = None,
    method: Optional[str] = None,
) -> SteklovSpectrum:
    """Generalized eigenpairs A V = M V diag(mu), ascending, V^T M V = I.

    Every pair satisfies ||A v - mu M v|| <= RESIDUAL_TOL (1 + |mu|). A Jacobi
    result that misses the bound is recomputed with LAPACK; a miss there raises.
    """

    _check_pair(dtn, M)
    if k_max is not None and k_max < 1:
        raise ParameterError("k_max must be positive", k_max=k_max)

    method = method or settings.eigensolver
    eigenvalues, vectors, residuals = _eigenpairs(dtn, M, method)
    worst = float(np.max(residuals / (1.0 + np.abs(eigenvalues))))
    if worst > RESIDUAL_TOL and method == "jacobi":
        logger.warning("Jacobi eigenpairs above residual bound, retrying with LAPACK", worst_relative_residual=worst)
        eigenvalues, vectors, residuals = _eigenpairs(dtn, M, "lapack")
        worst = float(np.max(residuals / (1.0 + np.abs(eigenvalues))))
    if worst > RESIDUAL_TOL:
        raise EigensolverError(
            "Eigenpair residual above bound", worst_relative_residual=worst, bound=RESIDUAL_TOL, method=method
        )

    n = len(eigenvalues)
    keep = n if k_max is None else min(k_max, n)
    eigenvalues, vectors, residuals = eigenvalues[:keep], vectors[:, :keep], residuals[:keep]
    logger.info("Steklov spectrum computed", n_gamma=n, n_pairs=keep, mu0=float(eigenvalues[0]))
    return SteklovSpectrum(eigenvalues, vectors, residuals, complete=keep == n)


def resolvent_apply(dtn: DtnMatrix, M: BoundaryMassMatrix, lam: float, psi: BoundaryData) -> np.ndarray:
    """phi = (lam M + A)^-1 M psi, the Gamma trace of the Robin solution"""

    _check_pair(dtn, M)
    if not np.isfinite(lam) or lam < 0:
        raise ParameterError("lambda must be finite and non-negative", lam=lam)
    if lam == 0 and not dtn.is_definite:
        raise SingularityError("lambda = 0 on an operator with the constants in its kernel", kind=dtn.domain_kind.value)

    points = dtn.gamma_points if dtn.gamma_points is not None else np.zeros((dtn.size, 2))
    psi = sample_boundary_data(points, psi)
    try:
        factor = scipy.linalg.cho_factor(lam * M.dense + dtn.matrix, lower=True)
    except np.linalg.LinAlgError as e:
        raise MatrixError("Resolvent matrix is not positive definite", lam=lam) from e
    return scipy.linalg.cho_solve(factor, M.dense @ psi)


def _inverse(dtn: DtnMatrix, M: BoundaryMassMatrix, lam: Optional[float]) -> np.ndarray:
    if lam is not None:
        if lam < 0 or (lam == 0 and not dtn.is_definite):
            raise ParameterError("Resolvent needs lambda > 0 unless the operator is definite", lam=lam)
        return np.linalg.inv(lam * M.dense + dtn.matrix)

    if dtn.is_definite:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(dtn.matrix, lower=True), np.eye(dtn.size))

    # pseudo-inverse on the M-orthogonal complement of the kernel
    spectrum = steklov_spectrum(dtn, M)
    mu, V = spectrum.eigenvalues, spectrum.eigenvectors
    keep = mu > 1e-9 * max(1.0, float(mu.max()))
    return (V[:, keep] / mu[keep]) @ V[:, keep].T


def operator_distance(
    a1: DtnMatrix,
    a2: DtnMatrix,
    M: BoundaryMassMatrix,
    lam: Optional[float] = None,
) -> float:
    """||A1^-1 - A2^-1|| in L2(Gamma, M), or of the resolvents at lam when given.

    Computed as max |eig(L^T X L)| for the symmetric X, M = L L^T.
    """

    _check_pair(a1, M)
    _check_pair(a2, M)
    if a1.gamma_points is not None and a2.gamma_points is not None:
        if not np.allclose(a1.gamma_points, a2.gamma_points, rtol=0.0, atol=1e-12):
            raise ParameterError("Operators are discretized on different Gamma dofs")

    X = _inverse(a1, M, lam) - _inverse(a2, M, lam)
    L = cholesky_lower(M.dense)
    Y = L.T @ X @ L
    return float(np.abs(np.linalg.eigvalsh(0.5 * (Y + Y.T))).max())


def poincare_constant(
    mesh: Mesh,
    stiffness: Optional[SymmetricCSR] = None,
    tol: float = 1e-12,
    max_iter: int = 1000,
) -> float:
    """C = 1 / sqrt(lambda_min) for K_ff v = lambda M_Omega v, by inverse power iteration"""

    if not mesh.is_truncated:
        raise ParameterError("Poincare constant needs the Dirichlet boundary S of a truncated mesh")

    K = assemble_stiffness(mesh) if stiffness is None else stiffness
    free = free_dofs(mesh, "dirichlet")
    K_ff = K.submatrix(free).full
    M_ff = assemble_mass(mesh).submatrix(free).full
    solve = factorize(K_ff)

    x = np.ones(len(free))
    x /= np.sqrt(x @ (M_ff @ x))
    estimate = float(x @ (K_ff @ x))
    for iteration in range(1, max_iter + 1):
        y = solve(M_ff @ x)
        y /= np.sqrt(y @ (M_ff @ y))
        updated = float(y @ (K_ff @ y))
        x = y
        if abs(updated - estimate) <= tol * updated:
            logger.debug("Inverse power converged", iterations=iteration, lambda_min=updated)
            return 1.0 / np.sqrt(updated)
        estimate = updated

    raise EigensolverError("Inverse power iteration did not converge", iterations=max_iter, lambda_min=estimate)


def disk_steklov_oracle(radius: float, k: int) -> np.ndarray:
    """mu = 0, 1, 1, 2, 2, ... divided by the radius"""
    return np.ceil(np.arange(k) / 2.0) / radius


def annulus_steklov_oracle(radius: float, outer_radius: float, k: int) -> np.ndarray:
    """DtN eigenvalues on r = R for harmonic functions vanishing on r = L"""
    if outer_radius <= radius:
        raise ParameterError("Outer radius must exceed the inner radius", R=radius, L=outer_radius)
    m = np.ceil(np.arange(k) / 2.0)
    q = (radius / outer_radius) ** (2.0 * m)
    with np.errstate(divide="ignore", invalid="ignore"):
        values = (m / radius) * (1.0 + q) / (1.0 - q)
    values[m == 0] = 1.0 / (radius * np.log(outer_radius / radius))
    return values


def annulus_flux_oracle(radius: float, outer_radius: float, lam: float) -> float:
    """Total flux through r = R for psi = lam on the annulus with u = 0 on r = L"""
    return 2.0 * np.pi * radius * lam / (1.0 + lam * radius * np.log(outer_radius / radius))


def annulus_robin_oracle(radius: float, outer_radius: float, lam: float, r, psi: float = 1.0):
    """Radial Robin solution c ln(L / r) with lam u + du/dnu = psi on r = R"""
    c = psi / (lam * np.log(outer_radius / radius) + 1.0 / radius)
    return c * np.log(outer_radius / np.asarray(r, dtype=float))


def spectrum_gap(values: np.ndarray, reference: np.ndarray) -> float:
    """Largest relative pairwise difference"""
    values, reference = np.asarray(values, dtype=float), np.asarray(reference, dtype=float)
    if values.shape != reference.shape:
        raise ParameterError("Spectra of different lengths", n_values=values.size, n_reference=reference.size)
    return float(np.max(np.abs(values - reference) / np.abs(reference)))
