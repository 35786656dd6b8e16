"""Sparse symmetric storage, preconditioned CG and the dense symmetric eigensolvers."""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg
import structlog
from scipy import sparse
from scipy.sparse.linalg import splu

from ..config import settings
from ..errors import EigensolverError, MatrixError, ParameterError, SolverError

logger = structlog.get_logger()

MatrixLike = Union["SymmetricCSR", sparse.spmatrix, np.ndarray]


@dataclass(frozen=True, eq=False)
class SymmetricCSR:
    """Symmetric sparse matrix stored as its lower triangle, diagonal included"""

    lower: sparse.csr_matrix

    def __post_init__(self):
        lower = sparse.csr_matrix(self.lower)
        if lower.shape[0] != lower.shape[1]:
            raise MatrixError("Symmetric matrix must be square", shape=lower.shape)
        lower = sparse.tril(lower, format="csr")
        lower.sum_duplicates()
        lower.sort_indices()
        object.__setattr__(self, "lower", lower)

    @classmethod
    def from_triplets(cls, rows, cols, values, n: int) -> "SymmetricCSR":
        """Build from the entries of the full matrix; entries above the diagonal are dropped"""
        full = sparse.coo_matrix((values, (rows, cols)), shape=(n, n)).tocsr()
        return cls(full)

    @classmethod
    def from_matrix(cls, matrix, tol: float = 1e-12) -> "SymmetricCSR":
        matrix = sparse.csr_matrix(matrix)
        defect = abs(matrix - matrix.T)
        scale = max(float(abs(matrix).max()) if matrix.nnz else 0.0, 1.0)
        if defect.nnz and defect.max() > tol * scale:
            raise MatrixError("Matrix is not symmetric", defect=float(defect.max()))
        return cls(matrix)

    @property
    def dimension(self) -> int:
        return self.lower.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.lower.shape

    @property
    def indptr(self) -> np.ndarray:
        return self.lower.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.lower.indices

    @property
    def data(self) -> np.ndarray:
        return self.lower.data

    @cached_property
    def full(self) -> sparse.csr_matrix:
        strict = sparse.tril(self.lower, k=-1, format="csr")
        full = (self.lower + strict.T).tocsr()
        full.sort_indices()
        return full

    def diagonal(self) -> np.ndarray:
        return self.lower.diagonal()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.full @ x

    def __matmul__(self, x):
        return self.full @ x

    def __add__(self, other: "SymmetricCSR") -> "SymmetricCSR":
        return SymmetricCSR(self.lower + other.lower)

    def __mul__(self, scalar: float) -> "SymmetricCSR":
        return SymmetricCSR(self.lower * scalar)

    __rmul__ = __mul__

    def submatrix(self, rows: np.ndarray) -> "SymmetricCSR":
        """Principal submatrix on the given index set"""
        return SymmetricCSR(self.full[rows][:, rows])

    def block(self, rows: np.ndarray, cols: np.ndarray) -> sparse.csr_matrix:
        return self.full[rows][:, cols]

    def to_dense(self) -> np.ndarray:
        return self.full.toarray()


def _as_operator(matrix: MatrixLike):
    if isinstance(matrix, SymmetricCSR):
        return matrix.full
    if sparse.issparse(matrix):
        return sparse.csr_matrix(matrix)
    return np.asarray(matrix, dtype=float)


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residuals: list[float] = field(default_factory=list)


def pcg(
    matrix: MatrixLike,
    b: np.ndarray,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    x0: Optional[np.ndarray] = None,
    deflate_constants: bool = False,
) -> CGResult:
    """Jacobi-preconditioned conjugate gradients; residuals are relative to ||b||.

    With `deflate_constants` the iteration runs on the complement of the
    constant vector, for semidefinite matrices whose kernel is the constants.
    """

    A = _as_operator(matrix)
    b = np.asarray(b, dtype=float)
    n = len(b)
    tol = settings.cg_tol if tol is None else tol
    max_iter = settings.cg_max_iter_factor * n if max_iter is None else max_iter

    diagonal = np.asarray(A.diagonal(), dtype=float)
    if np.any(diagonal <= 0):
        raise MatrixError("Jacobi preconditioner needs a positive diagonal", min_diagonal=float(diagonal.min()))
    inv_diagonal = 1.0 / diagonal

    def project(v):
        return v - v.mean() if deflate_constants else v

    b = project(b)
    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        return CGResult(np.zeros(n), 0, [0.0])

    x = np.zeros(n) if x0 is None else project(np.array(x0, dtype=float))
    r = project(b - A @ x)
    z = project(inv_diagonal * r)
    p = z.copy()
    rz = float(r @ z)
    residuals = [float(np.linalg.norm(r)) / norm_b]

    for iteration in range(1, max_iter + 1):
        if residuals[-1] <= tol:
            return CGResult(x, iteration - 1, residuals)

        Ap = project(A @ p)
        curvature = float(p @ Ap)
        if curvature <= 0:
            raise MatrixError("Matrix is not positive definite on the Krylov space", iteration=iteration)
        alpha = rz / curvature
        x += alpha * p
        r -= alpha * Ap
        residuals.append(float(np.linalg.norm(r)) / norm_b)
        if residuals[-1] <= tol:
            return CGResult(x, iteration, residuals)

        z = project(inv_diagonal * r)
        rz_next = float(r @ z)
        p = z + (rz_next / rz) * p
        rz = rz_next

    raise SolverError(
        "Conjugate gradients did not converge",
        residuals=residuals,
        iterations=max_iter,
        final_residual=residuals[-1],
        tol=tol,
    )


def solve_spd(
    matrix: MatrixLike,
    b: np.ndarray,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    deflate_constants: bool = False,
) -> np.ndarray:
    result = pcg(matrix, b, tol=tol, max_iter=max_iter, deflate_constants=deflate_constants)
    logger.debug("CG solve", n=len(b), iterations=result.iterations, residual=result.residuals[-1])
    return result.x


def factorize(matrix: MatrixLike) -> Callable[[np.ndarray], np.ndarray]:
    """Sparse LU in symmetric mode; the returned callable accepts one or many right-hand sides"""

    A = sparse.csc_matrix(_as_operator(matrix))
    try:
        lu = splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    except RuntimeError as e:
        raise MatrixError("Sparse factorization failed", reason=str(e)) from e
    return lu.solve


def sparse_solver(matrix: MatrixLike, method: Optional[str] = None) -> Callable[[np.ndarray], np.ndarray]:
    """Solver for a positive definite system, direct or CG per `linear_solver`"""

    method = method or settings.linear_solver
    if method == "direct":
        return factorize(matrix)
    if method == "cg":
        operator = _as_operator(matrix)

        def solve(b: np.ndarray) -> np.ndarray:
            b = np.asarray(b, dtype=float)
            if b.ndim == 1:
                return solve_spd(operator, b)
            return np.column_stack([solve_spd(operator, column) for column in b.T])

        return solve
    raise ParameterError("Unknown linear solver", method=method)


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings covering every (p, q) once, each round a set of disjoint pairs"""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        if pairs:
            p, q = np.array(pairs).T
            rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(
    matrix: np.ndarray,
    tol: Optional[float] = None,
    max_sweeps: Optional[int] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition of a dense symmetric matrix.

    Every round of a sweep rotates a set of disjoint index pairs at once. Sweeps
    until the off-diagonal Frobenius norm drops below tol * ||A||_F, then once more.
    Eigenvalues are returned ascending with orthonormal eigenvector columns.
    """

    tol = settings.jacobi_tol if tol is None else tol
    max_sweeps = settings.jacobi_max_sweeps if max_sweeps is None else max_sweeps

    B = np.array(matrix, dtype=float)
    n = B.shape[0]
    if B.shape != (n, n):
        raise MatrixError("Eigenproblem matrix must be square", shape=B.shape)
    V = np.eye(n)
    if n == 1:
        return B.diagonal().copy(), V

    scale = float(np.linalg.norm(B))
    if scale == 0.0:
        return np.zeros(n), V
    rounds = _round_robin(n)

    def off_norm():
        return float(np.sqrt(2.0) * np.linalg.norm(np.triu(B, 1)))

    def sweep():
        for p, q in rounds:
            apq = B[p, q]
            active = np.abs(apq) > 1e-300
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (B[q, q] - B[p, p]) / (2.0 * apq)
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c

            Bp, Bq = B[:, p].copy(), B[:, q].copy()
            B[:, p] = Bp * c - Bq * s
            B[:, q] = Bp * s + Bq * c
            Bp, Bq = B[p, :].copy(), B[q, :].copy()
            B[p, :] = c[:, None] * Bp - s[:, None] * Bq
            B[q, :] = s[:, None] * Bp + c[:, None] * Bq
            B[p, q] = 0.0
            B[q, p] = 0.0

            Vp, Vq = V[:, p].copy(), V[:, q].copy()
            V[:, p] = Vp * c - Vq * s
            V[:, q] = Vp * s + Vq * c

    sweeps = 0
    off = off_norm()
    while off > tol * scale:
        if sweeps == max_sweeps:
            raise EigensolverError(
                "Jacobi iteration did not converge", sweeps=sweeps, off_diagonal=off / scale, tol=tol
            )
        sweep()
        sweeps += 1
        off = off_norm()

    # polishing sweep past the threshold
    if off > 0.0:
        sweep()
        off = off_norm()

    logger.debug("Jacobi converged", n=n, sweeps=sweeps, off_diagonal=off / scale)
    eigenvalues = np.diagonal(B).copy()
    order = np.argsort(eigenvalues, kind="stable")
    return eigenvalues[order], V[:, order]


def cholesky_lower(matrix: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.cholesky(np.asarray(matrix, dtype=float), lower=True)
    except np.linalg.LinAlgError as e:
        raise MatrixError("Cholesky factorization failed, matrix is not positive definite", reason=str(e)) from e


def generalized_eigh(
    A: np.ndarray,
    M: np.ndarray,
    method: Optional[str] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve A V = M V diag(w) through M = L L^T; columns of V are M-orthonormal"""

    method = method or settings.eigensolver
    L = cholesky_lower(M)
    half = scipy.linalg.solve_triangular(L, np.asarray(A, dtype=float), lower=True)
    reduced = scipy.linalg.solve_triangular(L, half.T, lower=True).T
    reduced = 0.5 * (reduced + reduced.T)

    if method == "jacobi":
        w, U = jacobi_eigh(reduced)
    elif method == "lapack":
        w, U = scipy.linalg.eigh(reduced)
    else:
        raise ParameterError("Unknown eigensolver", method=method)

    V = scipy.linalg.solve_triangular(L.T, U, lower=False)
    return w, V
