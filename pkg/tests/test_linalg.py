import numpy as np
import pytest
from scipy import sparse

from steklov_lab.errors import EigensolverError, MatrixError, ParameterError, SolverError
from steklov_lab.services.linalg import (
    SymmetricCSR,
    _round_robin,
    cholesky_lower,
    factorize,
    generalized_eigh,
    jacobi_eigh,
    pcg,
    solve_spd,
    sparse_solver,
)


def _spd(rng, n: int) -> np.ndarray:
    B = rng.standard_normal((n, n))
    return B @ B.T + n * np.eye(n)


def _path_laplacian(n: int) -> sparse.csr_matrix:
    main = np.full(n, 2.0)
    main[[0, -1]] = 1.0
    return sparse.diags([-np.ones(n - 1), main, -np.ones(n - 1)], [-1, 0, 1], format="csr")


def test_from_triplets_sums_duplicates():
    matrix = SymmetricCSR.from_triplets([0, 0, 1, 1, 0], [0, 1, 0, 1, 0], [1.0, 2.0, 2.0, 3.0, 4.0], 2)
    assert np.array_equal(matrix.to_dense(), [[5.0, 2.0], [2.0, 3.0]])
    assert matrix.dimension == 2
    assert np.array_equal(matrix.diagonal(), [5.0, 3.0])


def test_from_matrix_rejects_asymmetric():
    with pytest.raises(MatrixError):
        SymmetricCSR.from_matrix(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_symmetric_csr_algebra(rng):
    dense = _spd(rng, 6)
    matrix = SymmetricCSR.from_matrix(dense)
    x = rng.standard_normal(6)
    assert np.allclose(matrix @ x, dense @ x)
    assert np.allclose((matrix + matrix).to_dense(), 2.0 * dense)
    assert np.allclose((matrix * 3.0).to_dense(), 3.0 * dense)
    rows = np.array([1, 3, 4])
    assert np.allclose(matrix.submatrix(rows).to_dense(), dense[np.ix_(rows, rows)])
    assert np.allclose(matrix.block(rows, np.array([0, 2])).toarray(), dense[np.ix_(rows, [0, 2])])


def test_pcg_random_spd(rng):
    A = _spd(rng, 10)
    b = rng.standard_normal(10)
    result = pcg(A, b)
    assert np.linalg.norm(A @ result.x - b) / np.linalg.norm(b) <= 1e-10
    assert result.residuals[-1] <= 1e-12
    assert result.iterations <= 200


def test_pcg_zero_right_hand_side(rng):
    result = pcg(_spd(rng, 5), np.zeros(5))
    assert np.array_equal(result.x, np.zeros(5))
    assert result.iterations == 0


def test_pcg_rejects_nonpositive_diagonal():
    with pytest.raises(MatrixError):
        pcg(np.array([[0.0, 1.0], [1.0, 2.0]]), np.ones(2))


def test_pcg_reports_residual_history(rng):
    A = _spd(rng, 10)
    with pytest.raises(SolverError) as excinfo:
        pcg(A, rng.standard_normal(10), max_iter=1)
    assert len(excinfo.value.residuals) == 2
    assert excinfo.value.residuals[-1] > 1e-12


def test_pcg_on_constant_kernel():
    L = _path_laplacian(20)
    b = np.sin(np.arange(20.0))
    b -= b.mean()
    x = solve_spd(L, b, deflate_constants=True)
    assert np.allclose(L @ x, b, atol=1e-10)
    assert abs(x.mean()) <= 1e-10


@pytest.mark.parametrize("method", ["direct", "cg"])
def test_sparse_solver_agrees(rng, method):
    A = SymmetricCSR.from_matrix(_spd(rng, 8))
    B = rng.standard_normal((8, 3))
    X = sparse_solver(A, method)(B)
    assert np.allclose(A.to_dense() @ X, B, atol=1e-10)


def test_sparse_solver_unknown_method(rng):
    with pytest.raises(ParameterError):
        sparse_solver(_spd(rng, 3), "multigrid")


def test_factorize_matches_dense_solve(rng):
    A = _spd(rng, 12)
    b = rng.standard_normal(12)
    assert np.allclose(factorize(sparse.csr_matrix(A))(b), np.linalg.solve(A, b))


@pytest.mark.parametrize("n", [2, 5, 6, 9])
def test_round_robin_covers_every_pair_once(n):
    seen = []
    for p, q in _round_robin(n):
        assert len(set(p) | set(q)) == 2 * len(p)
        seen += list(zip(p.tolist(), q.tolist()))
    assert sorted(seen) == [(i, j) for i in range(n) for j in range(i + 1, n)]


@pytest.mark.parametrize("n", [1, 7, 12])
def test_jacobi_matches_lapack(rng, n):
    B = rng.standard_normal((n, n))
    A = B + B.T
    w, V = jacobi_eigh(A)
    assert np.allclose(w, np.linalg.eigvalsh(A), atol=1e-10 * max(1.0, np.abs(A).max()))
    assert np.allclose(V.T @ V, np.eye(n), atol=1e-12)
    assert np.allclose(A @ V, V * w, atol=1e-9)


def test_jacobi_sweep_budget(rng):
    B = rng.standard_normal((6, 6))
    with pytest.raises(EigensolverError):
        jacobi_eigh(B + B.T, max_sweeps=0)


@pytest.mark.parametrize("n", [3, 8, 12, 25, 40])
def test_jacobi_residuals_over_many_seeds(n):
    for seed in range(20):
        B = np.random.default_rng(seed).standard_normal((n, n))
        A = B + B.T
        w, V = jacobi_eigh(A)
        scale = np.linalg.norm(A)
        assert np.abs(A @ V - V * w).max() <= 1e-12 * scale
        assert np.abs(V.T @ V - np.eye(n)).max() <= 1e-12


def test_jacobi_rotates_small_off_diagonal_entries():
    A = np.diag(np.arange(10.0, 130.0, 10.0))
    A[np.triu_indices(12, 1)] = 1e-8
    A = np.triu(A) + np.triu(A, 1).T
    w, V = jacobi_eigh(A)
    assert np.abs(A @ V - V * w).max() <= 1e-13 * np.linalg.norm(A)
    assert np.allclose(w, np.linalg.eigvalsh(A), rtol=0.0, atol=1e-12)


@pytest.mark.parametrize("method", ["jacobi", "lapack"])
def test_generalized_eigh(rng, method):
    A = rng.standard_normal((8, 8))
    A = A + A.T
    M = _spd(rng, 8)
    w, V = generalized_eigh(A, M, method)
    assert np.all(np.diff(w) >= 0)
    assert np.allclose(V.T @ M @ V, np.eye(8), atol=1e-10)
    assert np.allclose(A @ V, M @ V * w, atol=1e-8)


def test_generalized_eigh_unknown_method(rng):
    with pytest.raises(ParameterError):
        generalized_eigh(np.eye(3), np.eye(3), "arnoldi")


def test_cholesky_rejects_indefinite():
    with pytest.raises(MatrixError):
        cholesky_lower(np.array([[1.0, 2.0], [2.0, 1.0]]))
