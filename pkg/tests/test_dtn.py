import numpy as np
import pytest
import scipy.linalg

from steklov_lab.errors import EigensolverError, ParameterError, SingularityError
from steklov_lab.services.dtn import (
    DtnMatrix,
    annulus_flux_oracle,
    annulus_robin_oracle,
    annulus_steklov_oracle,
    disk_steklov_oracle,
    operator_distance,
    poincare_constant,
    resolvent_apply,
    schur_dtn,
    spectrum_gap,
    steklov_spectrum,
)
from steklov_lab.services.fem import BoundaryMassMatrix, assemble_boundary_mass, robin_solve
from steklov_lab.services.linalg import generalized_eigh
from steklov_lab.services.mesh import scale_mesh, transform_mesh


@pytest.fixture(scope="module")
def disk_pair(disk_mesh):
    return schur_dtn(disk_mesh), assemble_boundary_mass(disk_mesh)


@pytest.fixture(scope="module")
def annulus_pair(annulus_mesh):
    return schur_dtn(annulus_mesh), assemble_boundary_mass(annulus_mesh)


def test_disk_dtn_is_symmetric_semidefinite(disk_pair):
    dtn, _ = disk_pair
    assert not dtn.is_definite
    assert np.array_equal(dtn.matrix, dtn.matrix.T)
    assert dtn.asymmetry <= 1e-10
    assert np.allclose(dtn.matrix @ np.ones(dtn.size), 0.0, atol=1e-10)
    assert np.linalg.eigvalsh(dtn.matrix).min() >= -1e-10


def test_annulus_dtn_is_definite(annulus_pair):
    dtn, _ = annulus_pair
    assert dtn.is_definite
    assert dtn.meta["n_interior"] > 0
    assert np.linalg.eigvalsh(dtn.matrix).min() > 0


def test_dtn_solvers_agree(annulus_mesh, annulus_pair):
    dtn, _ = annulus_pair
    threaded = schur_dtn(annulus_mesh, method="cg", threads=2)
    assert np.allclose(threaded.matrix, dtn.matrix, atol=1e-8)


def test_dtn_unknown_solver(disk_mesh):
    with pytest.raises(ParameterError):
        schur_dtn(disk_mesh, method="gmres")


def test_disk_spectrum_against_oracle(disk_pair):
    dtn, M = disk_pair
    spectrum = steklov_spectrum(dtn, M)
    assert spectrum.complete
    assert abs(spectrum.eigenvalues[0]) <= 1e-9
    assert np.all(np.diff(spectrum.eigenvalues) >= -1e-12)
    assert spectrum_gap(spectrum.eigenvalues[1:5], disk_steklov_oracle(1.0, 5)[1:]) <= 0.05

    V = spectrum.eigenvectors
    assert np.allclose(V.T @ M.dense @ V, np.eye(dtn.size), atol=1e-10)
    assert np.all(spectrum.residuals <= 1e-8 * (1.0 + np.abs(spectrum.eigenvalues)))


def test_annulus_mu0_against_oracle(annulus_pair):
    dtn, M = annulus_pair
    spectrum = steklov_spectrum(dtn, M, k_max=3)
    assert not spectrum.complete
    assert spectrum.size == 3
    assert spectrum.eigenvalues[0] > 0
    assert spectrum.eigenvalues[0] == pytest.approx(1.0 / np.log(2.0), rel=0.05)


@pytest.mark.parametrize("method", ["jacobi", "lapack"])
def test_eigensolvers_agree(disk_pair, method):
    dtn, M = disk_pair
    reference = scipy.linalg.eigh(dtn.matrix, M.dense, eigvals_only=True)
    assert np.allclose(steklov_spectrum(dtn, M, method=method).eigenvalues, reference, atol=1e-9)


def test_spectrum_is_deterministic(disk_mesh, disk_pair):
    dtn, M = disk_pair
    first = steklov_spectrum(dtn, M)
    second = steklov_spectrum(schur_dtn(disk_mesh), assemble_boundary_mass(disk_mesh))
    assert np.array_equal(first.eigenvalues, second.eigenvalues)
    assert np.array_equal(first.eigenvectors, second.eigenvectors)


def test_spectrum_parameter_errors(disk_pair):
    dtn, M = disk_pair
    with pytest.raises(ParameterError):
        steklov_spectrum(dtn, M, k_max=0)
    with pytest.raises(ParameterError):
        steklov_spectrum(dtn, BoundaryMassMatrix.from_array(np.eye(3)))


def test_spectrum_from_arrays():
    dtn = DtnMatrix.from_array([[2.0, -1.0], [-1.0, 2.0]])
    spectrum = steklov_spectrum(dtn, BoundaryMassMatrix.from_array(np.eye(2)))
    assert np.allclose(spectrum.eigenvalues, [1.0, 3.0])


def test_spectrum_is_rotation_invariant(disk_mesh, disk_pair):
    dtn, M = disk_pair
    moved = transform_mesh(disk_mesh, angle=0.7, shift=(3.0, 1.0))
    rotated = steklov_spectrum(schur_dtn(moved), assemble_boundary_mass(moved)).eigenvalues
    assert np.allclose(rotated, steklov_spectrum(dtn, M).eigenvalues, atol=1e-9)


def test_spectrum_scales_inversely_with_size(disk_mesh, disk_pair):
    dtn, M = disk_pair
    big = scale_mesh(disk_mesh, 2.0)
    mu_big = steklov_spectrum(schur_dtn(big), assemble_boundary_mass(big)).eigenvalues
    mu = steklov_spectrum(dtn, M).eigenvalues
    assert np.allclose(mu_big[1:], mu[1:] / 2.0, rtol=1e-9)


def test_resolvent_matches_robin_trace(annulus_mesh, annulus_pair):
    dtn, M = annulus_pair
    psi = lambda x, y: 1.0 + x * y  # noqa: E731
    for lam in [0.0, 0.5, 3.0]:
        trace = robin_solve(annulus_mesh, lam, psi, gamma_mass=M).trace
        assert np.allclose(resolvent_apply(dtn, M, lam, psi), trace, atol=1e-10)


def test_resolvent_singular_on_interior(disk_pair):
    dtn, M = disk_pair
    with pytest.raises(SingularityError):
        resolvent_apply(dtn, M, 0.0, 1.0)
    with pytest.raises(ParameterError):
        resolvent_apply(dtn, M, -1.0, 1.0)


def test_resolvent_of_constants_on_interior(disk_pair):
    dtn, M = disk_pair
    assert np.allclose(resolvent_apply(dtn, M, 2.0, 1.0), 0.5, atol=1e-10)


def test_operator_distance(annulus_family):
    interior, near, far = annulus_family
    M = assemble_boundary_mass(near)
    a_near, a_far, a_int = schur_dtn(near), schur_dtn(far), schur_dtn(interior)

    assert operator_distance(a_near, a_near, M) == pytest.approx(0.0, abs=1e-12)
    d = operator_distance(a_near, a_far, M)
    assert d > 0
    assert operator_distance(a_far, a_near, M) == pytest.approx(d, rel=1e-10)

    # inverses on the complement of the constants, resolvents at lam = 1
    assert operator_distance(a_far, a_int, M) > 0
    assert operator_distance(a_far, a_int, M, lam=1.0) < operator_distance(a_near, a_int, M, lam=1.0)
    with pytest.raises(ParameterError):
        operator_distance(a_far, a_int, M, lam=0.0)


def test_operator_distance_needs_common_gamma(annulus_pair):
    dtn, M = annulus_pair
    shifted = DtnMatrix(dtn.matrix, dtn.gamma_dofs, dtn.gamma_points + 0.1, dtn.domain_kind)
    with pytest.raises(ParameterError):
        operator_distance(dtn, shifted, M)
    with pytest.raises(ParameterError):
        operator_distance(dtn, DtnMatrix.from_array(np.eye(dtn.size + 1)), M)


def test_poincare_constant(annulus_family, annulus_mesh):
    _, near, far = annulus_family
    c_near, c_far = poincare_constant(near), poincare_constant(far)
    assert 0 < c_near < c_far
    assert poincare_constant(scale_mesh(annulus_mesh, 2.0)) == pytest.approx(
        2.0 * poincare_constant(annulus_mesh), rel=1e-6
    )


def test_poincare_needs_truncated_mesh(disk_mesh):
    with pytest.raises(ParameterError):
        poincare_constant(disk_mesh)


def test_oracles():
    assert np.allclose(disk_steklov_oracle(2.0, 5), [0.0, 0.5, 0.5, 1.0, 1.0])

    values = annulus_steklov_oracle(1.0, 2.0, 5)
    assert values[0] == pytest.approx(1.0 / np.log(2.0))
    assert values[1] == values[2] == pytest.approx(5.0 / 3.0)
    assert values[3] == pytest.approx(2.0 * 17.0 / 15.0)
    assert np.allclose(annulus_steklov_oracle(1.0, 1e3, 7)[1:], disk_steklov_oracle(1.0, 7)[1:], rtol=1e-5)
    with pytest.raises(ParameterError):
        annulus_steklov_oracle(2.0, 1.0, 3)

    assert annulus_flux_oracle(1.0, 2.0, 1.0) == pytest.approx(2.0 * np.pi / (1.0 + np.log(2.0)))
    u = annulus_robin_oracle(1.0, 2.0, 1.0, [1.0, 2.0])
    assert u[0] == pytest.approx(np.log(2.0) / (np.log(2.0) + 1.0))
    assert u[1] == 0.0


def test_spectrum_gap():
    assert spectrum_gap([1.0, 2.2], [1.0, 2.0]) == pytest.approx(0.1)
    with pytest.raises(ParameterError):
        spectrum_gap([1.0], [1.0, 2.0])


def _perturbed(methods):
    def solve(A, M, method=None):
        w, V = generalized_eigh(A, M, method)
        if method in methods:
            V = V + 1e-4 * np.random.default_rng(0).standard_normal(V.shape)
        return w, V

    return solve


def test_inaccurate_jacobi_pairs_are_recomputed(monkeypatch, disk_pair):
    dtn, M = disk_pair
    monkeypatch.setattr("steklov_lab.services.dtn.generalized_eigh", _perturbed({"jacobi"}))
    spectrum = steklov_spectrum(dtn, M, method="jacobi")
    assert np.all(spectrum.residuals <= 1e-8 * (1.0 + np.abs(spectrum.eigenvalues)))
    assert np.allclose(spectrum.eigenvalues, scipy.linalg.eigh(dtn.matrix, M.dense, eigvals_only=True), atol=1e-9)


def test_inaccurate_pairs_raise(monkeypatch, disk_pair):
    dtn, M = disk_pair
    monkeypatch.setattr("steklov_lab.services.dtn.generalized_eigh", _perturbed({"jacobi", "lapack"}))
    with pytest.raises(EigensolverError):
        steklov_spectrum(dtn, M, method="jacobi")


def test_identity_operator_in_mass_geometry(disk_pair):
    _, M = disk_pair
    spectrum = steklov_spectrum(DtnMatrix.from_array(M.dense), M)
    assert np.allclose(spectrum.eigenvalues, 1.0, atol=1e-10)


def test_operator_distance_of_diagonal_operators():
    M = BoundaryMassMatrix.from_array(np.eye(2))
    a1 = DtnMatrix.from_array(np.diag([1.0, 2.0]), kind="truncated")
    a2 = DtnMatrix.from_array(np.diag([1.0, 3.0]), kind="truncated")
    assert operator_distance(a1, a2, M) == pytest.approx(1.0 / 6.0, rel=1e-12)


def test_resolvent_large_lambda_limit(annulus_pair, rng):
    dtn, M = annulus_pair
    psi = rng.standard_normal(M.size)
    lam = 1e6
    assert M.norm(lam * resolvent_apply(dtn, M, lam, psi) - psi) <= 1e-3 * M.norm(psi)


def test_resolvent_of_eigenvectors(annulus_pair):
    dtn, M = annulus_pair
    spectrum = steklov_spectrum(dtn, M)
    lam = 0.7
    for k in [0, 1, 5]:
        v = spectrum.eigenvectors[:, k]
        expected = v / (lam + spectrum.eigenvalues[k])
        assert np.allclose(resolvent_apply(dtn, M, lam, v), expected, atol=1e-9 * np.abs(v).max())
