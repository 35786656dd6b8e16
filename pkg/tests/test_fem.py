import numpy as np
import pytest
import scipy.linalg

from steklov_lab.errors import AssemblyError, ParameterError, PreconditionError, SingularityError
from steklov_lab.services.dtn import annulus_robin_oracle
from steklov_lab.services.fem import (
    apply_dirichlet,
    assemble_boundary_mass,
    assemble_mass,
    assemble_stiffness,
    discrete_green_check,
    free_dofs,
    harmonic_extension,
    is_m_matrix,
    robin_matrix,
    robin_solve,
    sample_boundary_data,
)
from steklov_lab.services.geometry import circle_polygon, make_domain
from steklov_lab.services.mesh import Mesh, VertexTag, triangulate


def test_stiffness_kernel_and_energy(disk_mesh):
    K = assemble_stiffness(disk_mesh)
    assert np.allclose(K @ np.ones(disk_mesh.n_vertices), 0.0, atol=1e-12)
    assert np.all(K.diagonal() > 0)

    # a linear function has energy area * |grad|^2
    u = 2.0 * disk_mesh.vertices[:, 0] - disk_mesh.vertices[:, 1]
    assert u @ (K @ u) == pytest.approx(5.0 * disk_mesh.area, rel=1e-12)


def test_stiffness_of_two_triangles(two_triangles):
    K = assemble_stiffness(two_triangles).to_dense()
    expected = np.array(
        [
            [1.0, -0.5, 0.0, -0.5],
            [-0.5, 1.0, -0.5, 0.0],
            [0.0, -0.5, 1.0, -0.5],
            [-0.5, 0.0, -0.5, 1.0],
        ]
    )
    assert np.allclose(K, expected)


def test_mass_matrix_integrates(disk_mesh):
    M = assemble_mass(disk_mesh)
    ones = np.ones(disk_mesh.n_vertices)
    x = disk_mesh.vertices[:, 0]
    assert ones @ (M @ ones) == pytest.approx(disk_mesh.area, rel=1e-12)
    assert abs(x @ (M @ ones)) <= 1e-12
    assert np.all(np.linalg.eigvalsh(M.to_dense()) > 0)


def test_degenerate_triangle_is_rejected():
    mesh = Mesh(
        vertices=np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]),
        triangles=np.array([[0, 1, 2]]),
        vertex_tags=np.zeros(3, dtype=np.int8),
        vertex_edges=np.full(3, -1),
        vertex_params=np.full(3, np.nan),
        boundary_edges=np.zeros((0, 2), dtype=np.int64),
        boundary_tags=np.zeros(0, dtype=np.int8),
        boundary_polygon_edges=np.zeros(0, dtype=np.int64),
        boundary_params=np.zeros((0, 2)),
        boundary_masses=np.zeros(0),
    )
    with pytest.raises(AssemblyError):
        assemble_stiffness(mesh)


@pytest.mark.parametrize("lumped", [False, True])
def test_boundary_mass_total(annulus_mesh, annulus_domain, lumped):
    M = assemble_boundary_mass(annulus_mesh, "gamma", lumped=lumped)
    assert M.size == len(annulus_mesh.boundary_dofs("gamma"))
    assert M.total_mass == pytest.approx(annulus_domain.gamma.total_mass, rel=1e-12)
    S = assemble_boundary_mass(annulus_mesh, "s", lumped=lumped)
    assert S.total_mass == pytest.approx(annulus_domain.s.total_mass, rel=1e-12)


def test_boundary_mass_integrates_linear_functions(disk_mesh):
    M = assemble_boundary_mass(disk_mesh)
    x = disk_mesh.vertices[M.dofs, 0]
    # the polygon is symmetric under x -> -x
    assert abs(M.inner(x, np.ones(M.size))) <= 1e-12
    assert M.norm(np.ones(M.size)) == pytest.approx(np.sqrt(M.total_mass))


def test_boundary_mass_without_s(disk_mesh):
    with pytest.raises(ParameterError):
        assemble_boundary_mass(disk_mesh, "s")


def test_delaunay_stiffness_is_m_matrix(annulus_mesh):
    assert is_m_matrix(assemble_stiffness(annulus_mesh))


def test_apply_dirichlet(annulus_mesh):
    K = assemble_stiffness(annulus_mesh)
    K_ff, free = apply_dirichlet(K, annulus_mesh)
    n_s = int(np.sum(annulus_mesh.vertex_tags == VertexTag.S))
    assert K_ff.dimension == annulus_mesh.n_vertices - n_s
    assert np.array_equal(free, free_dofs(annulus_mesh, "dirichlet"))
    scipy.linalg.cholesky(K_ff.to_dense())


def test_free_dofs_neumann_keeps_everything(annulus_mesh):
    assert len(free_dofs(annulus_mesh, "neumann")) == annulus_mesh.n_vertices
    with pytest.raises(ParameterError):
        free_dofs(annulus_mesh, "periodic")


def test_sample_boundary_data():
    points = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(sample_boundary_data(points, 2.5), [2.5, 2.5])
    assert np.array_equal(sample_boundary_data(points, lambda x, y: x + y), [3.0, 7.0])
    with pytest.raises(ParameterError):
        sample_boundary_data(points, np.ones(3))


def test_robin_interior_constant_solution(disk_mesh):
    solution = robin_solve(disk_mesh, 1.0, 1.0)
    assert np.allclose(solution.u, 1.0, atol=1e-10)
    assert abs(solution.total_flux) <= 1e-10


def test_robin_interior_singular_at_zero(disk_mesh):
    with pytest.raises(SingularityError):
        robin_solve(disk_mesh, 0.0, 1.0)


@pytest.mark.parametrize("lam", [-1.0, np.inf, np.nan])
def test_robin_rejects_bad_lambda(disk_mesh, lam):
    with pytest.raises(ParameterError):
        robin_solve(disk_mesh, lam, 1.0)


def test_robin_total_flux_definition(annulus_mesh):
    M = assemble_boundary_mass(annulus_mesh)
    solution = robin_solve(annulus_mesh, 2.0, lambda x, y: 1.0 + x, gamma_mass=M)
    expected = np.ones(M.size) @ (M.matrix @ (solution.psi - 2.0 * solution.trace))
    assert solution.total_flux == pytest.approx(expected, rel=1e-14)
    assert not np.any(solution.u[annulus_mesh.vertex_tags == VertexTag.S])


def test_robin_truncated_allows_zero_lambda(annulus_mesh):
    solution = robin_solve(annulus_mesh, 0.0, 1.0)
    assert solution.total_flux > 0
    with pytest.raises(SingularityError):
        robin_solve(annulus_mesh, 0.0, 1.0, outer="neumann")


def test_robin_neumann_outer_constant_solution(annulus_mesh):
    solution = robin_solve(annulus_mesh, 2.0, 2.0, outer="neumann")
    assert np.allclose(solution.u, 1.0, atol=1e-10)


def test_robin_annulus_matches_radial_solution():
    gamma, s = circle_polygon(1.0, 64), circle_polygon(2.0, 128)
    mesh = triangulate(make_domain("truncated", gamma, s), 0.1, grading=0.0)
    solution = robin_solve(mesh, 1.0, 1.0)
    r = np.hypot(mesh.vertices[:, 0], mesh.vertices[:, 1])
    exact = annulus_robin_oracle(1.0, 2.0, 1.0, r)
    assert np.max(np.abs(solution.u - exact)) <= 0.02 * exact.max()


@pytest.mark.parametrize("solver", ["direct", "cg"])
def test_robin_solvers_agree(annulus_mesh, solver):
    reference = robin_solve(annulus_mesh, 1.0, 1.0, method="direct").u
    assert np.allclose(robin_solve(annulus_mesh, 1.0, 1.0, method=solver).u, reference, atol=1e-9)


def test_robin_matrix_is_positive_definite(annulus_mesh):
    K = assemble_stiffness(annulus_mesh)
    M = assemble_boundary_mass(annulus_mesh)
    system, injection = robin_matrix(K, M, free_dofs(annulus_mesh), 0.0)
    assert injection.shape == (system.dimension, M.size)
    scipy.linalg.cholesky(system.to_dense())


def test_lumped_robin_order_properties(annulus_mesh):
    """Discrete maximum principle: 0 <= u_lam2 <= u_lam1 and u <= 1/lam for psi = 1"""

    K = assemble_stiffness(annulus_mesh)
    M = assemble_boundary_mass(annulus_mesh, lumped=True)
    free = free_dofs(annulus_mesh)
    lambdas = [0.5, 1.0, 2.0, 4.0]
    assert all(is_m_matrix(robin_matrix(K, M, free, lam)[0]) for lam in lambdas)

    solutions = [robin_solve(annulus_mesh, lam, 1.0, stiffness=K, gamma_mass=M).u for lam in lambdas]
    for lam, u in zip(lambdas, solutions):
        assert u.min() >= -1e-12
        assert u.max() <= 1.0 / lam + 1e-10
    for smaller, larger in zip(solutions[1:], solutions[:-1]):
        assert np.all(smaller <= larger + 1e-10)


def test_harmonic_extension_reproduces_linear_functions(annulus_mesh):
    linear = 3.0 * annulus_mesh.vertices[:, 0] + annulus_mesh.vertices[:, 1]
    assert np.allclose(harmonic_extension(annulus_mesh, linear), linear, atol=1e-10)


def test_discrete_green_identity(annulus_mesh, rng):
    K = assemble_stiffness(annulus_mesh)
    for _ in range(20):
        u = harmonic_extension(annulus_mesh, rng.standard_normal(annulus_mesh.n_vertices), stiffness=K)
        v = rng.standard_normal(annulus_mesh.n_vertices)
        residual = discrete_green_check(annulus_mesh, u, v, stiffness=K)
        assert residual <= 1e-10 * np.linalg.norm(u) * np.linalg.norm(v)


def test_discrete_green_constants(disk_mesh):
    ones = np.ones(disk_mesh.n_vertices)
    assert discrete_green_check(disk_mesh, ones, ones) <= 1e-12


def test_discrete_green_needs_harmonic_u(annulus_mesh, rng):
    with pytest.raises(PreconditionError):
        discrete_green_check(
            annulus_mesh, rng.standard_normal(annulus_mesh.n_vertices), np.ones(annulus_mesh.n_vertices)
        )
