import numpy as np
import pytest

from steklov_lab.services.geometry import circle_polygon, make_domain, square_polygon
from steklov_lab.services.mesh import Mesh, VertexTag, triangulate, triangulate_family


@pytest.fixture(scope="session")
def disk_domain():
    return make_domain("interior", circle_polygon(1.0, 32), label="disk")


@pytest.fixture(scope="session")
def disk_mesh(disk_domain):
    return triangulate(disk_domain, 0.2)


@pytest.fixture(scope="session")
def annulus_domain():
    return make_domain("truncated", circle_polygon(1.0, 32), circle_polygon(2.0, 64), label="annulus")


@pytest.fixture(scope="session")
def annulus_mesh(annulus_domain):
    return triangulate(annulus_domain, 0.2)


@pytest.fixture(scope="session")
def square_mesh():
    return triangulate(make_domain("interior", square_polygon(0.5)), 0.25)


@pytest.fixture(scope="session")
def annulus_family():
    """Interior disk and annuli L = 2, 3 meshed on one Gamma subdivision"""
    gamma = circle_polygon(1.0, 32)
    domains = [
        make_domain("interior", gamma),
        make_domain("truncated", gamma, circle_polygon(2.0, 64)),
        make_domain("truncated", gamma, circle_polygon(3.0, 96)),
    ]
    return triangulate_family(domains, 0.2)


@pytest.fixture
def two_triangles():
    """Unit square split along its diagonal, no domain attached"""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return Mesh(
        vertices=vertices,
        triangles=np.array([[0, 1, 2], [0, 2, 3]]),
        vertex_tags=np.full(4, VertexTag.GAMMA, dtype=np.int8),
        vertex_edges=np.arange(4),
        vertex_params=np.zeros(4),
        boundary_edges=np.array([[0, 1], [1, 2], [2, 3], [3, 0]]),
        boundary_tags=np.full(4, VertexTag.GAMMA, dtype=np.int8),
        boundary_polygon_edges=np.arange(4),
        boundary_params=np.column_stack([np.zeros(4), np.ones(4)]),
        boundary_masses=np.ones(4),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
