import structlog

from ..config import settings
from ..schemas.run import RunConfig
from ..services.geometry import dset_dimension_estimate
from ..services.mesh import is_delaunay, triangulate, validate_mesh
from .builders import build_domain, build_gamma
from .context import ExperimentContext
from .registry import ExperimentRegistry

logger = structlog.get_logger()

registry = ExperimentRegistry()


@registry.pipeline("mesh")
def mesh_experiment(config: RunConfig, ctx: ExperimentContext) -> None:
    """Mesh the configured domain and audit it"""

    with ctx.step("geometry"):
        domain = build_domain(config)
        ctx.write_boundary("gamma.txt", domain.gamma)
        if domain.is_truncated:
            ctx.write_boundary("s.txt", domain.s)

    with ctx.step("triangulate"):
        mesh = triangulate(domain, config.h, config.grading, h_outer=config.h_outer)
        quality = validate_mesh(mesh)
        ctx.write_mesh("mesh.txt", mesh)
        ctx.write_json("mesh_quality.json", quality)

    ctx.check("area", quality.area, reference=domain.area, tolerance=1e-10, oracle="shoelace polygon area")
    ctx.check(
        "euler_characteristic",
        quality.euler_characteristic,
        passed=quality.euler_characteristic == (0 if domain.is_truncated else 1),
        oracle="V - E + T",
    )
    ctx.check("min_angle", quality.min_angle, passed=quality.min_angle >= settings.min_angle - 1e-9)
    if not is_delaunay(mesh):
        logger.warning("Mesh is not Delaunay; discrete maximum principle not guaranteed")


@registry.pipeline("dset-check")
def dset_experiment(config: RunConfig, ctx: ExperimentContext) -> None:
    """Ball-mass scaling slope of Gamma against its nominal dimension"""

    with ctx.step("geometry"):
        gamma = build_gamma(config)
        ctx.write_boundary("gamma.txt", gamma)

    with ctx.step("estimate"):
        estimate = dset_dimension_estimate(gamma, config.dset_radii, config.n_centers, seed=config.seed)
        ctx.write_json("dset_estimate.json", estimate)

    ctx.check(
        "dset_slope",
        estimate.slope,
        reference=gamma.d,
        tolerance=config.dset_tol,
        relative=False,
        oracle="log 4 / log 3" if gamma.d != 1.0 else "rectifiable curve",
    )
