"""Steklov spectra: disk and annulus oracles, interior/exterior agreement, truncation studies."""

from typing import Optional

import numpy as np
import pandas as pd
import structlog

from ..schemas.run import RunConfig
from ..services.dtn import (
    RESIDUAL_TOL,
    DtnMatrix,
    SteklovSpectrum,
    annulus_steklov_oracle,
    disk_steklov_oracle,
    operator_distance,
    poincare_constant,
    schur_dtn,
    spectrum_gap,
    steklov_spectrum,
)
from ..services.fem import BoundaryMassMatrix, assemble_boundary_mass
from ..services.geometry import DomainSpec
from ..services.mesh import Mesh, triangulate, triangulate_family
from .builders import build_domain, gamma_oracle_radius, is_strictly_decreasing, truncation_family
from .context import ExperimentContext
from .registry import ExperimentRegistry

logger = structlog.get_logger()

registry = ExperimentRegistry()

# eigenvalues mu_1 .. mu_5 are compared across domains
N_COMPARE = 5


def _operator(mesh: Mesh, config: RunConfig, ctx: ExperimentContext) -> tuple[DtnMatrix, BoundaryMassMatrix]:
    dtn = schur_dtn(mesh, outer=config.outer_condition, threads=ctx.threads)
    return dtn, assemble_boundary_mass(mesh, "gamma")


def _oracle(config: RunConfig, domain: DomainSpec, n: int) -> Optional[np.ndarray]:
    radius = gamma_oracle_radius(config)
    if radius is None:
        return None
    if not domain.is_truncated:
        return disk_steklov_oracle(radius, n)
    if config.outer == "circle" and config.outer_condition == "dirichlet":
        return annulus_steklov_oracle(radius, config.L[0], n)
    return None


def _orthonormality_defect(spectrum: SteklovSpectrum, M: BoundaryMassMatrix) -> float:
    V = spectrum.eigenvectors
    return float(np.abs(V.T @ M.dense @ V - np.eye(V.shape[1])).max())


@registry.pipeline("steklov")
def steklov_experiment(config: RunConfig, ctx: ExperimentContext) -> None:
    """DtN spectrum of one domain, with the separation-of-variables oracle when Gamma is a circle"""

    with ctx.step("triangulate"):
        domain = build_domain(config)
        mesh = triangulate(domain, config.h, config.grading, h_outer=config.h_outer)
        ctx.write_mesh("mesh.txt", mesh)

    with ctx.step("dtn"):
        dtn, M = _operator(mesh, config, ctx)

    with ctx.step("spectrum"):
        spectrum = steklov_spectrum(dtn, M)
        oracle = _oracle(config, domain, spectrum.size)
        ctx.write_spectrum("spectrum.csv", spectrum, oracle)
        ctx.write_eigenvectors("eigenvectors.txt", spectrum)

    mu = spectrum.eigenvalues
    ctx.check("dtn_asymmetry", dtn.asymmetry, passed=dtn.asymmetry <= 1e-10)
    defect = _orthonormality_defect(spectrum, M)
    ctx.check("m_orthonormality", defect, passed=defect <= 1e-10)
    worst = float(np.max(spectrum.residuals / (1.0 + np.abs(mu))))
    ctx.check("eigen_residual", worst, passed=worst <= RESIDUAL_TOL, tolerance=RESIDUAL_TOL)

    if dtn.is_definite:
        ctx.check("mu0_positive", mu[0], passed=mu[0] > 0)
    else:
        ctx.check("mu0_kernel", mu[0], passed=abs(mu[0]) <= 1e-9, oracle="constants are Neumann-harmonic")
        ctx.check("mu1_positive", mu[1], passed=mu[1] > 0)

    if oracle is not None:
        first = 1 if not domain.is_truncated else 0
        for k in range(first, min(first + config.k_compare, spectrum.size)):
            ctx.check(
                f"mu_{k}",
                mu[k],
                reference=oracle[k],
                tolerance=config.oracle_tol,
                oracle="disk k/R" if not domain.is_truncated else "annulus radial ODE",
            )


@registry.pipeline("spectrum-compare")
def spectrum_compare_experiment(config: RunConfig, ctx: ExperimentContext) -> None:
    """Interior spectrum against truncated exterior spectra on the same Gamma mesh"""

    with ctx.step("triangulate"):
        interior = build_domain(config.model_copy(update={"domain": "interior"}))
        meshes = triangulate_family([interior, *truncation_family(config)], config.h, config.grading, config.h_outer)

    with ctx.step("spectra"):
        operators = [_operator(mesh, config, ctx) for mesh in meshes]
        spectra = [steklov_spectrum(dtn, M) for dtn, M in operators]

    mu_interior = spectra[0].eigenvalues[1 : N_COMPARE + 1]
    rows, gaps, distances = [], [], []
    for L, spectrum in zip(config.L, spectra[1:]):
        mu_exterior = spectrum.eigenvalues[1 : N_COMPARE + 1]
        gaps.append(spectrum_gap(mu_exterior, mu_interior))
        for k, (a, b) in enumerate(zip(mu_interior, mu_exterior), start=1):
            rows.append({"L": L, "k": k, "mu_interior": a, "mu_truncated": b, "relative_gap": abs(b - a) / a})

    with ctx.step("resolvent distances"):
        interior_dtn, interior_M = operators[0]
        for L, (dtn, _) in zip(config.L, operators[1:]):
            distances.append({"L": L, "distance": operator_distance(dtn, interior_dtn, interior_M, lam=1.0)})

    ctx.write_table("spectrum_compare.csv", pd.DataFrame(rows))
    ctx.write_table("resolvent_distance.csv", pd.DataFrame(distances))

    ctx.check("gap_decreasing", gaps[-1], passed=is_strictly_decreasing(gaps))
    ctx.check("final_gap", gaps[-1], passed=gaps[-1] <= config.gap_tol, tolerance=config.gap_tol)


@registry.pipeline("mu0-decay")
def mu0_decay_experiment(config: RunConfig, ctx: ExperimentContext) -> None:
    """Lowest truncated eigenvalue against 1 / (R ln(L/R))"""

    with ctx.step("triangulate"):
        meshes = triangulate_family(truncation_family(config), config.h, config.grading, config.h_outer)

    with ctx.step("spectra"):
        mu0 = np.array([steklov_spectrum(*_operator(mesh, config, ctx), k_max=1).eigenvalues[0] for mesh in meshes])

    L = np.asarray(config.L, dtype=float)
    radius = gamma_oracle_radius(config)
    table = pd.DataFrame({"L": L, "mu0": mu0})
    if radius is not None:
        x = 1.0 / (radius * np.log(L / radius))
        table["oracle"] = x
        table["fitted"] = (mu0 @ x) / (x @ x) * x
        table["relative_error"] = np.abs(mu0 - x) / x
    ctx.write_table("mu0_decay.csv", table)

    ctx.check("mu0_decreasing", mu0[-1], passed=is_strictly_decreasing(mu0), oracle="mu0(L) -> 0")
    if radius is not None and config.outer == "circle" and config.outer_condition == "dirichlet":
        for L_value, value, reference in zip(L, mu0, table["oracle"]):
            ctx.check(
                f"mu0_L{L_value:g}", value, reference=reference, tolerance=config.decay_tol, oracle="1/(R ln(L/R))"
            )


@registry.pipeline("truncation-convergence")
def truncation_convergence_experiment(config: RunConfig, ctx: ExperimentContext) -> None:
    """Shape of the truncation boundary matters less and less as it moves away"""

    shapes = list(config.outer_shapes)
    keys = [(shape, size) for shape in shapes for size in config.L]
    with ctx.step("triangulate"):
        domains = [build_domain(config, size, shape) for shape, size in keys]
        meshes = triangulate_family(domains, config.h, config.grading, config.h_outer)
    grid = dict(zip(keys, meshes))

    with ctx.step("spectra"):
        operators = {key: _operator(mesh, config, ctx) for key, mesh in grid.items()}
        leading = {key: steklov_spectrum(dtn, M).eigenvalues[: N_COMPARE + 1] for key, (dtn, M) in operators.items()}

    rows, spreads, nonzero_spreads = [], [], []
    for size in config.L:
        stack = np.array([leading[(shape, size)] for shape in shapes])
        spread = (stack.max(axis=0) - stack.min(axis=0)) / stack.min(axis=0)
        spreads.append(float(spread[:N_COMPARE].max()))
        nonzero_spreads.append(float(spread[1:].max()))
        for shape in shapes:
            for k, value in enumerate(leading[(shape, size)]):
                rows.append({"shape": shape, "L": size, "k": k, "mu": value})
    ctx.write_table("truncation_spectra.csv", pd.DataFrame(rows))
    ctx.write_table(
        "shape_spread.csv", pd.DataFrame({"L": config.L, "spread": spreads, "nonzero_spread": nonzero_spreads})
    )

    # mu_0 .. mu_4 must move together; the tolerances apply to mu_1 .. mu_5
    ctx.check("shape_spread_decreasing", spreads[-1], passed=is_strictly_decreasing(spreads))
    for shape in shapes:
        mu0 = [leading[(shape, size)][0] for size in config.L]
        ctx.check(f"mu0_decreasing_{shape}", mu0[-1], passed=is_strictly_decreasing(mu0), oracle="domain inclusion")
    tight, loose = config.gap_tol / 2, config.gap_tol
    ctx.check("final_shape_spread", nonzero_spreads[-1], passed=nonzero_spreads[-1] <= tight, tolerance=tight)
    if len(nonzero_spreads) > 1:
        ctx.check(
            "penultimate_shape_spread", nonzero_spreads[-2], passed=nonzero_spreads[-2] <= loose, tolerance=loose
        )

    reference_shape = shapes[0]
    with ctx.step("poincare"):
        constants = [poincare_constant(grid[(reference_shape, size)]) for size in config.L]
    with ctx.step("inverse distances"):
        last_dtn, last_M = operators[(reference_shape, config.L[-1])]
        distances = [operator_distance(operators[(reference_shape, size)][0], last_dtn, last_M) for size in config.L[:-1]]

    ctx.write_table("poincare.csv", pd.DataFrame({"L": config.L, "poincare_constant": constants}))
    ctx.write_table("inverse_distance.csv", pd.DataFrame({"L": config.L[:-1], "distance": distances}))
    ctx.check(
        "poincare_increasing", constants[-1], passed=bool(np.all(np.diff(constants) > 0)), oracle="domain inclusion"
    )
    if len(distances) > 1:
        ctx.check("inverse_distance_decreasing", distances[-1], passed=is_strictly_decreasing(distances))

    logger.info("Truncation study finished", shapes=shapes, spreads=spreads)
