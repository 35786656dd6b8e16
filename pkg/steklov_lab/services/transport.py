"""Total flux across Gamma: direct from the Robin solution and as a Steklov series."""

from typing import Optional, Sequence

import numpy as np
import pandas as pd
import structlog

from ..errors import ParameterError
from ..schemas.transport import FluxReport, FluxTerm
from .dtn import SteklovSpectrum
from .fem import BoundaryData, BoundaryMassMatrix, robin_solve
from .geometry import MeasuredBoundary, make_domain
from .mesh import Mesh, interpolate, triangulate_family

logger = structlog.get_logger()


def flux_direct(mesh: Mesh, lam: float, psi: BoundaryData, outer: str = "dirichlet") -> float:
    """1^T M (psi - lam Tr u) for the Robin solution u"""
    return robin_solve(mesh, lam, psi, outer=outer).total_flux


def flux_spectral(
    spectrum: SteklovSpectrum,
    M: BoundaryMassMatrix,
    lam: float,
    psi: Optional[np.ndarray] = None,
    phi_direct: Optional[float] = None,
) -> FluxReport:
    """Steklov series of the flux.

    psi = lam * 1 (the default) gives sum lam mu_k c_k^2 / (lam + mu_k) with
    c_k = (1, V_k)_M; a general psi gives sum c_k^psi c_k mu_k / (lam + mu_k).
    """

    if not lam > 0:
        raise ParameterError("Spectral flux needs lambda > 0", lam=lam)
    V, mu = spectrum.eigenvectors, spectrum.eigenvalues
    if V.shape[0] != M.size:
        raise ParameterError("Spectrum and mass matrix live on different dof sets", n_spectrum=V.shape[0], n_mass=M.size)

    c_one = V.T @ (M.matrix @ np.ones(M.size))
    if psi is None:
        terms = lam * mu * c_one**2 / (lam + mu)
    else:
        c_psi = V.T @ (M.matrix @ np.asarray(psi, dtype=float))
        terms = c_psi * c_one * mu / (lam + mu)
    partial = np.cumsum(terms)
    phi_full = float(partial[-1])

    coefficients = [
        FluxTerm(k=k, mu=float(mu[k]), c_k=float(c_one[k]), term=float(terms[k]), partial_sum=float(partial[k]))
        for k in range(len(mu))
    ]

    relative_gap = None
    if phi_direct is not None and phi_direct != 0:
        relative_gap = abs(phi_full - phi_direct) / abs(phi_direct)

    message = None
    if not spectrum.complete:
        message = "Incomplete spectrum: the series is a lower bound of the direct flux, not an identity"
        logger.warning("Flux series from an incomplete spectrum", n_pairs=len(mu), n_gamma=M.size)

    return FluxReport(
        lam=float(lam),
        phi_direct=phi_direct,
        phi_spectral_full=phi_full,
        phi_partial=partial.tolist(),
        coefficients=coefficients,
        complete=spectrum.complete,
        relative_gap=relative_gap,
        message=message,
    )


def flux_sweep(spectrum: SteklovSpectrum, M: BoundaryMassMatrix, lams: Sequence[float]) -> pd.DataFrame:
    rows = [{"lam": float(lam), "phi": flux_spectral(spectrum, M, lam).phi_spectral_full} for lam in sorted(lams)]
    return pd.DataFrame(rows, columns=["lam", "phi"])


def domain_monotonicity_probe(
    gamma: MeasuredBoundary,
    s_list: Sequence[MeasuredBoundary],
    lam: float,
    psi: BoundaryData,
    probes: np.ndarray,
    h_target: float,
    grading: Optional[float] = None,
    meshes: Optional[Sequence[Mesh]] = None,
    h_outer: Optional[float] = None,
) -> pd.DataFrame:
    """Robin solutions of a growing truncation family evaluated at fixed probe points.

    One row per (truncation, probe); values should not decrease down each
    probe's column when psi >= 0.
    """

    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if meshes is None:
        domains = [make_domain("truncated", gamma, s, label=f"S{i}") for i, s in enumerate(s_list)]
        meshes = triangulate_family(domains, h_target, grading, h_outer)
    if len(meshes) != len(s_list):
        raise ParameterError("One mesh per truncation boundary is required", n_meshes=len(meshes), n_s=len(s_list))

    rows = []
    for index, mesh in enumerate(meshes):
        solution = robin_solve(mesh, lam, psi)
        values = interpolate(mesh, solution.u, probes)
        for p, (point, value) in enumerate(zip(probes, values)):
            rows.append({"truncation": index, "probe": p, "x": point[0], "y": point[1], "value": float(value)})
    table = pd.DataFrame(rows, columns=["truncation", "probe", "x", "y", "value"])
    logger.info("Monotonicity probes evaluated", n_truncations=len(meshes), n_probes=len(probes))
    return table


def probe_increments(table: pd.DataFrame) -> pd.Series:
    """Smallest step between consecutive truncations, per probe"""
    ordered = table.sort_values(["probe", "truncation"])
    steps = ordered.groupby("probe")["value"].diff()
    return steps.groupby(ordered["probe"]).min().fillna(0.0)


def one_gamma_in_domain_check(spectrum: SteklovSpectrum, M: BoundaryMassMatrix) -> float:
    """Share of sum mu_k^2 c_k^2 carried by the modes k > n/2"""

    n = spectrum.size
    if n <= 1:
        return 0.0
    c_one = spectrum.eigenvectors.T @ (M.matrix @ np.ones(M.size))
    weights = spectrum.eigenvalues**2 * c_one**2
    total = float(weights.sum())
    if total <= 1e-20 * float(np.max(spectrum.eigenvalues**2)) * float((c_one**2).sum()):
        return 0.0
    return float(weights[n // 2 + 1 :].sum() / total)
