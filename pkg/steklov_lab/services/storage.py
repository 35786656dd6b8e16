"""Text artifacts: boundary and mesh files, CSV tables, JSON reports."""

import hashlib
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel

from ..config import settings
from ..errors import ParameterError
from ..schemas.transport import FluxReport
from .dtn import SteklovSpectrum
from .geometry import DomainSpec, MeasuredBoundary, Polygon
from .mesh import Mesh, VertexTag

logger = structlog.get_logger()

PathLike = Union[str, Path]


def _fmt(value: float) -> str:
    return settings.float_format % value


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_boundary(b: MeasuredBoundary, path: PathLike) -> Path:
    path = Path(path)
    lines = [f"MB {_fmt(b.d)} {b.polygon.n_edges}"]
    lines += [f"{_fmt(x)} {_fmt(y)}" for x, y in b.polygon.vertices]
    lines += [_fmt(m) for m in b.segment_masses]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_boundary(path: PathLike) -> MeasuredBoundary:
    lines = Path(path).read_text().split("\n")
    header = lines[0].split()
    if len(header) != 3 or header[0] != "MB":
        raise ParameterError("Not a boundary file", path=str(path), header=lines[0])
    d, n = float(header[1]), int(header[2])
    body = [line for line in lines[1:] if line.strip()]
    if len(body) != 2 * n:
        raise ParameterError("Boundary file is truncated", path=str(path), expected=2 * n, got=len(body))
    vertices = np.array([[float(v) for v in line.split()] for line in body[:n]])
    masses = np.array([float(line) for line in body[n:]])
    measure = "arclength" if d == 1.0 else "self_similar"
    return MeasuredBoundary(Polygon(vertices), masses, d=d, measure=measure)


def _canonical_triangles(triangles: np.ndarray) -> np.ndarray:
    """Rotate each triangle to start at its smallest index (orientation kept), then sort"""
    shift = np.argmin(triangles, axis=1)
    index = (shift[:, None] + np.arange(3)[None, :]) % 3
    rotated = np.take_along_axis(triangles, index, axis=1)
    order = np.lexsort(rotated.T[::-1])
    return rotated[order]


def write_mesh(mesh: Mesh, path: PathLike) -> Path:
    path = Path(path)
    lines = [f"MESH2 {mesh.n_vertices} {mesh.n_triangles} {len(mesh.boundary_edges)}"]
    for (x, y), tag, edge, param in zip(mesh.vertices, mesh.vertex_tags, mesh.vertex_edges, mesh.vertex_params):
        line = f"{_fmt(x)} {_fmt(y)} {int(tag)}"
        if tag != VertexTag.INTERIOR:
            line += f" {int(edge)} {_fmt(param)}"
        lines.append(line)
    lines += [f"{i} {j} {k}" for i, j, k in _canonical_triangles(mesh.triangles)]

    edges = mesh.boundary_edges
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    for e in order:
        i, j = edges[e]
        lines.append(f"{i} {j} {int(mesh.boundary_tags[e])} {_fmt(mesh.boundary_masses[e])}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_mesh(path: PathLike, domain: Optional[DomainSpec] = None) -> Mesh:
    lines = [line for line in Path(path).read_text().split("\n") if line.strip()]
    header = lines[0].split()
    if len(header) != 4 or header[0] != "MESH2":
        raise ParameterError("Not a mesh file", path=str(path), header=lines[0])
    nv, nt, nbe = (int(v) for v in header[1:])
    if len(lines) != 1 + nv + nt + nbe:
        raise ParameterError("Mesh file is truncated", path=str(path))

    vertices = np.empty((nv, 2))
    tags = np.zeros(nv, dtype=np.int8)
    edges = np.full(nv, -1, dtype=np.int64)
    params = np.full(nv, np.nan)
    for i, line in enumerate(lines[1 : 1 + nv]):
        fields = line.split()
        vertices[i] = float(fields[0]), float(fields[1])
        tags[i] = int(fields[2])
        if tags[i] != VertexTag.INTERIOR:
            edges[i], params[i] = int(fields[3]), float(fields[4])

    triangles = np.array([[int(v) for v in line.split()] for line in lines[1 + nv : 1 + nv + nt]], dtype=np.int64)
    boundary = [line.split() for line in lines[1 + nv + nt :]]
    b_edges = np.array([[int(f[0]), int(f[1])] for f in boundary], dtype=np.int64).reshape(-1, 2)
    b_tags = np.array([int(f[2]) for f in boundary], dtype=np.int8)
    b_masses = np.array([float(f[3]) for f in boundary])

    # edges run along the polygon, so the end parameter is 1 when the next vertex starts a new edge
    v0, v1 = b_edges[:, 0], b_edges[:, 1]
    t0 = params[v0]
    t1 = np.where(edges[v1] == edges[v0], params[v1], 1.0)

    order = np.lexsort((t0, edges[v0], b_tags))
    return Mesh(
        vertices=vertices,
        triangles=triangles,
        vertex_tags=tags,
        vertex_edges=edges,
        vertex_params=params,
        boundary_edges=b_edges[order],
        boundary_tags=b_tags[order],
        boundary_polygon_edges=edges[v0][order],
        boundary_params=np.column_stack([t0, t1])[order],
        boundary_masses=b_masses[order],
        domain=domain,
    )


def write_table(table: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    table.to_csv(path, index=False, float_format=settings.float_format, lineterminator="\n", na_rep="")
    return path


def write_nodal(values: np.ndarray, path: PathLike) -> Path:
    table = pd.DataFrame({"vertex_index": np.arange(len(values)), "value": np.asarray(values, dtype=float)})
    return write_table(table, path)


def read_nodal(path: PathLike) -> np.ndarray:
    table = pd.read_csv(path, float_precision="round_trip")
    return table.sort_values("vertex_index")["value"].to_numpy()


def spectrum_table(spectrum: SteklovSpectrum) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "k": np.arange(spectrum.size),
            "mu": spectrum.eigenvalues,
            "residual": spectrum.residuals,
        }
    )


def write_spectrum(spectrum: SteklovSpectrum, path: PathLike) -> Path:
    return write_table(spectrum_table(spectrum), path)


def write_eigenvectors(spectrum: SteklovSpectrum, path: PathLike) -> Path:
    """Row-major text dump, one Gamma dof per line"""
    path = Path(path)
    np.savetxt(path, spectrum.eigenvectors, fmt=settings.float_format, delimiter=" ")
    return path


def flux_table(report: FluxReport) -> pd.DataFrame:
    rows = [{"k": str(t.k), "mu": t.mu, "c_k": t.c_k, "partial_sum": t.partial_sum} for t in report.coefficients]
    phi_direct = report.phi_direct if report.phi_direct is not None else np.nan
    rows += [
        {"k": "phi_direct", "mu": phi_direct, "c_k": np.nan, "partial_sum": np.nan},
        {"k": "phi_spectral_full", "mu": report.phi_spectral_full, "c_k": np.nan, "partial_sum": np.nan},
    ]
    return pd.DataFrame(rows, columns=["k", "mu", "c_k", "partial_sum"])


def write_flux(report: FluxReport, path: PathLike) -> Path:
    return write_table(flux_table(report), path)


def write_json(model: BaseModel, path: PathLike) -> Path:
    path = Path(path)
    path.write_text(model.model_dump_json(indent=2) + "\n")
    return path
