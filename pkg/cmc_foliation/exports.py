"""
Artifact writers and readers: OBJ meshes, CSV fields and diagnostics, Matrix
Market operators and flat key-value files.

All numeric text is written with %.17g so identical inputs give identical
files.
"""

import re
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.io
import scipy.sparse as sp
from dotenv import dotenv_values
from loguru import logger

from .epstein import EpsteinSample, Sampler
from .errors import CmcError
from .surface_mesh import SurfaceMesh

FLOAT_FMT = "%.17g"
_FIELD_HEADER = re.compile(r"H=([-+0-9.eEinfa]+)")


def write_obj(path: Path, vertices: np.ndarray, faces: np.ndarray, comment: str = "") -> None:
    """Wavefront OBJ with 1-based triangle indices."""
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=int)
    with open(path, "w", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        for x, y, z in vertices:
            fh.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in faces + 1:
            fh.write(f"f {a} {b} {c}\n")
    logger.debug(f"Wrote {path} ({len(vertices)} vertices, {len(faces)} faces)")


def polar_grid(radius: float, resolution: int) -> Tuple[np.ndarray, np.ndarray]:
    """Chart points on `resolution` rings of `2 * resolution` spokes plus the centre, and their triangles."""
    n_rings, n_spokes = resolution, 2 * resolution
    pts = [0j]
    for i in range(1, n_rings + 1):
        r = radius * i / n_rings
        pts.extend(r * np.exp(2j * np.pi * np.arange(n_spokes) / n_spokes))
    faces: List[Tuple[int, int, int]] = []

    def idx(i: int, k: int) -> int:
        return 0 if i == 0 else 1 + (i - 1) * n_spokes + k % n_spokes

    for k in range(n_spokes):
        faces.append((0, idx(1, k), idx(1, k + 1)))
    for i in range(1, n_rings):
        for k in range(n_spokes):
            a, b = idx(i, k), idx(i, k + 1)
            c, d = idx(i + 1, k), idx(i + 1, k + 1)
            faces.extend([(a, c, d), (a, d, b)])
    return np.array(pts, dtype=complex), np.array(faces, dtype=int)


def write_epstein_obj(path: Path, sampler: Sampler, radius: float, resolution: int, comment: str = "") -> int:
    """
    Sample a leaf on a chart polar grid and write it as OBJ in half-space
    coordinates. Grid points where the sampler fails are dropped with their
    triangles; returns the number of dropped points.
    """
    pts, faces = polar_grid(radius, resolution)
    verts = np.full((len(pts), 3), np.nan)
    for i, z in enumerate(pts):
        try:
            verts[i] = sampler(complex(z)).as_array()
        except CmcError:
            continue
    good = np.all(np.isfinite(verts), axis=1)
    remap = np.cumsum(good) - 1
    kept = faces[np.all(good[faces], axis=1)]
    write_obj(path, verts[good], remap[kept], comment)
    return int(np.sum(~good))


def write_mesh_obj(path: Path, mesh: SurfaceMesh, heights: Optional[np.ndarray] = None) -> None:
    """The raw octagon triangulation in the disc, lifted by an optional per-canonical-node height."""
    z = np.zeros(mesh.n_raw) if heights is None else np.asarray(heights, dtype=float)[mesh.ident]
    verts = np.column_stack([mesh.nodes.real, mesh.nodes.imag, z])
    write_obj(path, verts, mesh.triangles, comment=f"octagon subdiv={mesh.subdiv}")


def write_samples_csv(path: Path, rows: Iterable[Tuple[float, EpsteinSample]]) -> None:
    """One line per (H, sample): chart point, Epstein point, mean and principal curvatures."""
    data = []
    for H, s in rows:
        p = s.point
        data.append([H, s.z.real, s.z.imag, p.x1, p.x2, p.y, s.mean_curv, s.principal[0], s.principal[1]])
    header = "H,re,im,x1,x2,y,mean_curv,lambda1,lambda2"
    np.savetxt(path, np.array(data, dtype=float).reshape(-1, 9), delimiter=",", header=header, comments="", fmt=FLOAT_FMT)


def write_field_csv(path: Path, H: float, points: np.ndarray, v: np.ndarray, u: np.ndarray) -> None:
    """One row per node; id is the node index (canonical node in closed mode)."""
    points = np.asarray(points, dtype=complex)
    data = np.column_stack([np.arange(len(points)), points.real, points.imag, v, u])
    fmt = ["%d"] + [FLOAT_FMT] * 4
    np.savetxt(path, data, delimiter=",", header=f"H={H!r}\nid,re,im,v,u", comments="# ", fmt=fmt)


def read_field_csv(path: Path) -> Tuple[float, np.ndarray, np.ndarray]:
    """Returns (H, points, v) ordered by node id."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    match = _FIELD_HEADER.search(first)
    if not match:
        raise ValueError(f"Field CSV {path} lacks an H= header")
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if data.shape[1] != 5:
        raise ValueError(f"Field CSV {path} has {data.shape[1]} columns, expected 5")
    ids = data[:, 0].astype(np.int64)
    order = np.argsort(ids, kind="stable")
    if not np.array_equal(ids[order], np.arange(len(ids))):
        raise ValueError(f"Field CSV {path} node ids are not 0..{len(ids) - 1}")
    data = data[order]
    return float(match.group(1)), data[:, 1] + 1j * data[:, 2], data[:, 3]


def write_table_csv(path: Path, rows: Sequence[Mapping[str, object]]) -> None:
    """Rows of scalars; the column order is taken from the first row."""
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    columns = list(rows[0].keys())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_format_value(row.get(c, "")) for c in columns) + "\n")


def _format_value(value: object) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return FLOAT_FMT % float(value)
    return str(value)


def write_kv(path: Path, values: Mapping[str, object]) -> None:
    """KEY="value" lines readable by dotenv_values."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in values.items():
            text = _format_value(value).replace("\\", "\\\\").replace('"', '\\"').replace("\n", " ")
            fh.write(f'{key}="{text}"\n')


def read_kv(path: Path) -> Dict[str, str]:
    return {k: v if v is not None else "" for k, v in dotenv_values(path).items()}


def write_matrix_market(path: Path, matrix: sp.spmatrix, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), comment=comment, precision=17)
