"""
Closed genus-2 hyperbolic surface as a regular octagon in the Poincaré disc.

The octagon has vertex angle pi/4 and side k runs from V_k to V_(k+1). Sides
0, 1, 4, 5 are glued to sides 2, 3, 6, 7 (side k onto side k+2, reversing
direction), which realizes the word a b a^-1 b^-1 c d c^-1 d^-1. All eight
vertices are identified to a single point.

Raw nodes live in the closed octagon; boundary copies are identified to a
canonical representative and carry the Möbius map sending their position to
the canonical one. Scalar fields (u, v, residuals) are indexed by canonical
node; quadratic differentials are stored per raw node and must satisfy the
(g')^2 cocycle.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from loguru import logger
from scipy.linalg import eigh
from scipy.sparse.linalg import cg, eigsh, splu

from .errors import MeshPairingFailure, NotPositive, SizeMismatch, SolverFailure
from .moebius_h3 import MoebiusMap, disc_geodesic_angle, disc_triangle_area, geodesic_point

OCTAGON_VERTEX_RADIUS = 2.0**-0.25
SIDE_MIDPOINT_RADIUS = math.sqrt(math.sqrt(2.0) - 1.0)
PAIRED_SIDES = (0, 1, 4, 5)  # side k is glued onto side k + 2
SNAP_TOL = 1e-8
QD_EQUIVARIANCE_TOL = 1e-6
HELMHOLTZ_RTOL = 1e-10
DENSE_EIG_LIMIT = 3000  # larger meshes use shift-invert eigsh

ScalarField = np.ndarray


def ring_start(i: int) -> int:
    """Raw index of the first node on ring i (ring 0 is the centre)."""
    return 0 if i == 0 else 1 + 4 * i * (i - 1)


def raw_index(i: int, k: int, j: int) -> int:
    """Raw index of node j of sector k on ring i; j == i wraps into sector k + 1."""
    if i == 0:
        return 0
    return ring_start(i) + (k * i + j) % (8 * i)


@dataclass(frozen=True)
class FundamentalDomain:
    vertices: Tuple[complex, ...]
    pairings: Dict[int, MoebiusMap]

    @classmethod
    def regular_octagon(cls) -> "FundamentalDomain":
        vertices = tuple(OCTAGON_VERTEX_RADIUS * complex(math.cos(k * math.pi / 4), math.sin(k * math.pi / 4)) for k in range(8))
        shift = MoebiusMap.disc_translation(math.tanh(2.0 * math.atanh(SIDE_MIDPOINT_RADIUS)))
        pairings = {}
        for k in PAIRED_SIDES:
            # midpoint of side k -> negative real axis -> translate -> midpoint of side k + 2
            into = MoebiusMap.rotation(math.pi - (2 * k + 1) * math.pi / 8)
            out = MoebiusMap.rotation((2 * k + 5) * math.pi / 8)
            pairings[k] = out @ shift @ into
        return cls(vertices, pairings)

    def side_point(self, k: int, t: float) -> complex:
        return geodesic_point(self.vertices[k % 8], self.vertices[(k + 1) % 8], t)

    def pairing_residual(self) -> float:
        """Worst endpoint mismatch of the side pairings."""
        worst = 0.0
        for k, g in self.pairings.items():
            worst = max(
                worst,
                abs(g(self.vertices[k]) - self.vertices[(k + 3) % 8]),
                abs(g(self.vertices[(k + 1) % 8]) - self.vertices[(k + 2) % 8]),
            )
        return float(worst)

    def vertex_angle_sum(self) -> float:
        v = self.vertices
        return float(sum(disc_geodesic_angle(v[k], v[(k - 1) % 8], v[(k + 1) % 8]) for k in range(8)))

    def vertex_maps(self) -> Dict[int, MoebiusMap]:
        """For each vertex V_k, the group element sending V_k to V_0."""
        edges: Dict[int, List[Tuple[int, MoebiusMap]]] = {k: [] for k in range(8)}
        for k, g in self.pairings.items():
            for src, dst in ((k, (k + 3) % 8), ((k + 1) % 8, (k + 2) % 8)):
                edges[src].append((dst, g))
                edges[dst].append((src, g.inverse()))
        maps = {0: MoebiusMap.identity()}
        queue = deque([0])
        while queue:
            a = queue.popleft()
            for b, g_ab in edges[a]:
                if b not in maps:
                    # g_ab sends V_a to V_b, so V_b -> V_0 is maps[a] o g_ab^-1
                    maps[b] = maps[a] @ g_ab.inverse()
                    queue.append(b)
        if len(maps) != 8:
            raise MeshPairingFailure(f"Vertex cycle covers only {sorted(maps)}")
        for k, g in maps.items():
            if abs(g(self.vertices[k]) - self.vertices[0]) > SNAP_TOL:
                raise MeshPairingFailure(f"Vertex map for V_{k} misses V_0 by {abs(g(self.vertices[k]) - self.vertices[0]):.3e}")
        return maps


@dataclass(frozen=True)
class SurfaceMesh:
    """
    Octagon mesh with identified boundary and assembled operators.

    stiffness and mass act on canonical nodes; dz and dzz are the chart
    derivatives d/dz and d^2/dz^2 at each canonical node's disc position.
    """

    subdiv: int
    domain: FundamentalDomain
    nodes: np.ndarray
    triangles: np.ndarray
    ident: np.ndarray
    canonical_raw: np.ndarray
    chart_maps: Tuple[MoebiusMap, ...]
    stiffness: sp.csr_matrix
    mass: np.ndarray
    dz: sp.csr_matrix = field(repr=False)
    dzz: sp.csr_matrix = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.canonical_raw)

    @property
    def n_raw(self) -> int:
        return len(self.nodes)

    @property
    def positions(self) -> np.ndarray:
        """Disc coordinates of the canonical nodes."""
        return self.nodes[self.canonical_raw]

    @property
    def rho(self) -> np.ndarray:
        """Poincaré log-density log(2 / (1 - |z|^2)) at the canonical nodes."""
        return math.log(2.0) - np.log1p(-np.abs(self.positions) ** 2)

    @property
    def bg_curvature(self) -> np.ndarray:
        return -np.ones(self.n_nodes)

    @property
    def total_area(self) -> float:
        return float(self.mass.sum())

    def chart_derivatives(self) -> np.ndarray:
        """g'(z_raw) of each raw node's chart map."""
        return np.array([g.derivative(zr) for g, zr in zip(self.chart_maps, self.nodes)], dtype=complex)


def _check_size(mesh: SurfaceMesh, v: np.ndarray, name: str = "field") -> np.ndarray:
    v = np.asarray(v)
    if v.shape != (mesh.n_nodes,):
        raise SizeMismatch(f"{name} has shape {v.shape}, mesh has {mesh.n_nodes} canonical nodes")
    return v


def _octagon_nodes(domain: FundamentalDomain, n: int) -> np.ndarray:
    nodes = np.zeros(1 + 4 * n * (n + 1), dtype=complex)
    for i in range(1, n + 1):
        for k in range(8):
            for j in range(i):
                q = domain.side_point(k, j / i)
                if i == n:
                    nodes[raw_index(i, k, j)] = q
                else:
                    r = math.tanh((i / n) * math.atanh(abs(q)))
                    nodes[raw_index(i, k, j)] = r * q / abs(q)
    return nodes


def _octagon_triangles(n: int) -> np.ndarray:
    tris = []
    for i in range(n):
        for k in range(8):
            for j in range(i + 1):
                tris.append((raw_index(i, k, j), raw_index(i + 1, k, j), raw_index(i + 1, k, j + 1)))
            for j in range(i):
                tris.append((raw_index(i, k, j), raw_index(i + 1, k, j + 1), raw_index(i, k, j + 1)))
    return np.array(tris, dtype=np.int64)


def _identify(domain: FundamentalDomain, nodes: np.ndarray, n: int):
    ident_raw = np.arange(len(nodes))
    maps: List[MoebiusMap] = [MoebiusMap.identity()] * len(nodes)
    for k, g in domain.vertex_maps().items():
        r = raw_index(n, k, 0)
        ident_raw[r] = raw_index(n, 0, 0)
        maps[r] = g
    for k in PAIRED_SIDES:
        g = domain.pairings[k]
        for j in range(1, n):
            src = raw_index(n, k, j)
            ident_raw[src] = raw_index(n, (k + 2) % 8, n - j)
            maps[src] = g

    for r in range(len(nodes)):
        miss = abs(maps[r](nodes[r]) - nodes[ident_raw[r]])
        if miss > SNAP_TOL:
            raise MeshPairingFailure(f"Raw node {r} misses its partner {ident_raw[r]} by {miss:.3e}")

    canonical_raw = np.unique(ident_raw)
    ident = np.searchsorted(canonical_raw, ident_raw)
    return ident, canonical_raw, tuple(maps)


def _corner_cotangents(p: np.ndarray) -> np.ndarray:
    """cot of the Euclidean angle at each corner of each triangle, shape (F, 3)."""
    cots = np.empty(p.shape, dtype=float)
    for c in range(3):
        e1 = p[:, (c + 1) % 3] - p[:, c]
        e2 = p[:, (c + 2) % 3] - p[:, c]
        prod = np.conj(e1) * e2
        if np.any(prod.imag <= 0):
            raise MeshPairingFailure("Mesh contains degenerate or clockwise triangles")
        cots[:, c] = prod.real / prod.imag
    return cots


def assemble_stiffness(nodes: np.ndarray, triangles: np.ndarray, ident: np.ndarray, n_nodes: int) -> sp.csr_matrix:
    """Euclidean cotangent stiffness, entries accumulated onto canonical nodes."""
    cots = _corner_cotangents(nodes[triangles])
    rows, cols, vals = [], [], []
    for c in range(3):
        a = ident[triangles[:, (c + 1) % 3]]
        b = ident[triangles[:, (c + 2) % 3]]
        w = 0.5 * cots[:, c]
        rows += [a, b, a, b]
        cols += [b, a, a, b]
        vals += [-w, -w, w, w]
    S = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_nodes, n_nodes))
    S = S.tocsr()
    S.sum_duplicates()
    return S


def assemble_mass(nodes: np.ndarray, triangles: np.ndarray, ident: np.ndarray, n_nodes: int) -> np.ndarray:
    """Lumped hyperbolic area: a third of each geodesic triangle to each corner."""
    areas = np.array([disc_triangle_area(*nodes[t]) for t in triangles])
    mass = np.zeros(n_nodes)
    for c in range(3):
        np.add.at(mass, ident[triangles[:, c]], areas / 3.0)
    return mass


def _raw_adjacency(triangles: np.ndarray, n_raw: int) -> List[set]:
    adj: List[set] = [set() for _ in range(n_raw)]
    for a, b, c in triangles:
        adj[a].update((b, c))
        adj[b].update((a, c))
        adj[c].update((a, b))
    return adj


def assemble_chart_derivatives(
    nodes: np.ndarray,
    triangles: np.ndarray,
    ident: np.ndarray,
    canonical_raw: np.ndarray,
    chart_maps: Sequence[MoebiusMap],
) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    """
    d/dz and d^2/dz^2 on canonical nodes by local quadratic least squares.

    Each canonical node collects the two-ring of every raw copy, unfolded into
    its own chart by the copy's pairing map, and fits
    v(z) - v(z0) ~ a dx + b dy + c dx^2/2 + d dx dy + e dy^2/2.
    """
    n_nodes = len(canonical_raw)
    adj = _raw_adjacency(triangles, len(nodes))
    copies: List[List[int]] = [[] for _ in range(n_nodes)]
    for r, c in enumerate(ident):
        copies[c].append(r)

    ops = {key: ([], [], []) for key in ("dx", "dy", "dxx", "dxy", "dyy")}
    for c in range(n_nodes):
        z0 = nodes[canonical_raw[c]]
        seen = set()
        cols, offsets = [], []
        for r in copies[c]:
            g = chart_maps[r]
            ring = set(adj[r])
            for q in list(ring):
                ring.update(adj[q])
            ring.discard(r)
            for q in sorted(ring):
                w = complex(g(nodes[q])) - z0
                if abs(w) < 1e-12:
                    continue
                key = (int(ident[q]), round(w.real, 9), round(w.imag, 9))
                if key in seen:
                    continue
                seen.add(key)
                cols.append(int(ident[q]))
                offsets.append(w)
        w = np.array(offsets)
        design = np.column_stack([w.real, w.imag, 0.5 * w.real**2, w.real * w.imag, 0.5 * w.imag**2])
        coef = np.linalg.pinv(design)
        for row, key in enumerate(("dx", "dy", "dxx", "dxy", "dyy")):
            r_idx, c_idx, vals = ops[key]
            r_idx += [c] * (len(cols) + 1)
            c_idx += cols + [c]
            vals += list(coef[row]) + [-coef[row].sum()]

    mats = {key: sp.csr_matrix((v, (r, cc)), shape=(n_nodes, n_nodes)) for key, (r, cc, v) in ops.items()}
    dz = 0.5 * (mats["dx"] - 1j * mats["dy"])
    dzz = 0.25 * (mats["dxx"] - mats["dyy"] - 2j * mats["dxy"])
    return dz.tocsr(), dzz.tocsr()


def build_octagon_surface(subdiv: int) -> SurfaceMesh:
    """Mesh the octagon by `subdiv` hyperbolic rings and assemble all operators."""
    if subdiv < 1:
        raise ValueError(f"subdiv must be >= 1, got {subdiv}")
    logger.info(f"🚀 Building genus-2 octagon surface (subdiv={subdiv})")
    domain = FundamentalDomain.regular_octagon()
    if domain.pairing_residual() > SNAP_TOL:
        raise MeshPairingFailure(f"Side pairings miss their targets by {domain.pairing_residual():.3e}")

    nodes = _octagon_nodes(domain, subdiv)
    triangles = _octagon_triangles(subdiv)
    ident, canonical_raw, maps = _identify(domain, nodes, subdiv)
    n_nodes = len(canonical_raw)
    stiffness = assemble_stiffness(nodes, triangles, ident, n_nodes)
    mass = assemble_mass(nodes, triangles, ident, n_nodes)
    dz, dzz = assemble_chart_derivatives(nodes, triangles, ident, canonical_raw, maps)

    mesh = SurfaceMesh(subdiv, domain, nodes, triangles, ident, canonical_raw, maps, stiffness, mass, dz, dzz)
    logger.info(
        f"✅ Octagon surface ready: {mesh.n_nodes} nodes, {len(triangles)} triangles, "
        f"area {mesh.total_area:.12f} (4π = {4 * math.pi:.12f})"
    )
    return mesh


def euler_characteristic(mesh: SurfaceMesh) -> int:
    """V - E + F of the identified complex; boundary side edges are counted once per pair."""
    edges = set()
    for a, b, c in mesh.triangles:
        for e in ((a, b), (b, c), (c, a)):
            edges.add((min(e), max(e)))
    boundary_start = ring_start(mesh.subdiv)
    boundary = sum(1 for a, b in edges if a >= boundary_start and b >= boundary_start)
    return int(mesh.n_nodes - (len(edges) - boundary // 2) + len(mesh.triangles))


def laplacian(mesh: SurfaceMesh, v: ScalarField) -> ScalarField:
    """Discrete Delta_h v = -M^-1 S v (negative semidefinite)."""
    v = _check_size(mesh, v)
    return -(mesh.stiffness @ v) / mesh.mass


def curvature_of_conformal(mesh: SurfaceMesh, v: ScalarField) -> ScalarField:
    """K(e^{2v} h) = e^{-2v} (-Delta_h v - 1)."""
    v = _check_size(mesh, v)
    return np.exp(-2.0 * v) * (-laplacian(mesh, v) + mesh.bg_curvature)


def helmholtz_matrix(mesh: SurfaceMesh, f: ScalarField) -> sp.csc_matrix:
    """M (f id - Delta_h) = diag(m f) + S."""
    f = _check_size(mesh, f, "f")
    return (sp.diags(mesh.mass * f) + mesh.stiffness).tocsc()


def solve_helmholtz(mesh: SurfaceMesh, f: ScalarField, rhs: ScalarField) -> ScalarField:
    """Solve (f id - Delta_h) u = rhs for strictly positive f."""
    f = np.asarray(_check_size(mesh, f, "f"), dtype=float)
    rhs = np.asarray(_check_size(mesh, rhs, "rhs"), dtype=float)
    if f.min() <= 0:
        raise NotPositive(f"Helmholtz coefficient must be positive, min is {f.min():.3e}")

    A = helmholtz_matrix(mesh, f)
    b = mesh.mass * rhs
    scale = max(np.abs(rhs).max(), 1e-300)
    try:
        u = splu(A).solve(b)
    except RuntimeError as e:
        logger.warning(f"⚠️ Sparse LU failed ({e}), falling back to CG")
        u = None
    if u is None or np.abs((A @ u - b) / mesh.mass).max() > HELMHOLTZ_RTOL * scale:
        u, info = cg(A, b, rtol=1e-14, maxiter=20 * mesh.n_nodes)
        if info != 0:
            raise SolverFailure(f"CG did not converge (info={info})")
    return u


def operator_min_eigenvalue(mesh: SurfaceMesh, f: ScalarField) -> float:
    """Smallest eigenvalue of f id - Delta_h in the mass inner product."""
    A = helmholtz_matrix(mesh, f)
    if mesh.n_nodes <= DENSE_EIG_LIMIT:
        return float(eigh(A.toarray(), np.diag(mesh.mass), eigvals_only=True, subset_by_index=[0, 0])[0])
    return float(eigsh(A, k=1, M=sp.diags(mesh.mass).tocsc(), sigma=0.0, return_eigenvectors=False)[0])


def stiffness_spectral_gap(mesh: SurfaceMesh) -> Tuple[float, float]:
    """The two smallest eigenvalues of S x = mu M x; the first is zero, the second positive."""
    if mesh.n_nodes <= DENSE_EIG_LIMIT:
        vals = eigh(mesh.stiffness.toarray(), np.diag(mesh.mass), eigvals_only=True, subset_by_index=[0, 1])
    else:
        vals = np.sort(eigsh(mesh.stiffness.tocsc(), k=2, M=sp.diags(mesh.mass).tocsc(), sigma=-1e-3, return_eigenvectors=False))
    return float(vals[0]), float(vals[1])


@dataclass(frozen=True)
class QDField:
    """Chart coefficients lambda(z) of a quadratic differential, one per raw node."""

    values: np.ndarray
    name: str = "phi"

    def canonical(self, mesh: SurfaceMesh) -> np.ndarray:
        if self.values.shape != (mesh.n_raw,):
            raise SizeMismatch(f"QDField has {self.values.shape} values, mesh has {mesh.n_raw} raw nodes")
        return self.values[mesh.canonical_raw]

    @classmethod
    def from_canonical(cls, mesh: SurfaceMesh, values: np.ndarray, name: str = "phi") -> "QDField":
        """Transport canonical coefficients to every raw copy by lambda_raw = lambda_canon * g'(z_raw)^2."""
        values = np.asarray(_check_size(mesh, values, "QD coefficients"), dtype=complex)
        return cls(values[mesh.ident] * mesh.chart_derivatives() ** 2, name=name)

    @classmethod
    def zero(cls, mesh: SurfaceMesh) -> "QDField":
        return cls(np.zeros(mesh.n_raw, dtype=complex), name="zero")

    def sup_norm(self, mesh: SurfaceMesh) -> float:
        """max over canonical nodes of e^{-2 rho} |lambda|."""
        return float(np.max(np.exp(-2.0 * mesh.rho) * np.abs(self.canonical(mesh))))


def equivariance_residual(field_: Union[QDField, np.ndarray], mesh: SurfaceMesh) -> float:
    """
    Worst identification mismatch over raw nodes.

    A QDField is compared against the (g')^2 cocycle. A real array with one
    value per canonical node is single-valued by construction; with one value
    per raw node, copies are compared with their canonical representative.
    """
    if isinstance(field_, QDField):
        expected = field_.canonical(mesh)[mesh.ident] * mesh.chart_derivatives() ** 2
        return float(np.abs(field_.values - expected).max())
    v = np.asarray(field_)
    if v.shape == (mesh.n_nodes,):
        return 0.0
    if v.shape == (mesh.n_raw,):
        return float(np.abs(v - v[mesh.canonical_raw][mesh.ident]).max())
    raise SizeMismatch(f"Field of shape {v.shape} fits neither {mesh.n_nodes} canonical nor {mesh.n_raw} raw nodes")


def manufactured_qd_field(mesh: SurfaceMesh, sup_norm: float, center: complex = 0j, width: float = 0.6, phase: float = 0.0) -> QDField:
    """
    Equivariant bump-localized quadratic differential with prescribed sup h-norm.

    The canonical coefficient is e^{2 rho} * exp(-(d(z, center)/width)^2) * e^{i phase},
    rescaled so that max e^{-2 rho}|lambda| equals sup_norm.
    """
    z = mesh.positions
    d = 2.0 * np.arctanh(np.abs((z - center) / (1.0 - np.conj(center) * z)))
    bump = np.exp(-((d / width) ** 2))
    coeff = np.exp(2.0 * mesh.rho) * bump * np.exp(1j * phase)
    if bump.max() > 0:
        coeff *= sup_norm / bump.max()
    return QDField.from_canonical(mesh, coeff, name=f"bump({sup_norm})")
