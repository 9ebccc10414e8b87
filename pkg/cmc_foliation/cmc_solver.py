"""
Constant-mean-curvature equation for Epstein surfaces and its continuation in H.

Unknown: the conformal factor v of tau = e^{2v} h, h the Poincaré metric. The
renormalized residual is

    G(H, v) = 1 - H - 2H K(tau) + (-1 - H) (K(tau)^2 - 16 ||B(tau) - phi/2||_tau^2)

and the Epstein surface of sigma = e^{2u} h with u = v - (1/2) log((1+H)/(1-H))
has constant mean curvature H exactly where G vanishes. v = 0 solves G = 0 for
phi = 0 at every H, and for every phi at the end H = -1.

Two discretizations share one FieldSpace interface (nodes, lumped mass,
symmetric stiffness S with Delta_h = -M^-1 S, chart derivatives d/dz, d^2/dz^2):
  * disc: a uniform grid on the disc of radius disc_radius with 4th-order
    differences and v = 0 outside; the developing map f is an explicit HoloMap
    and phi = S(f)
  * closed_surface: the genus-2 octagon mesh with an equivariant QDField
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import psutil
import scipy.sparse as sp
from loguru import logger
from scipy.sparse.linalg import LinearOperator, gmres, splu

from .conformal import ConformalMetric, GridLogDensity, HoloMap, QuadDifferential, fd4_operators, schwarzian
from .epstein import DEFAULT_FD_STEP, chart_sampler, fd_geometry, mean_curvature_from_invariants
from .errors import (
    ConfigError,
    ContinuationStalled,
    NewtonDiverged,
    NonEquivariantField,
    OutOfRange,
    SingularLinearization,
)
from .surface_mesh import QD_EQUIVARIANCE_TOL, QDField, SurfaceMesh, equivariance_residual

MODE_DISC = "disc"
MODE_CLOSED = "closed_surface"

END_SWITCH = 0.9  # beyond |H| > END_SWITCH continuation steps in sqrt(1 -+ H)
MIN_DAMPING_STEP = 1.0 / 1024.0
PHI_RAMP = (0.25, 0.5, 0.75, 1.0)
GROWTH = 1.5


@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-11  # mass-weighted L2 norm of G
    max_newton: int = 25
    h_step: float = 0.05
    h_step_min: float = 1e-4
    use_t_param: bool = True
    damping: float = 0.5
    fd_eps: float = 1e-6  # central-difference step of the B-term derivative
    gmres_rtol: float = 1e-12

    def __post_init__(self):
        for name in ("newton_tol", "h_step", "h_step_min", "fd_eps", "gmres_rtol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_newton < 1:
            raise ConfigError(f"max_newton must be >= 1, got {self.max_newton}")
        if not self.h_step_min < self.h_step:
            raise ConfigError(f"h_step_min ({self.h_step_min}) must be below h_step ({self.h_step})")
        if not 0 < self.damping < 1:
            raise ConfigError(f"damping must lie in (0, 1), got {self.damping}")


@dataclass(frozen=True)
class FieldSpace:
    """Nodes, lumped mass and differential operators of one discretization."""

    points: np.ndarray
    mass: np.ndarray
    stiffness: sp.csr_matrix
    dz: sp.csr_matrix
    dzz: sp.csr_matrix

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def rho(self) -> np.ndarray:
        return math.log(2.0) - np.log1p(-np.abs(self.points) ** 2)

    @property
    def rho_z(self) -> np.ndarray:
        return np.conj(self.points) / (1.0 - np.abs(self.points) ** 2)

    def laplacian(self, v: np.ndarray) -> np.ndarray:
        return -(self.stiffness @ v) / self.mass

    def laplacian_matrix(self) -> sp.csr_matrix:
        return (-sp.diags(1.0 / self.mass) @ self.stiffness).tocsr()

    def l2_norm(self, g: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self.mass * g**2)))


@dataclass(frozen=True)
class DiscGrid:
    """Uniform grid on [-L, L]^2 whose unknowns are the nodes with |z| <= radius."""

    x: np.ndarray
    radius: float
    mask: np.ndarray

    @property
    def spacing(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def points(self) -> np.ndarray:
        xx, yy = np.meshgrid(self.x, self.x)
        return (xx + 1j * yy)[self.mask]

    def embed(self, v: np.ndarray) -> np.ndarray:
        """Full (ny, nx) array with v on the mask and zero elsewhere."""
        full = np.zeros(self.mask.shape)
        full[self.mask] = v
        return full

    @classmethod
    def build(cls, grid_points: int, radius: float) -> "DiscGrid":
        if grid_points < 15:
            raise ConfigError(f"grid_points must be >= 15, got {grid_points}")
        if not 0 < radius < 1:
            raise ConfigError(f"disc_radius must lie in (0, 1), got {radius}")
        half = radius * (grid_points - 1) / (grid_points - 7)  # three spare cells beyond the disc
        x = np.linspace(-half, half, grid_points)
        xx, yy = np.meshgrid(x, x)
        return cls(x, float(radius), np.abs(xx + 1j * yy) <= radius)


@dataclass(frozen=True)
class CmcContext:
    mode: str
    space: FieldSpace
    phi: np.ndarray
    f: Optional[HoloMap] = None
    grid: Optional[DiscGrid] = None
    mesh: Optional[SurfaceMesh] = None
    qd: Optional[QDField] = None
    phi_scale: float = 1.0
    h: ConformalMetric = field(default_factory=ConformalMetric.poincare)

    @property
    def phi_dev(self) -> QuadDifferential:
        if self.mode != MODE_DISC:
            raise ValueError("phi_dev is only defined in disc mode")
        return QuadDifferential.schwarzian_of(self.f)

    def zero_field(self) -> np.ndarray:
        return np.zeros(self.space.size)

    def with_phi_scale(self, s: float) -> "CmcContext":
        """Same context with phi scaled by s; in disc mode through the dilation homotopy of f."""
        if self.mode == MODE_DISC:
            f_s = self.f.rescaled(s)
            return replace(self, f=f_s, phi=np.asarray(schwarzian(f_s, self.space.points), dtype=complex), phi_scale=s)
        return replace(self, phi=self.qd.canonical(self.mesh) * s, qd=QDField(self.qd.values * s, self.qd.name), phi_scale=s)

    def describe(self) -> str:
        if self.mode == MODE_DISC:
            return f"disc(f={self.f.name}, nodes={self.space.size}, radius={self.grid.radius})"
        return f"closed_surface(subdiv={self.mesh.subdiv}, nodes={self.space.size}, phi={self.qd.name})"


def disc_context(f: HoloMap, grid_points: int = 65, disc_radius: float = 0.9) -> CmcContext:
    grid = DiscGrid.build(grid_points, disc_radius)
    n = len(grid.x)
    h = grid.spacing
    ops = fd4_operators(n, n, h, h)
    keep = np.flatnonzero(grid.mask.ravel())

    def restrict(m: sp.csr_matrix) -> sp.csr_matrix:
        return m[keep][:, keep].tocsr()

    points = grid.points
    rho = math.log(2.0) - np.log1p(-np.abs(points) ** 2)
    stiffness = restrict(-(h**2) * (ops["dxx"] + ops["dyy"]))
    dz = restrict(0.5 * (ops["dx"] - 1j * ops["dy"]))
    dzz = restrict(0.25 * (ops["dxx"] - ops["dyy"] - 2j * ops["dxy"]))
    space = FieldSpace(points, np.exp(2.0 * rho) * h**2, stiffness, dz, dzz)
    phi = np.asarray(schwarzian(f, points), dtype=complex)
    logger.debug(f"Disc context: {space.size} unknowns, spacing {h:.4f}, f={f.name}")
    return CmcContext(MODE_DISC, space, phi, f=f, grid=grid)


def closed_surface_context(mesh: SurfaceMesh, qd: QDField, tol: float = QD_EQUIVARIANCE_TOL) -> CmcContext:
    residual = equivariance_residual(qd, mesh)
    if residual > tol:
        raise NonEquivariantField(f"QDField '{qd.name}' violates the pairing cocycle by {residual:.3e} (tol {tol:.1e})")
    space = FieldSpace(mesh.positions, mesh.mass, mesh.stiffness, mesh.dz, mesh.dzz)
    return CmcContext(MODE_CLOSED, space, qd.canonical(mesh), mesh=mesh, qd=qd)


# --- change of variables ---


def _log_ratio(H: float) -> float:
    if not -1.0 < H < 1.0:
        raise OutOfRange(f"H must lie in (-1, 1), got {H}")
    return 0.5 * math.log((1.0 + H) / (1.0 - H))


def u_from_v(H: float, v: np.ndarray) -> np.ndarray:
    return np.asarray(v) - _log_ratio(H)


def v_from_u(H: float, u: np.ndarray) -> np.ndarray:
    return np.asarray(u) + _log_ratio(H)


# --- residual ---


@dataclass(frozen=True)
class MetricTerms:
    """K(e^{2w} h), B(e^{2w} h) and ||B - phi/2||^2 at the solver nodes."""

    K: np.ndarray
    B: np.ndarray
    bnorm2: np.ndarray


def metric_terms(ctx: CmcContext, w: np.ndarray) -> MetricTerms:
    space = ctx.space
    w = np.asarray(w, dtype=float)
    K = np.exp(-2.0 * w) * (-space.laplacian(w) - 1.0)
    w_z = space.dz @ w
    B = space.dzz @ w - 2.0 * space.rho_z * w_z - w_z**2
    bnorm2 = (np.exp(-2.0 * (space.rho + w)) * np.abs(B - 0.5 * ctx.phi)) ** 2
    return MetricTerms(K, B, bnorm2)


def _check_h(H: float) -> None:
    if not -1.0 <= H <= 1.0:
        raise OutOfRange(f"H must lie in [-1, 1], got {H}")


def residual_G(H: float, ctx: CmcContext, v: np.ndarray) -> np.ndarray:
    _check_h(H)
    t = metric_terms(ctx, v)
    return 1.0 - H - 2.0 * H * t.K + (-1.0 - H) * (t.K**2 - 16.0 * t.bnorm2)


def mean_curvature_residual(H: float, ctx: CmcContext, u: np.ndarray) -> np.ndarray:
    """
    H_formula(e^{2u} h, phi) - H at the solver nodes.

    The constant shift between u and v is applied to the invariants
    (K scales by s = (1+H)/(1-H), ||B - phi/2||^2 by s^2) so the disc
    operators only ever see the zero-extended v.
    """
    s = (1.0 + H) / (1.0 - H)
    t = metric_terms(ctx, v_from_u(H, u))
    return mean_curvature_from_invariants(s * t.K, s * s * t.bnorm2) - H


# --- linearization ---


@dataclass
class GLinearization:
    """
    dG at (H, v): exact curvature part plus a central-difference B-term.

    dG/dK = -2H - 2(1+H) K and dK[w] = e^{-2v} (-Delta w) - 2 K w.
    """

    H: float
    ctx: CmcContext
    v: np.ndarray
    curvature_part: sp.csc_matrix
    eps: float

    def _quadratic_term(self, w: np.ndarray) -> np.ndarray:
        return 16.0 * (1.0 + self.H) * metric_terms(self.ctx, w).bnorm2

    def b_term(self, w: np.ndarray) -> np.ndarray:
        scale = float(np.abs(w).max())
        if scale == 0.0 or self.H == -1.0:
            return np.zeros_like(self.v)
        w_hat = w / scale
        plus = self._quadratic_term(self.v + self.eps * w_hat)
        minus = self._quadratic_term(self.v - self.eps * w_hat)
        return scale * (plus - minus) / (2.0 * self.eps)

    def apply(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return self.curvature_part @ w + self.b_term(w)

    def as_operator(self) -> LinearOperator:
        n = len(self.v)
        return LinearOperator((n, n), matvec=self.apply, dtype=float)

    def solve(self, rhs: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
        try:
            lu = splu(self.curvature_part)
        except RuntimeError as e:
            raise SingularLinearization(f"Curvature part is singular at H={self.H}: {e}") from e
        n = len(self.v)
        precond = LinearOperator((n, n), matvec=lu.solve, dtype=float)
        x, info = gmres(self.as_operator(), rhs, x0=lu.solve(rhs), M=precond, rtol=rtol, atol=0.0, restart=50, maxiter=20)
        rel = np.linalg.norm(self.apply(x) - rhs) / max(np.linalg.norm(rhs), 1e-300)
        if not np.all(np.isfinite(x)) or (info != 0 and rel > 1e-8):
            raise SingularLinearization(f"GMRES stagnated at H={self.H} (info={info}, relative residual {rel:.2e})")
        return x


def linearize_G(H: float, ctx: CmcContext, v: np.ndarray, eps: float = 1e-6) -> GLinearization:
    _check_h(H)
    space = ctx.space
    v = np.asarray(v, dtype=float)
    K = metric_terms(ctx, v).K
    dG_dK = -2.0 * H - 2.0 * (1.0 + H) * K
    dK = sp.diags(np.exp(-2.0 * v)) @ (-space.laplacian_matrix()) - sp.diags(2.0 * K)
    return GLinearization(H, ctx, v, (sp.diags(dG_dK) @ dK).tocsc(), eps)


def anchor_operator(ctx: CmcContext) -> sp.csr_matrix:
    """2 (2 id - Delta_h): the linearization at (H, phi = 0, v = 0) for every H."""
    return (4.0 * sp.identity(ctx.space.size) - 2.0 * ctx.space.laplacian_matrix()).tocsr()


# --- Newton ---


@dataclass
class NewtonReport:
    v: np.ndarray
    H: float
    iterations: int
    history: List[float]
    sup_history: List[float]

    @property
    def residual_norm(self) -> float:
        return self.history[-1]

    @property
    def residual_sup(self) -> float:
        return self.sup_history[-1]


def newton_solve(H: float, ctx: CmcContext, v_init: np.ndarray, cfg: SolverConfig = SolverConfig()) -> NewtonReport:
    """Damped Newton on G(H, .) = 0 from v_init; |H| < 1."""
    if not -1.0 < H < 1.0:
        raise OutOfRange(f"newton_solve needs H in (-1, 1), got {H}")
    space = ctx.space
    v = np.array(v_init, dtype=float)
    g = residual_G(H, ctx, v)
    r = space.l2_norm(g)
    history, sup_history = [r], [float(np.abs(g).max())]
    iterations = 0

    while r >= cfg.newton_tol:
        if iterations >= cfg.max_newton:
            raise NewtonDiverged(f"Newton did not reach {cfg.newton_tol:.1e} in {cfg.max_newton} iterations at H={H}", H, history)
        delta = linearize_G(H, ctx, v, cfg.fd_eps).solve(-g, cfg.gmres_rtol)
        alpha = 1.0
        while True:
            candidate = v + alpha * delta
            g_new = residual_G(H, ctx, candidate)
            r_new = space.l2_norm(g_new)
            if np.isfinite(r_new) and r_new < r:
                break
            alpha *= cfg.damping
            if alpha < MIN_DAMPING_STEP:
                raise NewtonDiverged(f"Residual did not decrease under full damping at H={H} (|G|={r:.3e})", H, history)
            logger.debug(f"⚠️ Damping Newton step at H={H:.6f} to {alpha:.4f}")
        v, g, r = candidate, g_new, r_new
        iterations += 1
        history.append(r)
        sup_history.append(float(np.abs(g).max()))
        logger.debug(f"Newton H={H:.6f} it={iterations} |G|_L2={r:.3e} |G|_sup={sup_history[-1]:.3e}")

    return NewtonReport(v, H, iterations, history, sup_history)


# --- continuation ---


@dataclass
class ContinuationEntry:
    H: float
    v: np.ndarray
    residual_norm: float
    residual_sup: float
    newton_iters: int
    branch: str = "end"

    @property
    def u(self) -> np.ndarray:
        return u_from_v(self.H, self.v)


@dataclass
class ContinuationResult:
    entries: List[ContinuationEntry]
    anchors: str
    steps: List[Dict] = field(default_factory=list)
    cross_check: Optional[float] = None
    fuchsian_entries: List[ContinuationEntry] = field(default_factory=list)
    peak_rss_mb: float = 0.0

    @property
    def H_values(self) -> np.ndarray:
        return np.array([e.H for e in self.entries])

    def max_residual(self) -> float:
        return max((e.residual_norm for e in self.entries), default=0.0)


def _rss_mb() -> float:
    return psutil.Process().memory_info().rss / 1024 / 1024


def _advance(H: float, step: float, direction: int, cfg: SolverConfig) -> float:
    """One step of size `step` in the continuation parameter: sqrt(1+H), sqrt(1-H) near the ends, else H."""
    if cfg.use_t_param and (H < -END_SWITCH or (H == -END_SWITCH and direction < 0)):
        t = math.sqrt(1.0 + H) + direction * step
        return t * t - 1.0 if t > 0 else -1.0
    if cfg.use_t_param and (H > END_SWITCH or (H == END_SWITCH and direction > 0)):
        s = math.sqrt(1.0 - H) - direction * step
        return 1.0 - s * s if s > 0 else 1.0
    return H + direction * step


class _Marcher:
    """Predictor-corrector march along one branch with step halving and growth."""

    def __init__(self, ctx: CmcContext, cfg: SolverConfig, branch: str, result: ContinuationResult):
        self.ctx = ctx
        self.cfg = cfg
        self.branch = branch
        self.result = result

    def march(self, H: float, v: np.ndarray, targets: Sequence[float]) -> Tuple[List[ContinuationEntry], float, np.ndarray]:
        cfg = self.cfg
        entries: List[ContinuationEntry] = []
        step = cfg.h_step
        for target in targets:
            direction = 1 if target >= H else -1
            while True:
                proposal = _advance(H, step, direction, cfg)
                H_next = min(proposal, target) if direction > 0 else max(proposal, target)
                try:
                    report = newton_solve(H_next, self.ctx, v, cfg)
                except (NewtonDiverged, SingularLinearization) as e:
                    self._log_step(H_next, step, None, "failed")
                    step *= 0.5
                    logger.warning(f"⚠️ {self.branch} branch: step to H={H_next:.6f} failed ({e}); step -> {step:.2e}")
                    if step < cfg.h_step_min:
                        history = getattr(e, "history", [])
                        raise ContinuationStalled(
                            f"Continuation stalled near H={H_next:.6f} on the {self.branch} branch (step {step:.2e})",
                            H_next,
                            history,
                        ) from e
                    continue
                self._log_step(H_next, step, report, "ok")
                H, v = H_next, report.v
                step = min(step * GROWTH, cfg.h_step)
                if H == target:
                    entries.append(
                        ContinuationEntry(H, v.copy(), report.residual_norm, report.residual_sup, report.iterations, self.branch)
                    )
                    rss = _rss_mb()
                    self.result.peak_rss_mb = max(self.result.peak_rss_mb, rss)
                    logger.debug(f"💾 Leaf H={H:.6f} stored, RSS {rss:.1f} MB")
                    break
        return entries, H, v

    def _log_step(self, H: float, step: float, report: Optional[NewtonReport], status: str) -> None:
        record = {"branch": self.branch, "H": H, "step": step, "status": status}
        if report is not None:
            record.update(
                {"iters": report.iterations, "residual": report.residual_norm, "residual_sup": report.residual_sup}
            )
        self.result.steps.append(record)


def continuation(
    h_range: Tuple[float, float],
    ctx: CmcContext,
    cfg: SolverConfig = SolverConfig(),
    n_leaves: int = 10,
    targets: Optional[Sequence[float]] = None,
    cross_check: bool = False,
    anchor_h: float = 0.0,
) -> ContinuationResult:
    """
    Solve at every requested H in h_range, marching from the end anchor (H = -1, v = 0).

    With cross_check the same leaves are also reached from the Fuchsian anchor
    (anchor_h, v = 0, phi ramped up in four steps) and the largest sup-norm
    difference between the two branches is recorded.
    """
    lo, hi = h_range
    if not -1.0 < lo <= hi < 1.0:
        raise OutOfRange(f"Continuation range must satisfy -1 < lo <= hi < 1, got [{lo}, {hi}]")
    if targets is None:
        if n_leaves < 1:
            raise ConfigError(f"n_leaves must be >= 1, got {n_leaves}")
        targets = np.linspace(lo, hi, n_leaves) if n_leaves > 1 else np.array([lo])
    targets = sorted(float(t) for t in targets)
    if any(not lo <= t <= hi for t in targets) or len(set(targets)) != len(targets):
        raise OutOfRange("Continuation targets must be distinct and inside the range")

    result = ContinuationResult([], anchors="end(H=-1, v=0)")
    logger.info(f"🚀 Continuation over [{lo}, {hi}] with {len(targets)} leaves on {ctx.describe()}")
    entries, _, _ = _Marcher(ctx, cfg, "end", result).march(-1.0, ctx.zero_field(), targets)
    result.entries = entries

    if cross_check:
        result.anchors += f" + fuchsian(H={anchor_h}, v=0, phi ramp {PHI_RAMP})"
        result.fuchsian_entries = _fuchsian_branch(ctx, cfg, anchor_h, targets, result)
        by_h = {e.H: e for e in result.fuchsian_entries}
        mismatch = [float(np.abs(e.v - by_h[e.H].v).max()) for e in entries if e.H in by_h]
        result.cross_check = max(mismatch, default=0.0)
        logger.info(f"📊 Branch cross-check: max |v_end - v_fuchsian| = {result.cross_check:.3e}")

    logger.info(f"✅ Continuation done: {len(entries)} leaves, max residual {result.max_residual():.3e}")
    return result


def _fuchsian_branch(
    ctx: CmcContext, cfg: SolverConfig, anchor_h: float, targets: Sequence[float], result: ContinuationResult
) -> List[ContinuationEntry]:
    if not -1.0 < anchor_h < 1.0:
        raise OutOfRange(f"anchor_h must lie in (-1, 1), got {anchor_h}")
    logger.info(f"🚀 Fuchsian branch from H={anchor_h} with phi ramp {PHI_RAMP}")
    v = ctx.zero_field()
    for s in PHI_RAMP:
        report = newton_solve(anchor_h, ctx.with_phi_scale(s), v, cfg)
        v = report.v
        result.steps.append(
            {"branch": "fuchsian-ramp", "H": anchor_h, "phi_scale": s, "iters": report.iterations, "residual": report.residual_norm, "status": "ok"}
        )
    marcher = _Marcher(ctx, cfg, "fuchsian", result)
    above = [t for t in targets if t >= anchor_h]
    below = sorted((t for t in targets if t < anchor_h), reverse=True)
    up, _, _ = marcher.march(anchor_h, v, above)
    down, _, _ = marcher.march(anchor_h, v, below)
    return sorted(up + down, key=lambda e: e.H)


# --- geometry of solved leaves ---


def leaf_metric(ctx: CmcContext, H: float, v: np.ndarray) -> ConformalMetric:
    """e^{2u} h in disc mode with u = v - (1/2) log((1+H)/(1-H)), splined off the nodes (quintic)."""
    if ctx.mode != MODE_DISC:
        raise ValueError("Leaf metrics off the nodes are only available in disc mode")
    full = ctx.grid.embed(np.asarray(v, dtype=float)) - _log_ratio(H)
    return ctx.h.with_factor(GridLogDensity(ctx.grid.x, ctx.grid.x, full, interp="quintic"))


@dataclass
class GeometricCheck:
    H: float
    max_deviation: float
    samples: List = field(default_factory=list)


def sample_lattice(radius: float, n: int) -> np.ndarray:
    xs = np.linspace(-radius, radius, n)
    xx, yy = np.meshgrid(xs, xs)
    return (xx + 1j * yy).ravel()


def geometric_mean_curvature_check(
    ctx: CmcContext,
    H: float,
    u: np.ndarray,
    step: float = DEFAULT_FD_STEP,
    sample_radius: float = 0.4,
    sample_points: int = 5,
    richardson: bool = False,
) -> GeometricCheck:
    """max |H_geom - H| over a lattice, H_geom from fd_geometry of z -> Eps_(f, e^{2u} h)(z)."""
    sampler = chart_sampler(ctx.f, leaf_metric(ctx, H, v_from_u(H, u)))
    samples = [fd_geometry(sampler, z, step, richardson) for z in sample_lattice(sample_radius, sample_points)]
    deviation = max(abs(s.mean_curv - H) for s in samples)
    return GeometricCheck(H, float(deviation), samples)


# --- end reparameterization ---


def _node_jets(ctx: CmcContext, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Log-density and z-derivative of e^{2v} h pushed forward by f, plus f and f' at the nodes."""
    space = ctx.space
    lam = space.rho + v
    lam_z = space.rho_z + space.dz @ v
    if ctx.mode == MODE_DISC:
        fz, fp, fpp = ctx.f(space.points), ctx.f.df(space.points), ctx.f.d2f(space.points)
    else:
        fz, fp, fpp = space.points, np.ones(space.size, complex), np.zeros(space.size, complex)
    eta = lam - np.log(np.abs(fp))
    eta_w = (lam_z - fpp / (2.0 * fp)) / fp
    return eta, eta_w, np.asarray(fz, complex), np.asarray(fp, complex)


def end_map(ctx: CmcContext, t: float, v: np.ndarray) -> np.ndarray:
    """
    Epstein points, one row (x1, x2, y) per node, of the leaf H(t) = t^2 - 1
    with conformal factor v; at t = 0 the boundary inclusion (f(z), 0).
    """
    eta, eta_w, fz, _ = _node_jets(ctx, np.asarray(v, float))
    if t == 0:
        return np.column_stack([fz.real, fz.imag, np.zeros(len(fz))])
    H = t * t - 1.0
    eta = eta - _log_ratio(H)
    denom = np.exp(2.0 * eta) + 4.0 * np.abs(eta_w) ** 2
    x = fz + 4.0 * np.conj(eta_w) / denom
    return np.column_stack([x.real, x.imag, 2.0 * np.exp(eta) / denom])


def end_map_jacobian(ctx: CmcContext, v: np.ndarray) -> np.ndarray:
    """
    d(end_map)/d(x, y, t) at t = 0, shape (n, 3, 3).

    The horizontal block is f' as a real 2x2 matrix and the t-column is
    (0, 0, sqrt(2) e^{-eta}) with eta the pushed-forward log-density.
    """
    eta, _, _, fp = _node_jets(ctx, np.asarray(v, float))
    jac = np.zeros((len(eta), 3, 3))
    jac[:, 0, 0] = fp.real
    jac[:, 0, 1] = -fp.imag
    jac[:, 1, 0] = fp.imag
    jac[:, 1, 1] = fp.real
    jac[:, 2, 2] = math.sqrt(2.0) * np.exp(-eta)
    return jac
