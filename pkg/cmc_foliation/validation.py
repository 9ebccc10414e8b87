"""
Invariant suite behind `cmc-foliation validate`.

Each group returns InvariantResult rows (measured residual against its
tolerance); run_suite collects them in order. Randomized groups draw from
one numpy Generator so a seed reproduces the table.
"""

import math
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Mapping

import numpy as np
from loguru import logger

from .cmc_solver import (
    SolverConfig,
    anchor_operator,
    closed_surface_context,
    continuation,
    disc_context,
    geometric_mean_curvature_check,
    linearize_G,
    newton_solve,
    residual_G,
)
from .conformal import (
    AnalyticLogDensity,
    Chart,
    ConformalMetric,
    HoloMap,
    QuadDifferential,
    b_tensor,
    pullback_metric,
    schwarzian,
    schwarzian_tensor,
)
from .epstein import (
    chart_sampler,
    epstein_point,
    fd_geometry,
    mean_curvature_formula,
    metric_sampler,
    umbilical_metric,
    visual_defining_residual,
)
from .errors import CmcError, NonEquivariantField, OutOfRange
from .foliation import Foliation, assemble_foliation, check_foliation, leaf_signed_distance, monotonicity_check, shuffled_result
from .moebius_h3 import MoebiusMap
from .surface_mesh import (
    QDField,
    build_octagon_surface,
    curvature_of_conformal,
    equivariance_residual,
    euler_characteristic,
    helmholtz_matrix,
    manufactured_qd_field,
    operator_min_eigenvalue,
    solve_helmholtz,
)

UMBILICAL_H = (-0.9, -0.5, 0.0, 0.5, 0.9)
CROSS_ORACLE_TOL = 1e-4
ORDER_STEPS = (2e-2, 1e-2)
CLOSED_RANGE = (-0.9, 0.9)
CLOSED_LEAVES = 7


@dataclass
class InvariantResult:
    group: str
    name: str
    residual: float
    tolerance: float
    passed: bool
    detail: str = ""

    def as_row(self) -> Dict[str, Any]:
        return {
            "group": self.group,
            "name": self.name,
            "residual": self.residual,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "detail": self.detail,
        }


def _below(group: str, name: str, residual: float, tol: float, detail: str = "") -> InvariantResult:
    residual = float(residual)
    return InvariantResult(group, name, residual, tol, bool(np.isfinite(residual) and residual < tol), detail)


def _at_least(group: str, name: str, value: float, bound: float, detail: str = "") -> InvariantResult:
    value = float(value)
    return InvariantResult(group, name, value, bound, bool(np.isfinite(value) and value >= bound), detail)


def _raises(group: str, name: str, action: Callable[[], Any], error: type) -> InvariantResult:
    try:
        action()
    except error:
        return InvariantResult(group, name, 0.0, 0.0, True, f"{error.__name__} raised")
    except CmcError as e:
        return InvariantResult(group, name, 1.0, 0.0, False, f"{type(e).__name__} instead of {error.__name__}")
    return InvariantResult(group, name, 1.0, 0.0, False, f"{error.__name__} not raised")


def _disc_points(rng: np.random.Generator, n: int, radius: float = 0.6) -> np.ndarray:
    r = radius * np.sqrt(rng.uniform(size=n))
    return r * np.exp(2j * np.pi * rng.uniform(size=n))


# --- groups ---


def schwarzian_suite(params: Mapping[str, Any], rng: np.random.Generator) -> List[InvariantResult]:
    n = params["n_random"]
    group = "schwarzian"
    cocycle, moebius_zero, naturality, pullback, scale, rescale = [], [], [], [], [], []
    flat = ConformalMetric.flat(Chart.disc())
    for _ in range(n):
        eps = rng.uniform(-0.1, 0.1)
        f = HoloMap.cubic(eps)
        m = MoebiusMap.random_disc_automorphism(rng, 0.5)
        g = HoloMap.moebius(m)
        z = _disc_points(rng, 1, 0.5)[0]

        cocycle.append(abs(schwarzian(g.then(f), z) - (schwarzian(f, m(z)) * m.derivative(z) ** 2 + schwarzian(g, z))))
        moebius_zero.append(abs(schwarzian(f.then(g), z) - schwarzian(f, z)) + abs(schwarzian(g, z)))

        coeffs = rng.normal(scale=0.1, size=3) + 1j * rng.normal(scale=0.1, size=3)
        sigma1 = ConformalMetric(Chart.disc(), (AnalyticLogDensity.polynomial_perturbation(coeffs, ()),))
        sigma2 = ConformalMetric.poincare()
        lhs = schwarzian_tensor(pullback_metric(f, sigma1), pullback_metric(f, sigma2), z)
        rhs = schwarzian_tensor(sigma1, sigma2, f(z)) * f.df(z) ** 2
        naturality.append(abs(lhs - rhs))

        pullback.append(abs(schwarzian(f, z) - 2.0 * schwarzian_tensor(flat, pullback_metric(f, flat), z)))

        t = rng.uniform(-1.0, 1.0)
        scale.append(abs(b_tensor(sigma1.scaled(t), z) - b_tensor(sigma1, z)))
        s = rng.uniform(0.1, 1.0)
        rescale.append(abs(schwarzian(f.rescaled(s), z) - s**2 * schwarzian(f, s * z)))

    tol = 1e-9
    return [
        _below(group, "cocycle S(f o g) = (S(f) o g) g'^2 + S(g)", max(cocycle), tol, f"{n} samples"),
        _below(group, "Moebius invariance S(m o f) = S(f), S(m) = 0", max(moebius_zero), tol, f"{n} samples"),
        _below(group, "tensor naturality B(f*s1, f*s2) = f*B(s1, s2)", max(naturality), tol, f"{n} samples"),
        _below(group, "S(f) = 2 B(|dz|^2, f*|dz|^2)", max(pullback), tol, f"{n} samples"),
        _below(group, "B(e^{2t} s) = B(s)", max(scale), tol, f"{n} samples"),
        _below(group, "S(f_s)(z) = s^2 S(f)(sz)", max(rescale), tol, f"{n} samples"),
    ]


def epstein_suite(params: Mapping[str, Any], rng: np.random.Generator) -> List[InvariantResult]:
    group = "epstein"
    step = params["fd_step"]
    rows: List[InvariantResult] = []
    zs = _disc_points(rng, 20, 0.7)
    closed = max(
        max(visual_defining_residual(ConformalMetric.poincare(), z) for z in zs),
        max(visual_defining_residual(ConformalMetric.spherical(), z) for z in zs),
    )
    rows.append(_below(group, "visual metric identity (Poincare, spherical)", closed, 1e-10))
    perturbed = []
    for _ in range(params["n_random"]):
        coeffs = rng.normal(scale=0.1, size=3) + 1j * rng.normal(scale=0.1, size=3)
        radial = rng.normal(scale=0.1, size=2)
        sigma = ConformalMetric.poincare().with_factor(AnalyticLogDensity.polynomial_perturbation(coeffs, radial))
        perturbed.append(visual_defining_residual(sigma, _disc_points(rng, 1, 0.7)[0]))
    rows.append(_below(group, "visual metric identity (perturbed disc metrics)", max(perturbed), 1e-7))

    zero = QuadDifferential.zero(Chart.disc())
    formula_err, oracle_err = [], []
    for H0 in UMBILICAL_H:
        sigma = umbilical_metric(H0)
        for z in (0.1 + 0.2j, -0.3 + 0.1j):
            value = float(mean_curvature_formula(sigma, zero, z))
            formula_err.append(abs(value - H0))
            oracle_err.append(abs(fd_geometry(metric_sampler(sigma), z, step).mean_curv - value))
    rows.append(_below(group, "mean-curvature formula on umbilical leaves", max(formula_err), 1e-12))
    rows.append(_below(group, "formula vs FD oracle (umbilical)", max(oracle_err), CROSS_ORACLE_TOL, f"step {step:g}"))

    f = HoloMap.cubic(params["epsilon"] if params["epsilon"] > 0 else 0.01)
    phi = QuadDifferential.schwarzian_of(f)
    z = 0.3 + 0.2j
    perturbed_err = []
    for H0 in UMBILICAL_H:
        sigma = umbilical_metric(H0)
        value = float(mean_curvature_formula(sigma, phi, z))
        perturbed_err.append(abs(fd_geometry(chart_sampler(f, sigma), z, step).mean_curv - value))
    rows.append(_below(group, f"formula vs FD oracle ({f.name})", max(perturbed_err), CROSS_ORACLE_TOL, f"step {step:g}"))

    sigma = umbilical_metric(0.5)
    target = float(mean_curvature_formula(sigma, phi, z))
    errs = [abs(fd_geometry(chart_sampler(f, sigma), z, h).mean_curv - target) for h in ORDER_STEPS]
    order = math.log(errs[0] / errs[1], ORDER_STEPS[0] / ORDER_STEPS[1]) if errs[1] > 0 else float("inf")
    rows.append(_at_least(group, "FD oracle convergence order", order, 1.8, f"errors {errs[0]:.2e}, {errs[1]:.2e}"))
    return rows


def mesh_suite(params: Mapping[str, Any], rng: np.random.Generator) -> List[InvariantResult]:
    group = "surface_mesh"
    mesh = build_octagon_surface(params["subdiv"])
    rows = [
        _below(group, "Euler characteristic = -2", abs(euler_characteristic(mesh) + 2), 0.5),
        _below(group, "side pairings are isometries of the sides", mesh.domain.pairing_residual(), 1e-10),
        _below(group, "vertex cycle angle sum = 2 pi", abs(mesh.domain.vertex_angle_sum() - 2 * math.pi), 1e-10),
        _below(group, "total area = 4 pi", abs(mesh.total_area - 4 * math.pi), 1e-10),
    ]
    lam = operator_min_eigenvalue(mesh, np.full(mesh.n_nodes, 4.0))
    rows.append(_at_least(group, "min eigenvalue of 4 id - Delta > 0", lam, 1e-12))

    pts = mesh.positions
    u = np.cos(3 * pts.real) * np.exp(pts.imag)
    f = 4.0 + rng.uniform(0.0, 1.0, size=mesh.n_nodes)
    rhs = (helmholtz_matrix(mesh, f) @ u) / mesh.mass
    rows.append(_below(group, "Helmholtz manufactured solution", np.abs(solve_helmholtz(mesh, f, rhs) - u).max(), 1e-9))

    v = 0.3 * np.exp(-(np.abs(pts) ** 2) / 0.1)
    weighted = float(np.sum(mesh.mass * np.exp(2.0 * v) * curvature_of_conformal(mesh, v)))
    rows.append(_below(group, "Gauss-Bonnet sum m e^{2v} K = -4 pi", abs(weighted + 4 * math.pi), 1e-9))

    qd = manufactured_qd_field(mesh, params["phi_sup_norm"] or 0.01)
    rows.append(_below(group, "manufactured QDField equivariance", equivariance_residual(qd, mesh), 1e-6))
    bad = QDField(mesh.nodes.astype(complex), name="re-z")
    rows.append(_raises(group, "non-equivariant QDField rejected", lambda: closed_surface_context(mesh, bad), NonEquivariantField))
    return rows


def solver_suite(params: Mapping[str, Any], rng: np.random.Generator, cfg: SolverConfig) -> List[InvariantResult]:
    group = "cmc_solver"
    ctx0 = disc_context(HoloMap.identity(), params["grid_points"], params["disc_radius"])
    zero = ctx0.zero_field()
    hs = np.concatenate([np.linspace(-1.0, 0.99, 19), [0.99]])
    anchor = max(float(np.abs(residual_G(H, ctx0, zero)).max()) for H in hs)
    rows = [_below(group, "G(H, phi=0, v=0) = 0", anchor, 1e-13, f"{len(hs)} values of H")]

    pts = ctx0.space.points
    w = np.exp(-4.0 * np.abs(pts) ** 2) * np.cos(pts.real)
    ref = anchor_operator(ctx0) @ w
    lin_err = max(
        np.linalg.norm(linearize_G(H, ctx0, zero, cfg.fd_eps).apply(w) - ref) / np.linalg.norm(ref) for H in (-0.5, 0.0, 0.5)
    )
    rows.append(_below(group, "linearization at anchors = 2 (2 id - Delta)", lin_err, 1e-10))

    seed = 0.05 * np.clip(1.0 - np.abs(pts) ** 2 / params["disc_radius"] ** 2, 0.0, None) ** 4 * (1 + rng.uniform(-0.5, 0.5))
    report = newton_solve(0.3, ctx0, seed, cfg)
    rows.append(_below(group, "Newton recovers v = 0 from a perturbed seed", np.abs(report.v).max(), 1e-9, f"{report.iterations} iterations"))
    hist = [r for r in report.history if r > 1e-10]
    if len(hist) >= 3:
        order = math.log(hist[-1] / hist[-2]) / math.log(hist[-2] / hist[-3])
        rows.append(_at_least(group, "Newton convergence order", order, 1.5, f"history {', '.join(f'{r:.1e}' for r in hist)}"))

    fuchsian = continuation((-0.99, 0.99), ctx0, cfg, n_leaves=5)
    dev = max(float(np.abs(e.u + math.atanh(e.H)).max()) for e in fuchsian.entries)
    rows.append(_below(group, "phi = 0 continuation gives u = -artanh H", dev, 1e-10))

    rows.append(_raises(group, "H = 1 rejected", lambda: newton_solve(1.0, ctx0, zero, cfg), OutOfRange))
    rows.append(_raises(group, "H = -1 rejected by continuation", lambda: continuation((-1.0, 0.5), ctx0, cfg), OutOfRange))
    return rows


def foliation_suite(params: Mapping[str, Any], rng: np.random.Generator, cfg: SolverConfig) -> List[InvariantResult]:
    group = "foliation"
    f = HoloMap.cubic(params["epsilon"])
    ctx = disc_context(f, params["grid_points"], params["disc_radius"])
    result = continuation((params["h_lo"], params["h_hi"]), ctx, cfg, n_leaves=params["n_leaves"])
    rows = [_below(group, f"small-phi continuation residuals ({f.name})", result.max_residual(), cfg.newton_tol * (1 + 1e-9))]

    leaf = result.entries[len(result.entries) // 2]
    geo = geometric_mean_curvature_check(ctx, leaf.H, leaf.u, params["fd_step"], params["sample_radius"], params["sample_points"])
    rows.append(_below(group, f"leaf H={leaf.H:.3f} geometric mean curvature", geo.max_deviation, CROSS_ORACLE_TOL))

    fol = assemble_foliation(result, ctx, params["sample_radius"], params["sample_points"], params["fd_step"])
    report = check_foliation(fol)
    rows.append(
        InvariantResult(
            group,
            "monotone foliation (u, window, disjointness, principal curvatures)",
            float(len(report.failures)),
            0.0,
            report.passed,
            "; ".join(report.failures) or f"min gap {report.min_leaf_gap:.3e}",
        )
    )

    gaps = []
    for H, H2 in ((-0.5, 0.0), (0.0, 0.5), (0.2, 0.7)):
        q = epstein_point(umbilical_metric(H2), 0.1 + 0.1j)
        d, _ = leaf_signed_distance(metric_sampler(umbilical_metric(H)), q, 0.1 + 0.1j)
        gaps.append(abs(abs(d) - abs(math.atanh(H) - math.atanh(H2))))
    rows.append(_below(group, "Fuchsian leaf gaps = |artanh H - artanh H'|", max(gaps), 1e-6))

    shuffled = monotonicity_check(Foliation(shuffled_result(result, rng).entries, ctx))
    rows.append(InvariantResult(group, "shuffled foliation flagged non-monotone", 0.0, 0.0, not shuffled.monotone))

    mesh = build_octagon_surface(params["subdiv"])
    closed = closed_surface_context(mesh, manufactured_qd_field(mesh, params["phi_sup_norm"] or 0.01))
    family = continuation(CLOSED_RANGE, closed, cfg, n_leaves=CLOSED_LEAVES)
    rows.append(_below(group, f"closed-surface continuation residuals (subdiv {mesh.subdiv})", family.max_residual(), cfg.newton_tol * (1 + 1e-9)))
    closed_report = monotonicity_check(Foliation(family.entries, closed))
    rows.append(
        InvariantResult(
            group,
            "closed-surface leaves decrease in u",
            float(len(closed_report.failures)),
            0.0,
            closed_report.passed,
            "; ".join(closed_report.failures) or f"min decrease {closed_report.min_leaf_gap:.3e}",
        )
    )
    return rows


def run_suite(params: Mapping[str, Any], seed: int, cfg: SolverConfig) -> List[InvariantResult]:
    rng = np.random.default_rng(seed)
    results: List[InvariantResult] = []
    groups = (
        ("schwarzian", lambda: schwarzian_suite(params, rng)),
        ("epstein", lambda: epstein_suite(params, rng)),
        ("surface_mesh", lambda: mesh_suite(params, rng)),
        ("cmc_solver", lambda: solver_suite(params, rng, cfg)),
        ("foliation", lambda: foliation_suite(params, rng, cfg)),
    )
    for name, run in groups:
        start = time.perf_counter()
        try:
            rows = run()
        except CmcError as e:
            logger.error(f"❌ Group {name} aborted: {type(e).__name__}: {e}")
            rows = [InvariantResult(name, "group completed", 1.0, 0.0, False, f"{type(e).__name__}: {e}")]
        failed = sum(not r.passed for r in rows)
        status = "✅" if not failed else "❌"
        logger.info(f"{status} {name}: {len(rows) - failed}/{len(rows)} passed in {time.perf_counter() - start:.1f}s")
        results.extend(rows)
    return results


def format_table(results: List[InvariantResult]) -> str:
    width = max((len(r.name) for r in results), default=10)
    lines = [f"{'group':<13} {'invariant':<{width}} {'residual':>11} {'tol':>9}  status"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.group:<13} {r.name:<{width}} {r.residual:>11.3e} {r.tolerance:>9.1e}  {status}")
    return "\n".join(lines)
