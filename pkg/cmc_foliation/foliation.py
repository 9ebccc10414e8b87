"""
Foliation assembly and the geometric checks on a family of CMC leaves.

Moving a distance r along the normal of a surface with principal curvatures
tanh(mu_1), tanh(mu_2) gives principal curvatures tanh(mu_i + r). Integrating
the pointwise extremes of dH/dr from r = 0 yields the envelopes f_- and f_+;
a leaf of curvature H' sits at signed distance between f_+^-1(H') and
f_-^-1(H') from a leaf of curvature H.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize

from .cmc_solver import (
    MODE_DISC,
    CmcContext,
    ContinuationEntry,
    ContinuationResult,
    SolverConfig,
    leaf_metric,
    newton_solve,
    sample_lattice,
    v_from_u,
)
from .epstein import DEFAULT_FD_STEP, EpsteinSample, Sampler, chart_sampler, fd_geometry
from .errors import CmcError, NonConstantH
from .moebius_h3 import H3Point, hyperbolic_distance

DEFAULT_R_GRID = np.linspace(-3.0, 3.0, 121)
PRINCIPAL_TOL = 1e-4  # |lambda| >= 1 - PRINCIPAL_TOL is flagged
WINDOW_FACTOR = 10.0  # f+- window slack, in units of the FD step
CONSTANCY_FACTOR = 100.0  # sampled H-constancy tolerance, in units of the FD step squared


def equidistant_mean_curvature(mu1: float, mu2: float, r):
    """(tanh(mu1 + r) + tanh(mu2 + r)) / 2."""
    return 0.5 * (np.tanh(mu1 + r) + np.tanh(mu2 + r))


def _equidistant_rate(mu: np.ndarray, r: float) -> np.ndarray:
    """dH_p/dr at r for every row (mu1, mu2) of mu."""
    return 0.5 * (1.0 / np.cosh(mu[:, 0] + r) ** 2 + 1.0 / np.cosh(mu[:, 1] + r) ** 2)


class SampledMonotone:
    """Strictly increasing function known on a grid, evaluated and inverted by PCHIP."""

    def __init__(self, r: np.ndarray, values: np.ndarray):
        r = np.asarray(r, dtype=float)
        values = np.asarray(values, dtype=float)
        if np.any(np.diff(r) <= 0) or np.any(np.diff(values) <= 0):
            raise ValueError("SampledMonotone needs strictly increasing samples")
        self.r = r
        self.values = values
        self._forward = PchipInterpolator(r, values)
        self._inverse = PchipInterpolator(values, r)

    def __call__(self, r):
        return self._forward(r)[()]

    def inverse(self, value):
        value = np.asarray(value, dtype=float)
        if np.any(value < self.values[0]) or np.any(value > self.values[-1]):
            raise ValueError(f"{value} outside the sampled range [{self.values[0]:.6f}, {self.values[-1]:.6f}]")
        return self._inverse(value)[()]


def principal_to_mu(principal: np.ndarray) -> np.ndarray:
    principal = np.asarray(principal, dtype=float).reshape(-1, 2)
    if np.any(np.abs(principal) >= 1.0):
        raise ValueError("Principal curvatures must lie in (-1, 1) to define equidistant flows")
    return np.arctanh(principal)


def f_bounds(
    principal_field: np.ndarray,
    r_grid: Sequence[float] = DEFAULT_R_GRID,
    H: Optional[float] = None,
    tol: float = 1e-6,
) -> Tuple[SampledMonotone, SampledMonotone]:
    """
    f_-(r) = H + int_0^r min_p dH_p/dr,  f_+(r) = H + int_0^r max_p dH_p/dr.

    principal_field holds one row (lambda_1, lambda_2) per sample point of a
    leaf; the leaf must have constant mean curvature within tol.
    """
    principal = np.asarray(principal_field, dtype=float).reshape(-1, 2)
    means = principal.mean(axis=1)
    if H is None:
        H = float(means.mean())
    spread = float(np.abs(means - H).max())
    if spread > tol:
        raise NonConstantH(f"Leaf mean curvature varies by {spread:.3e} around H={H:.6f} (tol {tol:.1e})")
    mu = principal_to_mu(principal)

    r = np.union1d(np.asarray(r_grid, dtype=float), [0.0])
    zero = int(np.searchsorted(r, 0.0))
    curves = []
    for pick in (np.min, np.max):
        rate = lambda s, pick=pick: float(pick(_equidistant_rate(mu, s)))  # noqa: E731
        pieces = np.array([quad(rate, a, b)[0] for a, b in zip(r[:-1], r[1:])])
        integral = np.concatenate([[0.0], np.cumsum(pieces)])
        curves.append(SampledMonotone(r, H + integral - integral[zero]))
    return curves[0], curves[1]


def distance_window(f_minus: SampledMonotone, f_plus: SampledMonotone, H_prime: float) -> Tuple[float, float]:
    """[min, max] of f_+^-1(H') and f_-^-1(H')."""
    a = float(f_plus.inverse(H_prime))
    b = float(f_minus.inverse(H_prime))
    return min(a, b), max(a, b)


@dataclass
class Foliation:
    """Leaves ordered by H, with Epstein samples per leaf in disc mode."""

    entries: List[ContinuationEntry]
    ctx: Optional[CmcContext]
    leaf_samples: List[List[EpsteinSample]] = field(default_factory=list)
    step: float = DEFAULT_FD_STEP

    @property
    def H_values(self) -> np.ndarray:
        return np.array([e.H for e in self.entries])

    @property
    def has_geometry(self) -> bool:
        return bool(self.leaf_samples)

    def sampler(self, index: int) -> Sampler:
        entry = self.entries[index]
        return chart_sampler(self.ctx.f, leaf_metric(self.ctx, entry.H, entry.v))


@dataclass
class FoliationReport:
    monotone: bool = True
    min_leaf_gap: float = 0.0
    principal_range: Tuple[float, float] = (0.0, 0.0)
    fplus_fminus_check: float = 0.0
    intersections: int = 0
    principal_flags: int = 0
    leaf_rows: List[Dict] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def as_dict(self) -> Dict[str, object]:
        return {
            "monotone": self.monotone,
            "min_leaf_gap": self.min_leaf_gap,
            "principal_min": self.principal_range[0],
            "principal_max": self.principal_range[1],
            "fplus_fminus_violation": self.fplus_fminus_check,
            "intersections": self.intersections,
            "principal_flags": self.principal_flags,
            "passed": self.passed,
            "failures": "; ".join(self.failures),
        }


def assemble_foliation(
    result: ContinuationResult,
    ctx: CmcContext,
    sample_radius: float = 0.4,
    sample_points: int = 5,
    step: float = DEFAULT_FD_STEP,
) -> Foliation:
    entries = sorted(result.entries, key=lambda e: e.H)
    fol = Foliation(entries, ctx, [], step)
    if ctx.mode != MODE_DISC:
        logger.info(f"📊 Foliation of {len(entries)} leaves (closed surface: u-monotonicity only)")
        return fol
    lattice = sample_lattice(sample_radius, sample_points)
    for i, entry in enumerate(entries):
        sampler = fol.sampler(i)
        fol.leaf_samples.append([fd_geometry(sampler, z, step) for z in lattice])
    logger.info(f"📊 Foliation of {len(entries)} leaves sampled on {len(lattice)} points each")
    return fol


def leaf_signed_distance(
    sampler: Sampler,
    point: H3Point,
    z0: complex,
    step: float = DEFAULT_FD_STEP,
) -> Tuple[float, complex]:
    """
    Signed hyperbolic distance from `point` to the leaf z -> sampler(z).

    The nearest leaf point is found by Nelder-Mead on |q - Eps(z)|^2 / (y_q y_E),
    a monotone function of the distance; the sign is positive on the side
    the leaf normal points to. Returns the distance and the foot chart point.
    """
    q = point.as_array()

    def cost(xy: np.ndarray) -> float:
        try:
            e = sampler(complex(xy[0], xy[1])).as_array()
        except CmcError:
            return np.inf
        return float(np.sum((q - e) ** 2) / (q[2] * e[2]))

    res = minimize(cost, [z0.real, z0.imag], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-15, "maxiter": 4000})
    foot = complex(res.x[0], res.x[1])
    sample = fd_geometry(sampler, foot, step)
    dist = hyperbolic_distance(point, sample.point)
    side = float((q - sample.point.as_array()) @ sample.normal)
    return (dist if side >= 0 else -dist), foot


def _u_monotone(entries: Sequence[ContinuationEntry]) -> Tuple[bool, float]:
    """Whether u strictly decreases at every node between consecutive leaves, and the smallest decrease."""
    if len(entries) < 2:
        return True, 0.0
    decreases = [float(np.min(a.u - b.u)) for a, b in zip(entries[:-1], entries[1:])]
    return min(decreases) > 0, min(decreases)


def monotonicity_check(fol: Foliation, tol: Optional[float] = None, h_tol: Optional[float] = None) -> FoliationReport:
    """
    (a) u strictly decreasing in H at every node; in disc mode also
    (b) distances from leaf H' samples to leaf H inside the f_+- window and
    (c) every sample of leaf H' strictly on the H' side of leaf H.

    tol is the allowed window violation (default WINDOW_FACTOR * step) and
    h_tol the allowed spread of sampled mean curvature around each leaf H
    (default CONSTANCY_FACTOR * step**2, the size of the FD error).
    """
    report = FoliationReport()
    entries = fol.entries
    if len(entries) < 2:
        report.failures.append("monotonicity needs at least two leaves")
        return report
    tol = WINDOW_FACTOR * fol.step if tol is None else tol
    h_tol = CONSTANCY_FACTOR * fol.step**2 if h_tol is None else h_tol

    report.monotone, min_decrease = _u_monotone(entries)
    if not report.monotone:
        report.failures.append(f"u not strictly decreasing in H (worst step {min_decrease:.3e})")
    report.leaf_rows = [{"H": entries[0].H, "gap_prev": 0.0}]
    if not fol.has_geometry:
        report.min_leaf_gap = max(min_decrease, 0.0)
        report.leaf_rows += [{"H": e.H, "gap_prev": float(np.min(a.u - e.u))} for a, e in zip(entries[:-1], entries[1:])]
        return report

    gaps = []
    for i in range(1, len(entries)):
        H, H_prime = entries[i - 1].H, entries[i].H
        principal = np.array([s.principal for s in fol.leaf_samples[i - 1]])
        try:
            f_minus, f_plus = f_bounds(principal, H=H, tol=h_tol)
            lo, hi = distance_window(f_minus, f_plus, H_prime)
        except (NonConstantH, ValueError) as e:
            report.failures.append(f"leaf H={H:.6f}: {e}")
            lo, hi = -np.inf, np.inf
        sampler = fol.sampler(i - 1)
        pair_gap = np.inf
        for sample in fol.leaf_samples[i]:
            r, _ = leaf_signed_distance(sampler, sample.point, sample.z, fol.step)
            if r * math.copysign(1.0, H_prime - H) <= 0:
                report.intersections += 1
            violation = max(lo - r, r - hi, 0.0)
            report.fplus_fminus_check = max(report.fplus_fminus_check, violation)
            pair_gap = min(pair_gap, abs(r))
        gaps.append(pair_gap)
        report.leaf_rows.append({"H": H_prime, "gap_prev": pair_gap})

    report.min_leaf_gap = float(min(gaps))
    if report.intersections:
        report.monotone = False
        report.failures.append(f"{report.intersections} leaf samples on the wrong side of their predecessor")
    if report.fplus_fminus_check > tol:
        report.failures.append(f"leaf distances leave the f+- window by {report.fplus_fminus_check:.3e}")
    return report


def principal_curvature_check(fol: Foliation, tol: float = PRINCIPAL_TOL) -> FoliationReport:
    """Global principal-curvature range; samples with |lambda| >= 1 - tol are flagged."""
    report = FoliationReport()
    if not fol.has_geometry:
        report.failures.append("principal curvature check needs sampled leaves (disc mode)")
        return report
    lo, hi = np.inf, -np.inf
    for entry_H, samples in zip(_leaf_labels(fol), fol.leaf_samples):
        lam = np.array([s.principal for s in samples])
        lo, hi = min(lo, lam.min()), max(hi, lam.max())
        flags = int(np.sum(np.abs(lam) >= 1.0 - tol))
        report.principal_flags += flags
        report.leaf_rows.append({"H": entry_H, "min_lambda": float(lam.min()), "max_lambda": float(lam.max())})
    report.principal_range = (float(lo), float(hi))
    if report.principal_flags:
        report.failures.append(f"{report.principal_flags} principal curvatures outside (-1 + {tol}, 1 - {tol})")
    return report


def _leaf_labels(fol: Foliation) -> List[float]:
    if fol.entries:
        return [e.H for e in fol.entries]
    return [float(np.mean([s.mean_curv for s in samples])) for samples in fol.leaf_samples]


def check_foliation(fol: Foliation) -> FoliationReport:
    """monotonicity_check combined with principal_curvature_check (disc mode) and per-leaf residuals."""
    report = monotonicity_check(fol)
    if fol.has_geometry:
        principal = principal_curvature_check(fol)
        report.principal_range = principal.principal_range
        report.principal_flags = principal.principal_flags
        report.failures += principal.failures
        extra = {row["H"]: row for row in principal.leaf_rows}
        for row in report.leaf_rows:
            row.update({k: v for k, v in extra.get(row["H"], {}).items() if k != "H"})
    residuals = {e.H: e.residual_norm for e in fol.entries}
    for row in report.leaf_rows:
        row["max_residual"] = residuals.get(row["H"], float("nan"))
    return report


def shuffled_result(result: ContinuationResult, rng: np.random.Generator) -> ContinuationResult:
    """Permute the leaves among the H labels (a non-trivial permutation), keeping each H."""
    entries = sorted(result.entries, key=lambda e: e.H)
    n = len(entries)
    perm = rng.permutation(n)
    if n > 1 and np.all(perm == np.arange(n)):
        perm = perm[::-1].copy()
    shuffled = []
    for k, entry in enumerate(entries):
        donor = entries[perm[k]]
        shuffled.append(replace(entry, v=v_from_u(entry.H, donor.u)))
    return replace(result, entries=shuffled)


@dataclass
class UniquenessReport:
    H: float
    max_distance: float
    distances: List[float]


def uniqueness_check(
    ctx: CmcContext,
    H: float,
    v_ref: np.ndarray,
    cfg: SolverConfig = SolverConfig(),
    n_seeds: int = 3,
    amplitude: float = 1e-3,
    rng: Optional[np.random.Generator] = None,
) -> UniquenessReport:
    """Re-solve leaf H from perturbed seeds; report sup distances to v_ref."""
    rng = np.random.default_rng(0) if rng is None else rng
    pts = ctx.space.points
    bump = np.clip(1.0 - np.abs(pts) ** 2 / 0.25, 0.0, None) ** 4
    distances = []
    for _ in range(n_seeds):
        c = rng.uniform(-1.0, 1.0, size=3)
        seed = v_ref + amplitude * (c[0] + c[1] * pts.real + c[2] * pts.imag) * bump
        v = newton_solve(H, ctx, seed, cfg).v
        distances.append(float(np.abs(v - v_ref).max()))
    logger.debug(f"Uniqueness at H={H:.4f}: max distance {max(distances):.3e}")
    return UniquenessReport(H, max(distances), distances)
