"""
Epstein surfaces of conformal metrics and their finite-difference geometry.

For sigma = e^{2 eta}|dz|^2 the Epstein point over z is
    Eps(z) = (z, 0) + 2 / (e^{2 eta} + 4 |eta_z|^2) * (2 eta_zbar, e^eta)
in upper half-space: the unique point whose visual metric agrees with sigma
at z. Two independent routes to the mean curvature are provided:
  * mean_curvature_formula: algebraic, from K(sigma) and ||B(sigma) - phi/2||
  * fd_geometry: fundamental forms of any sampled surface by central
    differences in the hyperbolic metric
and they are expected to agree to finite-difference accuracy.

Normal convention: N is r_x x r_y normalized to hyperbolic length one and the
second fundamental form is II(X, Y) = -<nabla_X Y, N>. On the equidistant
family e^{2t} * Poincare (t > 0) this normal points up and both routes give
H = -tanh(t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh

from .conformal import (
    DEGENERATE_DERIVATIVE_TOL,
    AnalyticLogDensity,
    ConformalMetric,
    HoloMap,
    QuadDifferential,
    b_tensor,
    curvature,
)
from .errors import DegenerateDerivative, NonImmersion
from .moebius_h3 import H3Point, visual_metric_density

DEFAULT_FD_STEP = 1e-3
GRAM_TOL = 1e-10
FORMULA_DENOMINATOR_TOL = 1e-10

Sampler = Callable[[complex], H3Point]


@dataclass(frozen=True)
class EpsteinSample:
    """Local geometry of a sampled surface at the chart point z."""

    z: complex
    point: H3Point
    normal: np.ndarray
    first_ff: np.ndarray
    second_ff: np.ndarray
    mean_curv: float
    principal: Tuple[float, float]

    @property
    def umbilic_defect(self) -> float:
        return abs(self.principal[1] - self.principal[0])


def _epstein_from_jet(w: complex, eta: float, eta_w: complex) -> H3Point:
    denom = math.exp(2.0 * eta) + 4.0 * abs(eta_w) ** 2
    x = w + 4.0 * np.conj(eta_w) / denom
    return H3Point.from_horizontal(complex(x), 2.0 * math.exp(eta) / denom)


def epstein_point(sigma: ConformalMetric, z: complex) -> H3Point:
    j = sigma.jet(z)
    return _epstein_from_jet(complex(z), float(j.eta), complex(j.eta_z))


def epstein_points(sigma: ConformalMetric, zs: np.ndarray) -> np.ndarray:
    """Vectorized Epstein map; returns an (n, 3) array of half-space coordinates."""
    zs = np.asarray(zs, dtype=complex).ravel()
    j = sigma.jet(zs)
    denom = np.exp(2.0 * j.eta) + 4.0 * np.abs(j.eta_z) ** 2
    x = zs + 4.0 * np.conj(j.eta_z) / denom
    return np.column_stack([x.real, x.imag, 2.0 * np.exp(j.eta) / denom])


def injectivity_radius(f: HoloMap, z: complex, start: float = 1e-2, samples: int = 16) -> float:
    """
    Radius of a circle around z on which |f'| stays above half of |f'(z)|.

    The pushforward metric of epstein_chart is only used inside such a disc.
    """
    fp0 = abs(f.df(z))
    if fp0 < DEGENERATE_DERIVATIVE_TOL:
        raise DegenerateDerivative(f"f' vanishes at {z}")
    ring = np.exp(2j * np.pi * np.arange(samples) / samples)
    r = start
    while r > 1e-9:
        pts = z + r * ring
        if np.all(f.chart.contains(pts)) and np.all(np.abs(f.df(pts)) >= 0.5 * fp0):
            return r
        r *= 0.5
    raise DegenerateDerivative(f"No injectivity neighbourhood found around {z}")


def epstein_chart(f: HoloMap, sigma: ConformalMetric, z: complex) -> H3Point:
    """
    Eps_(f, sigma)(z): the Epstein point at f(z) of the local pushforward f_* sigma.

    The pushforward has log-density eta - log|f'| at f(z) and w-derivative
    (eta_z - f''/(2 f')) / f'.
    """
    injectivity_radius(f, z)
    j = sigma.jet(z)
    fp = complex(f.df(z))
    eta_hat = float(j.eta) - math.log(abs(fp))
    eta_hat_w = (complex(j.eta_z) - complex(f.d2f(z)) / (2.0 * fp)) / fp
    return _epstein_from_jet(complex(f(z)), eta_hat, eta_hat_w)


def chart_sampler(f: HoloMap, sigma: ConformalMetric) -> Sampler:
    return lambda z: epstein_chart(f, sigma, z)


def metric_sampler(sigma: ConformalMetric) -> Sampler:
    return lambda z: epstein_point(sigma, z)


def _christoffel(a: np.ndarray, b: np.ndarray, y: float) -> np.ndarray:
    """Gamma(a, b) for the half-space metric delta / y^2."""
    gamma = -(a * b[2] + b * a[2]) / y
    gamma[2] += float(a @ b) / y
    return gamma


def _central_partials(sampler: Sampler, z: complex, h: float):
    def at(dx: int, dy: int) -> np.ndarray:
        return sampler(z + complex(dx * h, dy * h)).as_array()

    c = at(0, 0)
    xp, xm, yp, ym = at(1, 0), at(-1, 0), at(0, 1), at(0, -1)
    r_x = (xp - xm) / (2 * h)
    r_y = (yp - ym) / (2 * h)
    r_xx = (xp - 2 * c + xm) / h**2
    r_yy = (yp - 2 * c + ym) / h**2
    r_xy = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4 * h**2)
    return c, r_x, r_y, r_xx, r_xy, r_yy


def fd_geometry(sampler: Sampler, z: complex, step: float = DEFAULT_FD_STEP, richardson: bool = False) -> EpsteinSample:
    """
    Hyperbolic fundamental forms of the surface z -> sampler(z) at z.

    Second-order central differences at `step`; with richardson=True the
    estimates at step and 2*step are combined to fourth order (5x5 stencil).
    """
    c, *fine = _central_partials(sampler, z, step)
    if richardson:
        _, *coarse = _central_partials(sampler, z, 2 * step)
        fine = [(4.0 * f - g) / 3.0 for f, g in zip(fine, coarse)]
    r_x, r_y, r_xx, r_xy, r_yy = fine
    y = c[2]

    tangents = (r_x, r_y)
    first = np.array([[ti @ tj for tj in tangents] for ti in tangents]) / y**2
    if np.linalg.det(first) < GRAM_TOL:
        raise NonImmersion(f"Degenerate tangent plane at z={z} (Gram det {np.linalg.det(first):.3e})")

    n = np.cross(r_x, r_y)
    n_hat = n / np.linalg.norm(n)
    normal = y * n_hat

    second_derivs = ((r_xx, r_xy), (r_xy, r_yy))
    second = np.empty((2, 2))
    for i in range(2):
        for k in range(2):
            acc = second_derivs[i][k] + _christoffel(tangents[i], tangents[k], y)
            second[i, k] = -float(acc @ n_hat) / y
    second = 0.5 * (second + second.T)

    lam = eigh(second, first, eigvals_only=True)
    return EpsteinSample(
        z=complex(z),
        point=H3Point.from_array(c),
        normal=normal,
        first_ff=first,
        second_ff=second,
        mean_curv=float(0.5 * (lam[0] + lam[1])),
        principal=(float(lam[0]), float(lam[1])),
    )


def sample_surface(sampler: Sampler, points: Sequence[complex], step: float = DEFAULT_FD_STEP) -> List[EpsteinSample]:
    return [fd_geometry(sampler, z, step) for z in points]


def mean_curvature_from_invariants(K, bnorm2):
    """H = (K^2 - 1 - 16 n^2) / ((K - 1)^2 - 16 n^2) with n = ||B - phi/2||."""
    K = np.asarray(K, dtype=float)
    bnorm2 = np.asarray(bnorm2, dtype=float)
    denom = (K - 1.0) ** 2 - 16.0 * bnorm2
    if np.any(np.abs(denom) < FORMULA_DENOMINATOR_TOL):
        raise NonImmersion("Mean-curvature formula denominator vanishes")
    return ((K**2 - 1.0 - 16.0 * bnorm2) / denom)[()]


def mean_curvature_formula(sigma: ConformalMetric, phi_dev: QuadDifferential, z):
    j = sigma.jet(z)
    K = curvature(sigma, z)
    b = b_tensor(sigma, z) - 0.5 * phi_dev(z)
    bnorm2 = (np.exp(-2.0 * j.eta) * np.abs(b)) ** 2
    return mean_curvature_from_invariants(K, bnorm2)


def visual_defining_residual(sigma: ConformalMetric, z: complex) -> float:
    p = epstein_point(sigma, z)
    return abs(float(visual_metric_density(p, z)) - float(sigma.density(z)))


def horosphere_tangency_residual(sampler: Sampler, z: complex, step: float = DEFAULT_FD_STEP) -> float:
    """
    1 - |cos| of the angle between the surface normal at z and the normal of
    the horosphere based at z through the surface point.
    """
    sample = fd_geometry(sampler, z, step)
    p = sample.point
    x = p.horizontal - z
    diameter = (abs(x) ** 2 + p.y**2) / p.y
    sphere_normal = np.array([x.real, x.imag, p.y - 0.5 * diameter])
    sphere_normal /= np.linalg.norm(sphere_normal)
    n_hat = sample.normal / np.linalg.norm(sample.normal)
    return float(1.0 - abs(n_hat @ sphere_normal))


def umbilical_metric(H: float) -> ConformalMetric:
    """e^{2 u0} * Poincare with u0 = -artanh(H): Epstein surface of constant mean curvature H."""
    return ConformalMetric.poincare().with_factor(AnalyticLogDensity.constant(-math.atanh(H)))
