"""
Conformal metrics on planar charts, Schwarzian derivatives and Schwarzian tensors.

A conformal metric is sigma = e^{2 eta} |dz|^2. Its log-density eta is a sum
of terms (analytic callables, uniform-grid samples, or pullbacks through a
holomorphic map) that each return an EtaJet: eta together with eta_z,
eta_zz and eta_{z zbar}.

Complex-derivative convention, used everywhere in this package:
    d/dz = (d/dx - i d/dy) / 2,    d/dzbar = (d/dx + i d/dy) / 2.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RectBivariateSpline, RegularGridInterpolator

from .errors import DegenerateDerivative, DomainMismatch, OutOfDomain
from .moebius_h3 import MoebiusMap

ComplexLike = Union[complex, np.ndarray]
RealLike = Union[float, np.ndarray]

DERIV_ANALYTIC = "analytic"
DERIV_GRID = "grid"

GRID_MARGIN = 2  # cells excluded at each grid edge (4th-order stencils reach 2 nodes)
DEGENERATE_DERIVATIVE_TOL = 1e-12


# --- charts ---


@dataclass(frozen=True)
class Chart:
    """Planar chart: disc, upper half-plane, rectangle or annulus."""

    kind: str
    center: complex = 0j
    radius: float = 1.0
    inner_radius: float = 0.0
    bounds: Tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0)

    @classmethod
    def disc(cls, center: complex = 0j, radius: float = 1.0) -> "Chart":
        return cls("disc", center=complex(center), radius=float(radius))

    @classmethod
    def half_plane(cls) -> "Chart":
        return cls("half_plane")

    @classmethod
    def rectangle(cls, x0: float, x1: float, y0: float, y1: float) -> "Chart":
        return cls("rectangle", bounds=(float(x0), float(x1), float(y0), float(y1)))

    @classmethod
    def annulus(cls, center: complex, inner_radius: float, outer_radius: float) -> "Chart":
        return cls("annulus", center=complex(center), radius=float(outer_radius), inner_radius=float(inner_radius))

    def contains(self, z: ComplexLike) -> np.ndarray:
        z = np.asarray(z)
        if self.kind == "disc":
            return np.abs(z - self.center) < self.radius
        if self.kind == "half_plane":
            return z.imag > 0
        if self.kind == "rectangle":
            x0, x1, y0, y1 = self.bounds
            return (z.real > x0) & (z.real < x1) & (z.imag > y0) & (z.imag < y1)
        if self.kind == "annulus":
            r = np.abs(z - self.center)
            return (r > self.inner_radius) & (r < self.radius)
        raise ValueError(f"Unknown chart kind: {self.kind}")

    def require(self, z: ComplexLike, error=OutOfDomain) -> None:
        if not np.all(self.contains(z)):
            raise error(f"Point(s) outside {self.kind} chart: {z}")


PLANE = Chart.rectangle(-1e6, 1e6, -1e6, 1e6)


# --- log-density jets ---


@dataclass(frozen=True)
class EtaJet:
    """eta and its derivatives d/dz, d^2/dz^2 and d^2/dz dzbar at a point."""

    eta: RealLike
    eta_z: ComplexLike
    eta_zz: ComplexLike
    eta_zzbar: RealLike

    def __add__(self, other: "EtaJet") -> "EtaJet":
        return EtaJet(
            self.eta + other.eta,
            self.eta_z + other.eta_z,
            self.eta_zz + other.eta_zz,
            self.eta_zzbar + other.eta_zzbar,
        )


def jet_from_partials(e, ex, ey, exx, exy, eyy) -> EtaJet:
    """Convert real partial derivatives to the complex jet."""
    return EtaJet(
        e,
        0.5 * (ex - 1j * ey),
        0.25 * (exx - eyy - 2j * exy),
        0.25 * (exx + eyy),
    )


class LogDensity:
    """One additive term of a log-density."""

    deriv_mode = DERIV_ANALYTIC

    def jet(self, z: ComplexLike) -> EtaJet:
        raise NotImplementedError


class AnalyticLogDensity(LogDensity):
    """Log-density term given by callables for eta and its derivatives."""

    def __init__(
        self,
        eta: Callable[[ComplexLike], RealLike],
        eta_z: Callable[[ComplexLike], ComplexLike],
        eta_zz: Callable[[ComplexLike], ComplexLike],
        eta_zzbar: Callable[[ComplexLike], RealLike],
        name: str = "analytic",
    ):
        self._eta = eta
        self._eta_z = eta_z
        self._eta_zz = eta_zz
        self._eta_zzbar = eta_zzbar
        self.name = name

    def jet(self, z: ComplexLike) -> EtaJet:
        return EtaJet(self._eta(z), self._eta_z(z), self._eta_zz(z), self._eta_zzbar(z))

    @classmethod
    def constant(cls, t: float) -> "AnalyticLogDensity":
        zero = lambda z: np.zeros_like(np.asarray(z), dtype=float)[()]  # noqa: E731
        return cls(lambda z: t + zero(z), lambda z: 0j + zero(z), lambda z: 0j + zero(z), zero, name=f"const({t})")

    @classmethod
    def radial(cls, q, dq, d2q, name: str = "radial") -> "AnalyticLogDensity":
        """eta = q(|z|^2)."""

        def eta_z(z):
            return dq(np.abs(z) ** 2) * np.conj(z)

        def eta_zz(z):
            return d2q(np.abs(z) ** 2) * np.conj(z) ** 2

        def eta_zzbar(z):
            s = np.abs(z) ** 2
            return d2q(s) * s + dq(s)

        return cls(lambda z: q(np.abs(z) ** 2), eta_z, eta_zz, eta_zzbar, name=name)

    @classmethod
    def harmonic(cls, g, dg, d2g, name: str = "harmonic") -> "AnalyticLogDensity":
        """eta = Re g(z) for holomorphic g."""
        return cls(
            lambda z: np.real(g(z)),
            lambda z: 0.5 * dg(z),
            lambda z: 0.5 * d2g(z),
            lambda z: np.zeros_like(np.real(np.asarray(z, dtype=complex)))[()],
            name=name,
        )

    @classmethod
    def poincare(cls) -> "AnalyticLogDensity":
        """log(2 / (1 - |z|^2)): curvature -1 on the unit disc."""
        return cls.radial(
            lambda s: math.log(2.0) - np.log(1.0 - s),
            lambda s: 1.0 / (1.0 - s),
            lambda s: 1.0 / (1.0 - s) ** 2,
            name="poincare",
        )

    @classmethod
    def spherical(cls) -> "AnalyticLogDensity":
        """log(2 / (1 + |z|^2)): curvature +1."""
        return cls.radial(
            lambda s: math.log(2.0) - np.log(1.0 + s),
            lambda s: -1.0 / (1.0 + s),
            lambda s: 1.0 / (1.0 + s) ** 2,
            name="spherical",
        )

    @classmethod
    def polynomial_perturbation(cls, harmonic_coeffs: Sequence[complex] = (), radial_coeffs: Sequence[float] = ()):
        """
        eta = Re(sum_k a_k z^(k+2)) + sum_k b_k |z|^(2(k+1)).

        A convenient family of smooth real perturbations for randomized tests.
        """
        a = [complex(c) for c in harmonic_coeffs]
        b = [float(c) for c in radial_coeffs]

        def g(z):
            return sum(c * z ** (k + 2) for k, c in enumerate(a)) + 0 * z

        def dg(z):
            return sum((k + 2) * c * z ** (k + 1) for k, c in enumerate(a)) + 0 * z

        def d2g(z):
            return sum((k + 2) * (k + 1) * c * z**k for k, c in enumerate(a)) + 0 * z

        def q(s):
            return sum(c * s ** (k + 1) for k, c in enumerate(b)) + 0 * s

        def dq(s):
            return sum((k + 1) * c * s**k for k, c in enumerate(b)) + 0 * s

        def d2q(s):
            return sum((k + 1) * k * c * s ** (k - 1) for k, c in enumerate(b) if k >= 1) + 0 * s

        harmonic = cls.harmonic(g, dg, d2g)
        radial = cls.radial(q, dq, d2q)
        return SumLogDensity((harmonic, radial))


class SumLogDensity(LogDensity):
    def __init__(self, terms: Sequence[LogDensity]):
        self.terms = tuple(terms)

    @property
    def deriv_mode(self):  # type: ignore[override]
        return DERIV_GRID if any(t.deriv_mode == DERIV_GRID for t in self.terms) else DERIV_ANALYTIC

    def jet(self, z: ComplexLike) -> EtaJet:
        total = self.terms[0].jet(z)
        for term in self.terms[1:]:
            total = total + term.jet(z)
        return total


def fd4_operators(nx: int, ny: int, hx: float, hy: float) -> Dict[str, sp.csr_matrix]:
    """
    Fourth-order central-difference operators on a row-major (ny, nx) grid.

    Values beyond the grid edge are treated as zero, so rows within two nodes
    of the edge are only meaningful under a zero (Dirichlet) extension.
    """
    d1x = sp.diags([1.0, -8.0, 8.0, -1.0], [-2, -1, 1, 2], shape=(nx, nx)) / (12.0 * hx)
    d1y = sp.diags([1.0, -8.0, 8.0, -1.0], [-2, -1, 1, 2], shape=(ny, ny)) / (12.0 * hy)
    d2x = sp.diags([-1.0, 16.0, -30.0, 16.0, -1.0], [-2, -1, 0, 1, 2], shape=(nx, nx)) / (12.0 * hx**2)
    d2y = sp.diags([-1.0, 16.0, -30.0, 16.0, -1.0], [-2, -1, 0, 1, 2], shape=(ny, ny)) / (12.0 * hy**2)
    ix = sp.identity(nx, format="csr")
    iy = sp.identity(ny, format="csr")
    return {
        "dx": sp.kron(iy, d1x, format="csr"),
        "dy": sp.kron(d1y, ix, format="csr"),
        "dxx": sp.kron(iy, d2x, format="csr"),
        "dyy": sp.kron(d2y, ix, format="csr"),
        "dxy": sp.kron(d1y, d1x, format="csr"),
    }


class GridLogDensity(LogDensity):
    """
    Log-density term sampled on a uniform grid.

    values[j, i] is eta at x[i] + i*y[j]. In "fd4" mode the derivatives are
    4th-order central differences at the nodes, interpolated by cubic
    splines between nodes. In "quintic" mode eta is represented by an
    interpolating quintic tensor spline and differentiated exactly. Either
    way, queries closer than GRID_MARGIN cells to the edge are rejected.
    """

    deriv_mode = DERIV_GRID

    def __init__(self, x: np.ndarray, y: np.ndarray, values: np.ndarray, interp: str = "fd4", margin: int = GRID_MARGIN):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.shape != (len(y), len(x)):
            raise ValueError(f"Grid values shape {values.shape} does not match ({len(y)}, {len(x)})")
        if len(x) < 2 * margin + 6 or len(y) < 2 * margin + 6:
            raise ValueError("Grid too small for 4th-order differences with the declared margin")
        hx = np.diff(x)
        hy = np.diff(y)
        if not (np.allclose(hx, hx[0], rtol=1e-9) and np.allclose(hy, hy[0], rtol=1e-9)):
            raise ValueError("Grid must be uniform")
        if not np.all(np.isfinite(values)):
            raise ValueError("Grid log-density contains non-finite values")
        self.x, self.y, self.values = x, y, values
        self.hx, self.hy = float(hx[0]), float(hy[0])
        self.margin = margin
        self.interp = interp
        self.chart = Chart.rectangle(x[margin], x[-1 - margin], y[margin], y[-1 - margin])
        if interp == "fd4":
            ops = fd4_operators(len(x), len(y), self.hx, self.hy)
            flat = values.ravel()
            sl = (slice(margin, len(y) - margin), slice(margin, len(x) - margin))
            grids = (y[sl[0]], x[sl[1]])
            self._interps = {
                key: RegularGridInterpolator(grids, arr[sl], method="cubic")
                for key, arr in (
                    ("e", values),
                    ("ex", (ops["dx"] @ flat).reshape(values.shape)),
                    ("ey", (ops["dy"] @ flat).reshape(values.shape)),
                    ("exx", (ops["dxx"] @ flat).reshape(values.shape)),
                    ("exy", (ops["dxy"] @ flat).reshape(values.shape)),
                    ("eyy", (ops["dyy"] @ flat).reshape(values.shape)),
                )
            }
        elif interp == "quintic":
            self._spline = RectBivariateSpline(x, y, values.T, kx=5, ky=5, s=0)
        else:
            raise ValueError(f"Unknown grid interpolation mode: {interp}")

    def _inside(self, z: np.ndarray) -> np.ndarray:
        x0, x1, y0, y1 = self.chart.bounds
        tol = 1e-12 * max(abs(x0), abs(x1), 1.0)
        return (z.real >= x0 - tol) & (z.real <= x1 + tol) & (z.imag >= y0 - tol) & (z.imag <= y1 + tol)

    def jet(self, z: ComplexLike) -> EtaJet:
        za = np.atleast_1d(np.asarray(z, dtype=complex))
        if not np.all(self._inside(za)):
            raise OutOfDomain(f"Grid query within {self.margin}-cell margin or outside grid: {z}")
        if self.interp == "fd4":
            pts = np.column_stack([za.imag, za.real])
            parts = [self._interps[k](pts) for k in ("e", "ex", "ey", "exx", "exy", "eyy")]
        else:
            xs, ys = za.real, za.imag
            parts = [
                self._spline.ev(xs, ys),
                self._spline.ev(xs, ys, dx=1),
                self._spline.ev(xs, ys, dy=1),
                self._spline.ev(xs, ys, dx=2),
                self._spline.ev(xs, ys, dx=1, dy=1),
                self._spline.ev(xs, ys, dy=2),
            ]
        jet = jet_from_partials(*parts)
        if np.ndim(z) == 0:
            return EtaJet(float(jet.eta[0]), complex(jet.eta_z[0]), complex(jet.eta_zz[0]), float(jet.eta_zzbar[0]))
        shape = np.shape(z)
        return EtaJet(*(np.reshape(v, shape) for v in (jet.eta, jet.eta_z, jet.eta_zz, jet.eta_zzbar)))


class PullbackLogDensity(LogDensity):
    """Log-density of f* sigma: eta o f + log|f'|."""

    def __init__(self, f: "HoloMap", base: "ConformalMetric"):
        self.f = f
        self.base = base

    @property
    def deriv_mode(self):  # type: ignore[override]
        return self.base.deriv_mode

    def jet(self, z: ComplexLike) -> EtaJet:
        w = self.f(z)
        self.base.chart.require(w, error=DomainMismatch)
        j = self.base.jet(w)
        fp, fpp, fppp = self.f.df(z), self.f.d2f(z), self.f.d3f(z)
        if np.any(np.abs(fp) < DEGENERATE_DERIVATIVE_TOL):
            raise DegenerateDerivative(f"f' vanishes at {z}")
        ratio = fpp / fp
        return EtaJet(
            j.eta + np.log(np.abs(fp)),
            j.eta_z * fp + 0.5 * ratio,
            j.eta_zz * fp**2 + j.eta_z * fpp + 0.5 * (fppp / fp - ratio**2),
            j.eta_zzbar * np.abs(fp) ** 2,
        )


# --- metrics, differentials, maps ---


@dataclass(frozen=True)
class ConformalMetric:
    """sigma = e^{2 eta} |dz|^2 on a chart, eta being the sum of `terms`."""

    chart: Chart
    terms: Tuple[LogDensity, ...] = field(default_factory=tuple)

    @property
    def deriv_mode(self) -> str:
        return DERIV_GRID if any(t.deriv_mode == DERIV_GRID for t in self.terms) else DERIV_ANALYTIC

    def jet(self, z: ComplexLike) -> EtaJet:
        self.chart.require(z)
        if not self.terms:
            zero = np.zeros(np.shape(z))[()]
            return EtaJet(zero, zero + 0j, zero + 0j, zero)
        total = self.terms[0].jet(z)
        for term in self.terms[1:]:
            total = total + term.jet(z)
        return total

    def log_density(self, z: ComplexLike) -> RealLike:
        return self.jet(z).eta

    def density(self, z: ComplexLike) -> RealLike:
        return np.exp(2.0 * self.jet(z).eta)

    def with_factor(self, term: LogDensity) -> "ConformalMetric":
        """e^{2u} sigma for the log-density term u."""
        return ConformalMetric(self.chart, self.terms + (term,))

    def scaled(self, t: float) -> "ConformalMetric":
        """e^{2t} sigma."""
        return self.with_factor(AnalyticLogDensity.constant(t))

    @classmethod
    def flat(cls, chart: Chart = PLANE) -> "ConformalMetric":
        return cls(chart, ())

    @classmethod
    def poincare(cls) -> "ConformalMetric":
        return cls(Chart.disc(), (AnalyticLogDensity.poincare(),))

    @classmethod
    def spherical(cls, chart: Chart = PLANE) -> "ConformalMetric":
        return cls(chart, (AnalyticLogDensity.spherical(),))

    @classmethod
    def from_grid(cls, x, y, values, interp: str = "fd4") -> "ConformalMetric":
        term = GridLogDensity(x, y, values, interp=interp)
        return cls(term.chart, (term,))


class QuadDifferential:
    """lambda(z) dz^2 on a chart."""

    def __init__(self, coeff: Callable[[ComplexLike], ComplexLike], chart: Chart = PLANE, name: str = "qd"):
        self._coeff = coeff
        self.chart = chart
        self.name = name

    def __call__(self, z: ComplexLike) -> ComplexLike:
        self.chart.require(z)
        return self._coeff(z)

    def scaled(self, s: complex) -> "QuadDifferential":
        return QuadDifferential(lambda z: s * self._coeff(z), self.chart, name=f"{s}*{self.name}")

    @classmethod
    def zero(cls, chart: Chart = PLANE) -> "QuadDifferential":
        return cls(lambda z: np.zeros_like(np.asarray(z, dtype=complex))[()], chart, name="zero")

    @classmethod
    def constant(cls, c: complex, chart: Chart = PLANE) -> "QuadDifferential":
        return cls(lambda z: c + np.zeros_like(np.asarray(z, dtype=complex))[()], chart, name=f"{c}dz^2")

    @classmethod
    def from_grid(cls, x, y, values) -> "QuadDifferential":
        values = np.asarray(values, dtype=complex)
        grids = (np.asarray(y, float), np.asarray(x, float))
        re_i = RegularGridInterpolator(grids, values.real, method="cubic")
        im_i = RegularGridInterpolator(grids, values.imag, method="cubic")
        chart = Chart.rectangle(x[0], x[-1], y[0], y[-1])

        def coeff(z):
            za = np.asarray(z, dtype=complex)
            pts = np.stack([za.imag, za.real], axis=-1)
            return (re_i(pts) + 1j * im_i(pts))[()]

        return cls(coeff, chart, name="grid")

    @classmethod
    def schwarzian_of(cls, f: "HoloMap") -> "QuadDifferential":
        return cls(lambda z: schwarzian(f, z), f.chart, name="S(f)")


@dataclass(frozen=True)
class HoloMap:
    """Locally injective holomorphic map with analytic derivatives up to order 3."""

    f: Callable[[ComplexLike], ComplexLike]
    df: Callable[[ComplexLike], ComplexLike]
    d2f: Callable[[ComplexLike], ComplexLike]
    d3f: Callable[[ComplexLike], ComplexLike]
    chart: Chart = Chart.disc()
    name: str = "f"

    def __call__(self, z: ComplexLike) -> ComplexLike:
        return self.f(z)

    @classmethod
    def identity(cls, chart: Chart = Chart.disc()) -> "HoloMap":
        one = lambda z: 1.0 + 0 * np.asarray(z, dtype=complex)  # noqa: E731
        zero = lambda z: 0 * np.asarray(z, dtype=complex)  # noqa: E731
        return cls(lambda z: z + 0j, one, zero, zero, chart, name="id")

    @classmethod
    def linear(cls, k: complex, chart: Chart = Chart.disc()) -> "HoloMap":
        zero = lambda z: 0 * np.asarray(z, dtype=complex)  # noqa: E731
        return cls(lambda z: k * z, lambda z: k + zero(z), zero, zero, chart, name=f"{k}z")

    @classmethod
    def moebius(cls, m: MoebiusMap, chart: Chart = Chart.disc()) -> "HoloMap":
        return cls(m, m.derivative, m.second_derivative, m.third_derivative, chart, name="moebius")

    @classmethod
    def exponential(cls, chart: Chart = PLANE) -> "HoloMap":
        return cls(np.exp, np.exp, np.exp, np.exp, chart, name="exp")

    @classmethod
    def cubic(cls, eps: float, chart: Chart = Chart.disc()) -> "HoloMap":
        """z + eps z^3."""
        return cls(
            lambda z: z + eps * z**3,
            lambda z: 1 + 3 * eps * z**2,
            lambda z: 6 * eps * z,
            lambda z: 6 * eps + 0 * np.asarray(z, dtype=complex),
            chart,
            name=f"z+{eps}z^3",
        )

    def then(self, outer: "HoloMap") -> "HoloMap":
        """outer o self."""
        inner = self

        def f(z):
            return outer.f(inner.f(z))

        def df(z):
            return outer.df(inner.f(z)) * inner.df(z)

        def d2f(z):
            w = inner.f(z)
            return outer.d2f(w) * inner.df(z) ** 2 + outer.df(w) * inner.d2f(z)

        def d3f(z):
            w = inner.f(z)
            f1, f2, f3 = inner.df(z), inner.d2f(z), inner.d3f(z)
            return outer.d3f(w) * f1**3 + 3 * outer.d2f(w) * f1 * f2 + outer.df(w) * f3

        return HoloMap(f, df, d2f, d3f, self.chart, name=f"{outer.name}∘{self.name}")

    def rescaled(self, s: float) -> "HoloMap":
        """
        f_s(z) = (f(sz) - f(0)) / s, with f_0(z) = f'(0) z.

        S(f_s)(z) = s^2 S(f)(sz), so s in [0, 1] homotopes S(f) to zero
        through genuine developing maps.
        """
        if s == 0:
            return HoloMap.linear(complex(self.df(0j)), self.chart)
        f0 = self.f(0j)
        return HoloMap(
            lambda z: (self.f(s * z) - f0) / s,
            lambda z: self.df(s * z),
            lambda z: s * self.d2f(s * z),
            lambda z: s**2 * self.d3f(s * z),
            self.chart,
            name=f"{self.name}@{s}",
        )


# --- operations ---


def curvature(sigma: ConformalMetric, z: ComplexLike) -> RealLike:
    """Gaussian curvature K = -e^{-2 eta} * 4 eta_{z zbar}."""
    j = sigma.jet(z)
    return -np.exp(-2.0 * j.eta) * 4.0 * j.eta_zzbar


def schwarzian(f: HoloMap, z: ComplexLike) -> ComplexLike:
    """S(f) = (f''/f')' - (f''/f')^2 / 2 = f'''/f' - 3/2 (f''/f')^2."""
    fp = f.df(z)
    if np.any(np.abs(fp) < DEGENERATE_DERIVATIVE_TOL):
        raise DegenerateDerivative(f"f' vanishes at {z}")
    ratio = f.d2f(z) / fp
    return f.d3f(z) / fp - 1.5 * ratio**2


def schwarzian_tensor(sigma1: ConformalMetric, sigma2: ConformalMetric, z: ComplexLike) -> ComplexLike:
    """B(sigma1, sigma2) = (eta2)_zz - (eta2)_z^2 - (eta1)_zz + (eta1)_z^2."""
    j1 = sigma1.jet(z)
    j2 = sigma2.jet(z)
    return j2.eta_zz - j2.eta_z**2 - j1.eta_zz + j1.eta_z**2


def b_tensor(sigma: ConformalMetric, z: ComplexLike) -> ComplexLike:
    """B(sigma) against the flat representative |dz|^2."""
    j = sigma.jet(z)
    return j.eta_zz - j.eta_z**2


def qd_norm(phi: QuadDifferential, sigma: ConformalMetric, z: ComplexLike) -> RealLike:
    """||phi||_sigma = e^{-2 eta} |lambda|."""
    return np.exp(-2.0 * sigma.jet(z).eta) * np.abs(phi(z))


def pullback_metric(f: HoloMap, sigma: ConformalMetric) -> ConformalMetric:
    return ConformalMetric(f.chart, (PullbackLogDensity(f, sigma),))


def pullback_qd(f: HoloMap, phi: QuadDifferential) -> QuadDifferential:
    """(f* phi)(z) = lambda(f(z)) f'(z)^2."""

    def coeff(z):
        w = f(z)
        phi.chart.require(w, error=DomainMismatch)
        return phi(w) * f.df(z) ** 2

    return QuadDifferential(coeff, f.chart, name=f"{f.name}*{phi.name}")


# --- grid CSV ---

_GRID_HEADER = re.compile(r"(\w+)=([-+0-9.eE]+)")


def write_grid_metric_csv(path: Path, term: GridLogDensity) -> None:
    """Write columns re(z), im(z), eta with a leading uniform-grid header line."""
    xx, yy = np.meshgrid(term.x, term.y)
    data = np.column_stack([xx.ravel(), yy.ravel(), term.values.ravel()])
    header = (
        f"grid x0={float(term.x[0])!r} x1={float(term.x[-1])!r} nx={len(term.x)} "
        f"y0={float(term.y[0])!r} y1={float(term.y[-1])!r} ny={len(term.y)}\nre,im,eta"
    )
    np.savetxt(path, data, delimiter=",", header=header, comments="# ", fmt="%.17g")


def read_grid_metric_csv(path: Path, interp: str = "fd4") -> GridLogDensity:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    params: Dict[str, float] = {k: float(v) for k, v in _GRID_HEADER.findall(first)}
    missing = {"x0", "x1", "nx", "y0", "y1", "ny"} - set(params)
    if missing:
        raise ValueError(f"Grid CSV {path} lacks header fields {sorted(missing)}")
    nx, ny = int(params["nx"]), int(params["ny"])
    x = np.linspace(params["x0"], params["x1"], nx)
    y = np.linspace(params["y0"], params["y1"], ny)
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if data.shape != (nx * ny, 3):
        raise ValueError(f"Grid CSV {path} has {data.shape[0]} rows, header declares {nx * ny}")
    xx, yy = np.meshgrid(x, y)
    if not (np.allclose(data[:, 0], xx.ravel(), atol=1e-12) and np.allclose(data[:, 1], yy.ravel(), atol=1e-12)):
        raise ValueError(f"Grid CSV {path} coordinates do not match the declared uniform grid")
    return GridLogDensity(x, y, data[:, 2].reshape(ny, nx), interp=interp)

