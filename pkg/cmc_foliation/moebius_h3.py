"""
Möbius transformations and the isometric action on upper half-space.

Points of H^3 use the upper half-space model (x1, x2, y), y > 0, with metric
(dx1^2 + dx2^2 + dy^2) / y^2. A normalized matrix [[a, b], [c, d]] acts on the
boundary sphere by z -> (az + b) / (cz + d) and on H^3 through the
quaternionic formula (a q + b)(c q + d)^{-1} with q = x + y j.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import DegenerateDerivative, OutOfDomain

ComplexLike = Union[complex, np.ndarray]

DET_TOL = 1e-300  # below this the matrix is treated as singular


@dataclass(frozen=True)
class BoundaryPoint:
    """A point of the boundary sphere: a finite complex value or infinity."""

    value: Optional[complex] = None

    @classmethod
    def finite(cls, z: complex) -> "BoundaryPoint":
        return cls(complex(z))

    @classmethod
    def infinity(cls) -> "BoundaryPoint":
        return cls(None)

    @property
    def is_infinite(self) -> bool:
        return self.value is None

    def __repr__(self) -> str:
        return "BoundaryPoint(∞)" if self.is_infinite else f"BoundaryPoint({self.value})"


INFINITY = BoundaryPoint.infinity()


@dataclass(frozen=True)
class H3Point:
    """Point of upper half-space; y is the height above the boundary plane."""

    x1: float
    x2: float
    y: float

    def __post_init__(self):
        if not (self.y > 0 and math.isfinite(self.y)):
            raise OutOfDomain(f"H3Point height must be positive and finite, got {self.y}")

    @classmethod
    def from_horizontal(cls, x: complex, y: float) -> "H3Point":
        return cls(float(x.real), float(x.imag), float(y))

    @classmethod
    def from_array(cls, arr) -> "H3Point":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))

    @property
    def horizontal(self) -> complex:
        return complex(self.x1, self.x2)

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.y], dtype=float)


@dataclass(frozen=True)
class MoebiusMap:
    """
    Element of PSL(2, C) stored as a determinant-one matrix.

    The constructor rescales any invertible matrix to determinant one; the
    projective sign is not tracked.
    """

    a: complex
    b: complex
    c: complex
    d: complex

    def __post_init__(self):
        a, b, c, d = (complex(v) for v in (self.a, self.b, self.c, self.d))
        det = a * d - b * c
        if abs(det) < DET_TOL:
            raise DegenerateDerivative(f"Singular Möbius matrix (det={det})")
        s = cmath.sqrt(det)
        object.__setattr__(self, "a", a / s)
        object.__setattr__(self, "b", b / s)
        object.__setattr__(self, "c", c / s)
        object.__setattr__(self, "d", d / s)

    # --- constructors ---

    @classmethod
    def from_matrix(cls, m) -> "MoebiusMap":
        m = np.asarray(m, dtype=complex)
        return cls(m[0, 0], m[0, 1], m[1, 0], m[1, 1])

    @classmethod
    def identity(cls) -> "MoebiusMap":
        return cls(1, 0, 0, 1)

    @classmethod
    def translation(cls, b: complex) -> "MoebiusMap":
        return cls(1, b, 0, 1)

    @classmethod
    def dilation(cls, k: complex) -> "MoebiusMap":
        """z -> k z."""
        r = cmath.sqrt(k)
        return cls(r, 0, 0, 1 / r)

    @classmethod
    def rotation(cls, theta: float) -> "MoebiusMap":
        """z -> e^{i theta} z; preserves the unit disc."""
        return cls(cmath.exp(0.5j * theta), 0, 0, cmath.exp(-0.5j * theta))

    @classmethod
    def disc_translation(cls, a: complex) -> "MoebiusMap":
        """z -> (z + a) / (1 + conj(a) z), |a| < 1; sends 0 to a."""
        if abs(a) >= 1:
            raise OutOfDomain(f"Disc translation parameter must satisfy |a| < 1, got {a}")
        return cls(1, a, np.conj(a), 1)

    @classmethod
    def disc_automorphism(cls, theta: float, a: complex) -> "MoebiusMap":
        return cls.rotation(theta).compose(cls.disc_translation(a))

    @classmethod
    def random_disc_automorphism(cls, rng: np.random.Generator, max_radius: float = 0.5) -> "MoebiusMap":
        theta = rng.uniform(0, 2 * math.pi)
        r = max_radius * math.sqrt(rng.uniform())
        return cls.disc_automorphism(theta, r * cmath.exp(1j * rng.uniform(0, 2 * math.pi)))

    @classmethod
    def random(cls, rng: np.random.Generator, scale: float = 1.0) -> "MoebiusMap":
        while True:
            m = scale * (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
            if abs(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]) > 1e-2:
                return cls.from_matrix(m)

    # --- group structure ---

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=complex)

    def compose(self, other: "MoebiusMap") -> "MoebiusMap":
        """self ∘ other."""
        return MoebiusMap.from_matrix(self.matrix @ other.matrix)

    def __matmul__(self, other: "MoebiusMap") -> "MoebiusMap":
        return self.compose(other)

    def inverse(self) -> "MoebiusMap":
        return MoebiusMap(self.d, -self.b, -self.c, self.a)

    def close_to(self, other: "MoebiusMap", tol: float = 1e-10) -> bool:
        """Equality in PSL(2, C) up to tol entrywise."""
        diff = self.matrix - other.matrix
        summ = self.matrix + other.matrix
        return bool(min(np.abs(diff).max(), np.abs(summ).max()) < tol)

    # --- analytic boundary map ---

    def __call__(self, z: ComplexLike) -> ComplexLike:
        return (self.a * z + self.b) / (self.c * z + self.d)

    def derivative(self, z: ComplexLike) -> ComplexLike:
        return 1.0 / (self.c * z + self.d) ** 2

    def second_derivative(self, z: ComplexLike) -> ComplexLike:
        return -2.0 * self.c / (self.c * z + self.d) ** 3

    def third_derivative(self, z: ComplexLike) -> ComplexLike:
        return 6.0 * self.c**2 / (self.c * z + self.d) ** 4

    def preserves_unit_disc(self, tol: float = 1e-10) -> bool:
        """True for elements of SU(1,1) up to sign, i.e. d = conj(a), c = conj(b)."""
        for sign in (1, -1):
            a, b, c, d = (sign * v for v in (self.a, self.b, self.c, self.d))
            if abs(d - np.conj(a)) < tol and abs(c - np.conj(b)) < tol:
                return True
        return False


def apply_boundary(m: MoebiusMap, z: BoundaryPoint) -> BoundaryPoint:
    """Fractional-linear action on the boundary sphere; poles go to infinity."""
    if z.is_infinite:
        if m.c == 0:
            return INFINITY
        return BoundaryPoint.finite(m.a / m.c)
    w = complex(z.value)
    denom = m.c * w + m.d
    if denom == 0:
        return INFINITY
    return BoundaryPoint.finite((m.a * w + m.b) / denom)


def apply_h3(m: MoebiusMap, p: H3Point) -> H3Point:
    """Isometric extension of m to upper half-space (quaternionic formula)."""
    x = p.horizontal
    y = p.y
    cxd = m.c * x + m.d
    denom = abs(cxd) ** 2 + abs(m.c) ** 2 * y**2
    x_new = ((m.a * x + m.b) * np.conj(cxd) + m.a * np.conj(m.c) * y**2) / denom
    return H3Point.from_horizontal(complex(x_new), y / denom)


def hyperbolic_distance(p: H3Point, q: H3Point) -> float:
    """d(p, q) from cosh d = 1 + (|Δx|^2 + Δy^2) / (2 y_p y_q), in the asinh form."""
    chord = math.sqrt(abs(p.horizontal - q.horizontal) ** 2 + (p.y - q.y) ** 2)
    return 2.0 * math.asinh(chord / (2.0 * math.sqrt(p.y * q.y)))


def visual_metric_density(p: H3Point, z: ComplexLike) -> ComplexLike:
    """Density of the visual metric V_p relative to |dz|^2 at the boundary point z."""
    return (2.0 * p.y / (np.abs(z - p.horizontal) ** 2 + p.y**2)) ** 2


def disc_geodesic_angle(vertex: complex, p: complex, q: complex) -> float:
    """Angle at `vertex` between the disc geodesics towards p and q."""
    move = MoebiusMap.disc_translation(-vertex)
    return abs(cmath.phase(move(q) / move(p)))


def disc_triangle_area(z0: complex, z1: complex, z2: complex) -> float:
    """Hyperbolic area of a geodesic triangle in the Poincaré disc (angle defect)."""
    angles = (
        disc_geodesic_angle(z0, z1, z2),
        disc_geodesic_angle(z1, z2, z0),
        disc_geodesic_angle(z2, z0, z1),
    )
    return math.pi - sum(angles)


def disc_distance(z: complex, w: complex) -> float:
    """Distance in the Poincaré disc metric 4|dz|^2 / (1 - |z|^2)^2."""
    return 2.0 * math.atanh(abs((z - w) / (1 - np.conj(w) * z)))


def geodesic_point(z: complex, w: complex, s: float) -> complex:
    """Point at fraction s of the way along the disc geodesic from z to w."""
    move = MoebiusMap.disc_translation(z)
    w0 = move.inverse()(w)
    r = abs(w0)
    if r == 0:
        return z
    target = math.tanh(s * math.atanh(r)) * w0 / r
    return complex(move(target))

