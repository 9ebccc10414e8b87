"""Tests for the Epstein map and the two mean-curvature routes."""

import math

import numpy as np
import pytest

from cmc_foliation.conformal import AnalyticLogDensity, Chart, ConformalMetric, HoloMap, QuadDifferential, pullback_metric
from cmc_foliation.epstein import (
    chart_sampler,
    epstein_chart,
    epstein_point,
    epstein_points,
    fd_geometry,
    horosphere_tangency_residual,
    injectivity_radius,
    mean_curvature_formula,
    mean_curvature_from_invariants,
    metric_sampler,
    umbilical_metric,
    visual_defining_residual,
)
from cmc_foliation.errors import DegenerateDerivative, NonImmersion
from cmc_foliation.moebius_h3 import H3Point, MoebiusMap, apply_h3

UMBILICAL_H = (-0.9, -0.5, 0.0, 0.5, 0.9)
ZERO = QuadDifferential.zero(Chart.disc())


def perturbed_poincare(rng):
    coeffs = rng.normal(scale=0.1, size=3) + 1j * rng.normal(scale=0.1, size=3)
    return ConformalMetric.poincare().with_factor(AnalyticLogDensity.polynomial_perturbation(coeffs, rng.normal(scale=0.1, size=2)))


class TestEpsteinPoint:
    """The defining property and closed forms."""

    def test_poincare_gives_the_unit_hemisphere(self, rng):
        """Eps(Poincaré)(z) = (2z, 1 - |z|^2) / (1 + |z|^2)."""
        for z in 0.8 * np.sqrt(rng.uniform(size=10)) * np.exp(2j * np.pi * rng.uniform(size=10)):
            p = epstein_point(ConformalMetric.poincare(), z)
            r2 = abs(z) ** 2
            assert abs(p.horizontal - 2 * z / (1 + r2)) < 1e-14
            assert abs(p.y - (1 - r2) / (1 + r2)) < 1e-14

    def test_spherical_gives_the_unit_point(self):
        """The spherical metric is the visual metric of (0, 0, 1)."""
        p = epstein_point(ConformalMetric.spherical(), 0.3 - 0.7j)
        assert np.allclose(p.as_array(), [0.0, 0.0, 1.0], atol=1e-14)

    def test_visual_metric_identity(self, rng):
        """V_Eps(z) agrees with sigma at z for perturbed disc metrics."""
        for _ in range(50):
            z = 0.6 * rng.uniform() * np.exp(2j * np.pi * rng.uniform())
            assert visual_defining_residual(perturbed_poincare(rng), z) < 1e-7

    def test_vectorized_matches_pointwise(self, rng):
        """epstein_points agrees with epstein_point row by row."""
        sigma = perturbed_poincare(rng)
        zs = np.array([0.1, -0.2 + 0.3j, 0.5j])
        rows = epstein_points(sigma, zs)
        for z, row in zip(zs, rows):
            assert np.allclose(row, epstein_point(sigma, z).as_array(), atol=1e-14)

    def test_moebius_naturality(self, rng):
        """m . Eps(m* sigma)(z) = Eps(sigma)(m z) for disc automorphisms m."""
        sigma = perturbed_poincare(rng)
        for _ in range(10):
            m = MoebiusMap.random_disc_automorphism(rng, 0.4)
            z = 0.3 * np.exp(2j * np.pi * rng.uniform())
            lhs = apply_h3(m, epstein_point(pullback_metric(HoloMap.moebius(m), sigma), z))
            rhs = epstein_point(sigma, m(z))
            assert np.allclose(lhs.as_array(), rhs.as_array(), atol=1e-10)

    def test_chart_version_pushes_the_metric_forward(self, rng):
        """Eps_(m, m* sigma)(z) = Eps(sigma)(m z)."""
        sigma = perturbed_poincare(rng)
        m = MoebiusMap.random_disc_automorphism(rng, 0.4)
        g = HoloMap.moebius(m)
        z = 0.2 + 0.1j
        lhs = epstein_chart(g, pullback_metric(g, sigma), z)
        assert np.allclose(lhs.as_array(), epstein_point(sigma, m(z)).as_array(), atol=1e-10)

    def test_degenerate_chart_map(self):
        """A chart map with vanishing derivative is rejected."""
        with pytest.raises(DegenerateDerivative):
            injectivity_radius(HoloMap.linear(0.0), 0.1j)


class TestMeanCurvature:
    """Formula against finite-difference fundamental forms."""

    @pytest.mark.parametrize("H0", UMBILICAL_H)
    def test_umbilical_family_formula_is_exact(self, H0):
        """The formula returns H0 on e^{-2 artanh H0} * Poincaré."""
        for z in (0j, 0.3 + 0.2j, -0.5j):
            assert abs(mean_curvature_formula(umbilical_metric(H0), ZERO, z) - H0) < 1e-12

    @pytest.mark.parametrize("H0", UMBILICAL_H)
    def test_umbilical_family_fd_oracle(self, H0):
        """FD geometry recovers H0 with equal principal curvatures."""
        sample = fd_geometry(metric_sampler(umbilical_metric(H0)), 0.2 - 0.1j, 1e-3)
        assert abs(sample.mean_curv - H0) < 1e-4
        assert sample.umbilic_defect < 1e-4

    def test_cubic_perturbation_cross_oracle(self):
        """Formula and FD agree on Epstein surfaces of z + 0.01 z^3."""
        f = HoloMap.cubic(0.01)
        phi = QuadDifferential.schwarzian_of(f)
        for H0 in UMBILICAL_H:
            sigma = umbilical_metric(H0)
            for z in (0.1j, 0.3 + 0.2j):
                value = mean_curvature_formula(sigma, phi, z)
                assert abs(fd_geometry(chart_sampler(f, sigma), z, 1e-3).mean_curv - value) < 1e-4

    def test_fd_convergence_order(self):
        """Halving the step divides the FD error by about four."""
        f = HoloMap.cubic(0.01)
        sigma = umbilical_metric(0.5)
        z = 0.3 + 0.2j
        target = mean_curvature_formula(sigma, QuadDifferential.schwarzian_of(f), z)
        errs = [abs(fd_geometry(chart_sampler(f, sigma), z, h).mean_curv - target) for h in (2e-2, 1e-2)]
        assert math.log2(errs[0] / errs[1]) >= 1.8

    def test_richardson_improves_the_estimate(self):
        """The fourth-order combination beats the plain stencil at the same step."""
        sigma = umbilical_metric(0.3).with_factor(AnalyticLogDensity.polynomial_perturbation([0.05], [0.1]))
        z = 0.25 - 0.1j
        target = mean_curvature_formula(sigma, ZERO, z)
        plain = abs(fd_geometry(metric_sampler(sigma), z, 1e-2).mean_curv - target)
        rich = abs(fd_geometry(metric_sampler(sigma), z, 1e-2, richardson=True).mean_curv - target)
        assert rich < plain

    def test_coarse_step_breaks_the_bound(self):
        """A step of 0.1 misses the cross-oracle tolerance on a perturbed leaf."""
        f = HoloMap.cubic(0.01)
        sigma = umbilical_metric(0.5)
        z = 0.3 + 0.2j
        target = mean_curvature_formula(sigma, QuadDifferential.schwarzian_of(f), z)
        assert abs(fd_geometry(chart_sampler(f, sigma), z, 1e-1).mean_curv - target) > 1e-4

    def test_horosphere_tangency(self, rng):
        """The surface is tangent to the horosphere at its chart point."""
        sigma = perturbed_poincare(rng)
        assert horosphere_tangency_residual(metric_sampler(sigma), 0.2 + 0.1j) < 1e-5

    def test_non_immersion(self):
        """A constant sampler has no tangent plane."""
        with pytest.raises(NonImmersion):
            fd_geometry(lambda z: H3Point(0.0, 0.0, 1.0), 0j)

    def test_formula_denominator(self):
        """K = 1 with B = phi/2 is a non-immersed Epstein surface."""
        with pytest.raises(NonImmersion):
            mean_curvature_from_invariants(1.0, 0.0)
