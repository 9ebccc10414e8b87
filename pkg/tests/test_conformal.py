"""Tests for conformal metrics, Schwarzian calculus and grid log-densities."""

import numpy as np
import pytest

from cmc_foliation.conformal import (
    AnalyticLogDensity,
    Chart,
    ConformalMetric,
    GridLogDensity,
    HoloMap,
    QuadDifferential,
    b_tensor,
    curvature,
    pullback_metric,
    pullback_qd,
    qd_norm,
    read_grid_metric_csv,
    schwarzian,
    schwarzian_tensor,
    write_grid_metric_csv,
)
from cmc_foliation.errors import DegenerateDerivative, DomainMismatch, OutOfDomain
from cmc_foliation.moebius_h3 import MoebiusMap


def disc_samples(rng, n=50, radius=0.6):
    return radius * np.sqrt(rng.uniform(size=n)) * np.exp(2j * np.pi * rng.uniform(size=n))


class TestCurvature:
    """Gaussian curvature of the model metrics."""

    def test_poincare_has_curvature_minus_one(self, rng):
        """K(Poincaré) = -1 everywhere on the disc."""
        zs = disc_samples(rng, radius=0.95)
        assert np.allclose(curvature(ConformalMetric.poincare(), zs), -1.0, atol=1e-12)

    def test_spherical_and_flat(self, rng):
        """K = +1 for the spherical metric and 0 for the flat one."""
        zs = disc_samples(rng)
        assert np.allclose(curvature(ConformalMetric.spherical(), zs), 1.0, atol=1e-12)
        assert np.allclose(curvature(ConformalMetric.flat(Chart.disc()), zs), 0.0)

    def test_constant_rescaling(self, rng):
        """K(e^{2t} sigma) = e^{-2t} K(sigma)."""
        zs = disc_samples(rng)
        t = 0.4
        sigma = ConformalMetric.poincare()
        assert np.allclose(curvature(sigma.scaled(t), zs), np.exp(-2 * t) * curvature(sigma, zs), atol=1e-12)

    def test_outside_chart_rejected(self):
        """Poincaré metric queries outside the unit disc raise OutOfDomain."""
        with pytest.raises(OutOfDomain):
            ConformalMetric.poincare().jet(1.2)


class TestSchwarzian:
    """Schwarzian derivative and tensor identities."""

    def test_moebius_maps_have_zero_schwarzian(self, rng):
        """S(m) = 0 for Möbius m."""
        for _ in range(20):
            m = MoebiusMap.random_disc_automorphism(rng)
            assert abs(schwarzian(HoloMap.moebius(m), 0.2 - 0.1j)) < 1e-10

    def test_closed_forms(self):
        """S(exp) = -1/2 and S(z + eps z^3)(0) = 6 eps."""
        assert abs(schwarzian(HoloMap.exponential(), 0.3 + 0.2j) + 0.5) < 1e-14
        assert abs(schwarzian(HoloMap.cubic(0.01), 0j) - 0.06) < 1e-14

    def test_cocycle(self, rng):
        """S(f o g) = (S(f) o g) g'^2 + S(g) on random inputs."""
        for _ in range(100):
            f = HoloMap.cubic(rng.uniform(-0.1, 0.1))
            g = HoloMap.cubic(rng.uniform(-0.1, 0.1))
            z = disc_samples(rng, 1, 0.5)[0]
            lhs = schwarzian(g.then(f), z)
            rhs = schwarzian(f, g(z)) * g.df(z) ** 2 + schwarzian(g, z)
            assert abs(lhs - rhs) < 1e-9

    def test_schwarzian_is_twice_the_pullback_tensor(self, rng):
        """S(f) = 2 B(|dz|^2, f*|dz|^2)."""
        flat = ConformalMetric.flat(Chart.disc())
        for _ in range(20):
            f = HoloMap.cubic(rng.uniform(-0.1, 0.1))
            z = disc_samples(rng, 1, 0.5)[0]
            assert abs(schwarzian(f, z) - 2 * schwarzian_tensor(flat, pullback_metric(f, flat), z)) < 1e-10

    def test_tensor_naturality(self, rng):
        """B(f*s1, f*s2) = f*B(s1, s2)."""
        s1 = ConformalMetric(Chart.disc(), (AnalyticLogDensity.polynomial_perturbation([0.1, -0.05j], [0.2]),))
        s2 = ConformalMetric.poincare()
        f = HoloMap.cubic(0.05)
        for z in disc_samples(rng, 10, 0.5):
            lhs = schwarzian_tensor(pullback_metric(f, s1), pullback_metric(f, s2), z)
            rhs = pullback_qd(f, QuadDifferential(lambda w: schwarzian_tensor(s1, s2, w), Chart.disc()))(z)
            assert abs(lhs - rhs) < 1e-10

    def test_moebius_flat_metrics(self, rng):
        """B vanishes on Poincaré and spherical metrics and is scale invariant."""
        zs = disc_samples(rng)
        assert np.allclose(b_tensor(ConformalMetric.poincare(), zs), 0, atol=1e-12)
        assert np.allclose(b_tensor(ConformalMetric.spherical(), zs), 0, atol=1e-12)
        s = ConformalMetric.poincare().with_factor(AnalyticLogDensity.polynomial_perturbation([0.2], [0.1]))
        assert np.allclose(b_tensor(s.scaled(0.7), zs), b_tensor(s, zs), atol=1e-14)

    def test_rescaled_family(self):
        """S(f_s)(z) = s^2 S(f)(sz) and f_0 is linear."""
        f = HoloMap.cubic(0.05)
        z = 0.4 + 0.3j
        for s in (0.25, 0.5, 1.0):
            assert abs(schwarzian(f.rescaled(s), z) - s**2 * schwarzian(f, s * z)) < 1e-14
        assert abs(schwarzian(f.rescaled(0.0), z)) < 1e-14

    def test_degenerate_derivative(self):
        """f' = 0 is rejected."""
        with pytest.raises(DegenerateDerivative):
            schwarzian(HoloMap.linear(0.0), 0.1)


class TestQuadDifferential:
    """Pullbacks and norms of quadratic differentials."""

    def test_norm_in_poincare_metric(self):
        """||c dz^2||_h = |c| (1 - |z|^2)^2 / 4."""
        z = 0.5
        assert abs(qd_norm(QuadDifferential.constant(2.0, Chart.disc()), ConformalMetric.poincare(), z) - 2 * 0.75**2 / 4) < 1e-14

    def test_pullback_leaving_the_chart(self):
        """A pullback whose image leaves the chart raises DomainMismatch."""
        phi = QuadDifferential.constant(1.0, Chart.disc(0j, 0.5))
        with pytest.raises(DomainMismatch):
            pullback_qd(HoloMap.linear(2.0), phi)(0.4)


class TestGridLogDensity:
    """Grid metrics in both derivative modes."""

    @pytest.fixture
    def poincare_grid(self):
        x = np.linspace(-0.7, 0.7, 141)
        xx, yy = np.meshgrid(x, x)
        values = np.log(2.0) - np.log(1.0 - np.abs(xx + 1j * yy) ** 2)
        return x, values

    @pytest.mark.parametrize("interp", ["fd4", "quintic"])
    def test_jets_match_the_analytic_metric(self, poincare_grid, interp):
        """Derivatives of a sampled Poincaré log-density match the closed form off the nodes."""
        x, values = poincare_grid
        grid = ConformalMetric.from_grid(x, x, values, interp=interp)
        exact = ConformalMetric.poincare()
        zs = np.array([0.0123 + 0.0456j, -0.3 + 0.2j, 0.41 - 0.05j])
        gj, ej = grid.jet(zs), exact.jet(zs)
        assert np.allclose(gj.eta, ej.eta, atol=1e-7)
        assert np.allclose(gj.eta_z, ej.eta_z, atol=1e-5)
        assert np.allclose(gj.eta_zz, ej.eta_zz, atol=1e-4)
        assert np.allclose(curvature(grid, zs), -1.0, atol=1e-3)

    def test_fd4_jets_converge_at_fourth_order(self):
        """Halving the spacing cuts the eta_z and eta_zz errors by about 16."""
        exact = ConformalMetric.poincare()
        zs = np.array([0.0123 + 0.0456j, -0.21 + 0.13j, 0.17 - 0.23j, 0.05 + 0.29j])
        ej = exact.jet(zs)
        errors = []
        for n in (71, 141, 281):
            x = np.linspace(-0.7, 0.7, n)
            xx, yy = np.meshgrid(x, x)
            values = np.log(2.0) - np.log(1.0 - np.abs(xx + 1j * yy) ** 2)
            gj = ConformalMetric.from_grid(x, x, values, interp="fd4").jet(zs)
            errors.append((np.abs(gj.eta_z - ej.eta_z).max(), np.abs(gj.eta_zz - ej.eta_zz).max()))
        for coarse, fine in zip(errors[:-1], errors[1:]):
            assert np.log2(coarse[0] / fine[0]) >= 3.5
            assert np.log2(coarse[1] / fine[1]) >= 3.5

    def test_margin_is_enforced(self, poincare_grid):
        """Queries in the edge margin raise OutOfDomain."""
        x, values = poincare_grid
        term = GridLogDensity(x, x, values)
        with pytest.raises(OutOfDomain):
            term.jet(0.699 + 0j)

    def test_csv_preserves_the_grid(self, poincare_grid, tmp_path):
        """A written grid metric reads back with identical values."""
        x, values = poincare_grid
        path = tmp_path / "metric.csv"
        write_grid_metric_csv(path, GridLogDensity(x, x, values))
        again = read_grid_metric_csv(path)
        assert np.array_equal(again.values, values)
        assert np.allclose(again.x, x, atol=1e-15)
