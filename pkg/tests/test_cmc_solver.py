"""Tests for the CMC residual, its linearization, Newton and continuation."""

import math

import numpy as np
import pytest

from cmc_foliation import cmc_solver
from cmc_foliation.cmc_solver import (
    DiscGrid,
    SolverConfig,
    anchor_operator,
    closed_surface_context,
    continuation,
    end_map,
    end_map_jacobian,
    geometric_mean_curvature_check,
    leaf_metric,
    linearize_G,
    mean_curvature_residual,
    metric_terms,
    newton_solve,
    residual_G,
    u_from_v,
    v_from_u,
)
from cmc_foliation.errors import (
    ConfigError,
    ContinuationStalled,
    NewtonDiverged,
    NonEquivariantField,
    OutOfRange,
)
from cmc_foliation.surface_mesh import QDField, manufactured_qd_field


def smooth_field(ctx, amplitude=1e-2):
    z = ctx.space.points
    return amplitude * np.exp(-4.0 * np.abs(z) ** 2) * (1.0 + z.real - 0.5 * z.imag)


class TestSolverConfig:
    """Validation of solver parameters."""

    def test_defaults_are_valid(self):
        """The default configuration constructs."""
        cfg = SolverConfig()
        assert cfg.newton_tol == 1e-11
        assert cfg.max_newton == 25

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"newton_tol": 0.0},
            {"max_newton": 0},
            {"h_step": 0.01, "h_step_min": 0.02},
            {"damping": 1.0},
            {"damping": 0.0},
        ],
    )
    def test_bad_values_raise(self, kwargs):
        """Each invalid setting is a ConfigError."""
        with pytest.raises(ConfigError):
            SolverConfig(**kwargs)

    def test_disc_grid_bounds(self):
        """Too few grid points or a radius outside (0, 1) are rejected."""
        with pytest.raises(ConfigError):
            DiscGrid.build(9, 0.9)
        with pytest.raises(ConfigError):
            DiscGrid.build(33, 1.0)

    def test_disc_grid_has_spare_cells(self):
        """The unknowns stop three cells short of the grid edge."""
        grid = DiscGrid.build(33, 0.9)
        assert grid.x[-1] - 0.9 == pytest.approx(3 * grid.spacing)
        assert np.all(np.abs(grid.points) <= 0.9)


class TestResidual:
    """The renormalized residual and the change of variables."""

    def test_zero_field_solves_every_h_for_phi_zero(self, flat_ctx):
        """v = 0 gives G = 0 for phi = 0 across [-1, 1)."""
        v = flat_ctx.zero_field()
        for H in np.linspace(-1.0, 0.99, 20):
            assert np.abs(residual_G(H, flat_ctx, v)).max() < 1e-13

    def test_zero_field_solves_the_end_for_any_phi(self, cubic_ctx):
        """At H = -1 the residual reduces to 2 + 2K, zero for v = 0."""
        assert np.abs(residual_G(-1.0, cubic_ctx, cubic_ctx.zero_field())).max() < 1e-13

    def test_phi_breaks_the_anchor_away_from_the_end(self, cubic_ctx):
        """For phi != 0 and H > -1 the zero field is not a solution."""
        assert np.abs(residual_G(0.0, cubic_ctx, cubic_ctx.zero_field())).max() > 1e-8

    def test_h_outside_closed_interval_raises(self, flat_ctx):
        """|H| > 1 is rejected."""
        with pytest.raises(OutOfRange):
            residual_G(1.5, flat_ctx, flat_ctx.zero_field())

    def test_change_of_variables_round_trip(self):
        """u and v differ by the constant (1/2) log((1+H)/(1-H))."""
        v = np.array([0.1, -0.2, 0.3])
        assert np.allclose(v_from_u(0.4, u_from_v(0.4, v)), v, atol=1e-15)
        assert np.allclose(u_from_v(0.0, v), v, atol=1e-15)
        with pytest.raises(OutOfRange):
            u_from_v(1.0, v)

    def test_mean_curvature_residual_is_proportional_to_g(self, cubic_ctx):
        """(H_formula - H) * D = -(1+H)/(1-H) * G at every node."""
        H = 0.3
        s = (1.0 + H) / (1.0 - H)
        v = smooth_field(cubic_ctx)
        t = metric_terms(cubic_ctx, v)
        denom = (s * t.K - 1.0) ** 2 - 16.0 * s * s * t.bnorm2
        lhs = mean_curvature_residual(H, cubic_ctx, u_from_v(H, v)) * denom
        rhs = -s * residual_G(H, cubic_ctx, v)
        assert np.abs(lhs - rhs).max() < 1e-10 * max(1.0, np.abs(rhs).max())


class TestLinearization:
    """dG against the closed-form anchor operator and finite differences."""

    @pytest.mark.parametrize("H", [-0.7, 0.0, 0.6])
    def test_anchor_operator(self, flat_ctx, H):
        """At phi = 0, v = 0 the linearization is 2(2 id - Delta) for every H."""
        w = smooth_field(flat_ctx, 1.0)
        got = linearize_G(H, flat_ctx, flat_ctx.zero_field()).apply(w)
        expected = anchor_operator(flat_ctx) @ w
        assert np.linalg.norm(got - expected) / np.linalg.norm(expected) < 1e-10

    def test_matches_central_differences(self, cubic_ctx):
        """apply(w) agrees with a central difference of G at a non-trivial v."""
        H = 0.3
        v = smooth_field(cubic_ctx)
        w = smooth_field(cubic_ctx, 1.0) * (1.0 - cubic_ctx.space.points.imag)
        eps = 1e-6
        fd = (residual_G(H, cubic_ctx, v + eps * w) - residual_G(H, cubic_ctx, v - eps * w)) / (2 * eps)
        got = linearize_G(H, cubic_ctx, v).apply(w)
        assert np.linalg.norm(got - fd) / np.linalg.norm(fd) < 1e-6

    def test_one_sided_quotient_is_first_order(self, cubic_ctx):
        """The forward-difference error drops tenfold with each tenfold smaller eps."""
        H = 0.3
        v = smooth_field(cubic_ctx)
        w = smooth_field(cubic_ctx, 1.0) * (1.0 - cubic_ctx.space.points.imag)
        got = linearize_G(H, cubic_ctx, v).apply(w)
        base = residual_G(H, cubic_ctx, v)
        errors = []
        for eps in (1e-4, 1e-5, 1e-6):
            fd = (residual_G(H, cubic_ctx, v + eps * w) - base) / eps
            errors.append(np.linalg.norm(fd - got) / np.linalg.norm(got))
        assert errors[0] < 1e-2
        for coarse, fine in zip(errors[:-1], errors[1:]):
            assert 8.0 < coarse / fine < 12.0

    def test_zero_direction(self, cubic_ctx):
        """The zero direction maps to zero."""
        lin = linearize_G(0.2, cubic_ctx, cubic_ctx.zero_field())
        assert np.all(lin.apply(cubic_ctx.zero_field()) == 0.0)


class TestNewton:
    """Damped Newton on G(H, .) = 0."""

    def test_recovers_anchor_from_perturbed_seed(self, flat_ctx):
        """A perturbed seed converges back to v = 0 in a few iterations."""
        report = newton_solve(0.25, flat_ctx, smooth_field(flat_ctx, 1e-3))
        assert np.abs(report.v).max() < 1e-9
        assert report.iterations <= 6
        assert report.residual_norm < SolverConfig().newton_tol

    def test_quadratic_convergence(self, flat_ctx):
        """Residuals decrease monotonically and superlinearly above round-off."""
        report = newton_solve(-0.4, flat_ctx, smooth_field(flat_ctx, 1e-2))
        history = report.history
        assert all(b < a for a, b in zip(history[:-1], history[1:]))
        for a, b in zip(history[:-1], history[1:]):
            if b > 1e-10:
                assert b < 0.1 * a
        assert report.iterations <= 8

    def test_solves_cubic_leaf(self, cubic_ctx):
        """A small cubic developing map converges from zero at H = 0."""
        report = newton_solve(0.0, cubic_ctx, cubic_ctx.zero_field())
        assert report.residual_norm < SolverConfig().newton_tol
        assert report.residual_sup == pytest.approx(np.abs(residual_G(0.0, cubic_ctx, report.v)).max())

    @pytest.mark.parametrize("H", [-1.0, 1.0, 1.2])
    def test_endpoint_raises(self, flat_ctx, H):
        """H = -1, H = 1 and beyond are outside Newton's range."""
        with pytest.raises(OutOfRange):
            newton_solve(H, flat_ctx, flat_ctx.zero_field())

    def test_iteration_cap(self, cubic_ctx):
        """With max_newton = 1 and a tight tolerance the solve gives up."""
        cfg = SolverConfig(newton_tol=1e-30, max_newton=1)
        with pytest.raises(NewtonDiverged) as info:
            newton_solve(0.0, cubic_ctx, cubic_ctx.zero_field(), cfg)
        assert info.value.H == 0.0
        assert len(info.value.history) >= 1


class TestClosedSurface:
    """The solver on the octagon mesh."""

    def test_rejects_non_equivariant_field(self, small_mesh):
        """Raw-node coefficients that ignore the cocycle are refused."""
        with pytest.raises(NonEquivariantField):
            closed_surface_context(small_mesh, QDField(small_mesh.nodes.astype(complex), "raw z"))

    def test_newton_on_manufactured_field(self, small_mesh):
        """A small equivariant phi converges at H = 0."""
        ctx = closed_surface_context(small_mesh, manufactured_qd_field(small_mesh, 0.01))
        report = newton_solve(0.0, ctx, ctx.zero_field())
        assert report.residual_norm < SolverConfig().newton_tol
        assert np.abs(report.v).max() > 0

    def test_leaf_metric_needs_disc_mode(self, small_mesh):
        """Off-node leaf metrics are a disc-mode feature."""
        ctx = closed_surface_context(small_mesh, QDField.zero(small_mesh))
        with pytest.raises(ValueError):
            leaf_metric(ctx, 0.0, ctx.zero_field())


class TestContinuation:
    """Marching from the end anchor."""

    def test_fuchsian_leaves_are_umbilical(self, flat_ctx):
        """For phi = 0 every leaf has u = -artanh(H) and needs no Newton step."""
        result = continuation((-0.99, 0.99), flat_ctx, n_leaves=5)
        assert np.allclose(result.H_values, np.linspace(-0.99, 0.99, 5))
        for entry in result.entries:
            assert np.abs(entry.u + math.atanh(entry.H)).max() < 1e-10
            assert entry.newton_iters == 0
            assert entry.branch == "end"

    def test_cubic_run_with_cross_check(self, cubic_ctx):
        """Both branches converge to the same leaves."""
        result = continuation((-0.5, 0.5), cubic_ctx, n_leaves=3, cross_check=True)
        assert len(result.entries) == 3
        assert result.max_residual() <= SolverConfig().newton_tol
        assert result.cross_check is not None and result.cross_check < 1e-8
        assert [e.H for e in result.fuchsian_entries] == [e.H for e in result.entries]
        assert any(s["branch"] == "fuchsian-ramp" for s in result.steps)
        assert result.peak_rss_mb > 0

    def test_explicit_targets(self, flat_ctx):
        """Targets are sorted and must lie in the range."""
        result = continuation((-0.5, 0.5), flat_ctx, targets=[0.5, -0.5, 0.0])
        assert list(result.H_values) == [-0.5, 0.0, 0.5]
        with pytest.raises(OutOfRange):
            continuation((-0.5, 0.5), flat_ctx, targets=[0.7])

    @pytest.mark.parametrize("h_range", [(-1.0, 0.5), (-0.5, 1.0), (0.5, -0.5)])
    def test_bad_range_raises(self, flat_ctx, h_range):
        """Ranges touching the ends or reversed are rejected."""
        with pytest.raises(OutOfRange):
            continuation(h_range, flat_ctx, n_leaves=2)

    def test_no_leaves_raises(self, flat_ctx):
        """n_leaves must be positive."""
        with pytest.raises(ConfigError):
            continuation((-0.5, 0.5), flat_ctx, n_leaves=0)

    def test_stall_after_repeated_failures(self, flat_ctx, monkeypatch):
        """Every Newton failure halves the step until it drops below h_step_min."""

        def always_fail(H, ctx, v, cfg):
            raise NewtonDiverged("forced", H, [1.0])

        monkeypatch.setattr(cmc_solver, "newton_solve", always_fail)
        with pytest.raises(ContinuationStalled) as info:
            continuation((-0.5, 0.5), flat_ctx, SolverConfig(h_step=0.05, h_step_min=0.01), n_leaves=2)
        assert info.value.history == [1.0]


class TestLeafGeometry:
    """Off-node checks on solved leaves."""

    def test_geometric_mean_curvature_of_umbilical_leaf(self, flat_ctx):
        """The Epstein surface of u = -artanh(H) has mean curvature H."""
        H = 0.5
        u = np.full(flat_ctx.space.size, -math.atanh(H))
        check = geometric_mean_curvature_check(flat_ctx, H, u, sample_radius=0.3, sample_points=3)
        assert check.max_deviation < 1e-4
        assert len(check.samples) == 9

    def test_end_map_at_zero_is_the_boundary(self, cubic_ctx):
        """At t = 0 the end map is (f(z), 0)."""
        pts = end_map(cubic_ctx, 0.0, cubic_ctx.zero_field())
        fz = cubic_ctx.f(cubic_ctx.space.points)
        assert np.allclose(pts[:, 0] + 1j * pts[:, 1], fz, atol=1e-15)
        assert np.all(pts[:, 2] == 0.0)

    def test_end_map_jacobian_matches_one_sided_difference(self, cubic_ctx):
        """The t-column agrees with (end_map(t) - end_map(0)) / t for small t."""
        v = smooth_field(cubic_ctx)
        t = 1e-5
        diff = (end_map(cubic_ctx, t, v) - end_map(cubic_ctx, 0.0, v)) / t
        jac = end_map_jacobian(cubic_ctx, v)
        column = jac[:, :, 2]
        assert np.abs(diff - column).max() < 1e-4 * np.abs(column).max()

    def test_end_map_jacobian_is_invertible(self, cubic_ctx):
        """The end map is a local diffeomorphism at t = 0."""
        jac = end_map_jacobian(cubic_ctx, cubic_ctx.zero_field())
        assert np.all(np.abs(np.linalg.det(jac)) > 0)
