"""Tests for the invariant suite behind `cmc-foliation validate`."""

import numpy as np
import pytest

from cmc_foliation import validation
from cmc_foliation.cmc_solver import SolverConfig
from cmc_foliation.config import parse_params
from cmc_foliation.errors import NewtonDiverged, OutOfRange
from cmc_foliation.validation import (
    InvariantResult,
    format_table,
    mesh_suite,
    run_suite,
    schwarzian_suite,
)


@pytest.fixture
def params():
    return parse_params({"n_random": "5", "subdiv": "2", "grid_points": "25"})


class TestHelpers:
    """Row constructors."""

    def test_below_and_at_least(self):
        """Thresholds are strict for residuals and inclusive for bounds; NaN fails."""
        assert validation._below("g", "n", 1e-12, 1e-10).passed
        assert not validation._below("g", "n", 1e-10, 1e-10).passed
        assert not validation._below("g", "n", float("nan"), 1.0).passed
        assert validation._at_least("g", "n", 2.0, 2.0).passed

    def test_raises(self):
        """Only the expected error counts as a pass."""

        def boom():
            raise OutOfRange("x")

        assert validation._raises("g", "n", boom, OutOfRange).passed
        assert not validation._raises("g", "n", boom, NewtonDiverged).passed
        assert not validation._raises("g", "n", lambda: None, OutOfRange).passed

    def test_format_table(self):
        """One header line plus one PASS/FAIL line per result."""
        rows = [InvariantResult("a", "first", 1e-12, 1e-10, True), InvariantResult("b", "second", 1.0, 0.5, False)]
        lines = format_table(rows).splitlines()
        assert len(lines) == 3
        assert lines[1].endswith("PASS")
        assert lines[2].endswith("FAIL")
        assert rows[1].as_row()["passed"] is False


class TestGroups:
    """Individual groups at a small scale."""

    def test_schwarzian_group_passes(self, params, rng):
        """All Schwarzian identities hold on a handful of random inputs."""
        rows = schwarzian_suite(params, rng)
        assert len(rows) == 6
        assert all(r.passed for r in rows), [r for r in rows if not r.passed]

    def test_mesh_group_passes(self, params, rng):
        """The octagon mesh invariants hold at subdiv 2."""
        rows = mesh_suite(params, rng)
        assert all(r.passed for r in rows), [r for r in rows if not r.passed]

    def test_aborted_group_is_reported(self, params, monkeypatch):
        """A CmcError inside a group becomes one failing row and the other groups still run."""

        def broken(params, rng):
            raise OutOfRange("forced")

        monkeypatch.setattr(validation, "schwarzian_suite", broken)
        monkeypatch.setattr(validation, "epstein_suite", lambda p, r: [])
        monkeypatch.setattr(validation, "mesh_suite", lambda p, r: [])
        monkeypatch.setattr(validation, "solver_suite", lambda p, r, c: [InvariantResult("cmc_solver", "ok", 0.0, 1.0, True)])
        monkeypatch.setattr(validation, "foliation_suite", lambda p, r, c: [])
        rows = run_suite(params, 0, SolverConfig())
        assert [r.group for r in rows] == ["schwarzian", "cmc_solver"]
        assert not rows[0].passed
        assert "OutOfRange" in rows[0].detail


@pytest.mark.slow
class TestFullSuite:
    """The complete suite with the desk-scale configuration."""

    def test_everything_passes(self, rng):
        """Every invariant passes for the shipped validate settings."""
        params = parse_params(
            {"n_random": "20", "grid_points": "33", "h_lo": "-0.5", "h_hi": "0.5", "n_leaves": "3", "sample_radius": "0.3", "sample_points": "3"}
        )
        rows = run_suite(params, 7, SolverConfig())
        failed = [r for r in rows if not r.passed]
        assert not failed, failed
        assert len({r.group for r in rows}) == 5
        assert np.isfinite([r.residual for r in rows]).all()
