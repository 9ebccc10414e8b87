"""End-to-end tests of the cmc-foliation command line."""

from pathlib import Path

import numpy as np
import pytest

from cmc_foliation import main as cli
from cmc_foliation.errors import SingularLinearization
from cmc_foliation.exports import read_field_csv, read_kv
from cmc_foliation.main import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, main

TINY_FUCHSIAN = """\
mode=disc
developing_map=identity
grid_points=17
h_lo=-0.5
h_hi=0.5
n_leaves=3
sample_radius=0.2
sample_points=2
export_radius=0.5
export_resolution=4
"""

TINY_CUBIC = TINY_FUCHSIAN.replace("developing_map=identity", "developing_map=cubic\nepsilon=0.01")


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("CMC_OUT_DIR", "CMC_SEED", "CMC_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


def write_config(tmp_path: Path, text: str, name: str = "run.env") -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def solve(tmp_path: Path, text: str, name: str = "run") -> Path:
    out = tmp_path / name
    config = write_config(tmp_path, text, f"{name}.env")
    assert main(["solve", "--config", str(config), "--out", str(out), "--verbosity", "0"]) == EXIT_OK
    return out


class TestUsageErrors:
    """Exit code 2 for usage and configuration problems."""

    def test_unknown_command(self):
        """argparse rejects a command outside the table."""
        assert main(["plot"]) == EXIT_CONFIG

    def test_help_exits_cleanly(self):
        """--help is not an error."""
        assert main(["--help"]) == EXIT_OK

    def test_missing_config_file(self, tmp_path):
        """A --config path that does not exist."""
        assert main(["solve", "--config", str(tmp_path / "absent.env"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_h_at_the_end_is_rejected(self, tmp_path):
        """h_hi = 1 is outside the open interval."""
        config = write_config(tmp_path, "h_hi=1.0\n")
        assert main(["solve", "--config", str(config), "--out", str(tmp_path / "o")]) == EXIT_CONFIG

    @pytest.mark.parametrize("command", ["foliate", "export", "report"])
    def test_empty_run_directory(self, tmp_path, command):
        """Commands that read a run directory need a completed solve."""
        (tmp_path / "empty").mkdir()
        assert main([command, "--out", str(tmp_path / "empty")]) == EXIT_CONFIG


class TestSolve:
    """solve writes a complete, reloadable run directory."""

    def test_fuchsian_run(self, tmp_path):
        """Leaves of the identity map are umbilical and the artifacts are present."""
        out = solve(tmp_path, TINY_FUCHSIAN)
        for name in ("manifest.txt", "config.env", "summary.csv", "convergence.jsonl"):
            assert (out / name).is_file()
        assert not (out / "failure.txt").exists()
        manifest = read_kv(out / "manifest.txt")
        assert manifest["status"] == "ok"
        assert manifest["leaves"] == "3"
        fields = sorted((out / "fields").glob("leaf_*.csv"))
        assert len(fields) == 3
        H, _, v = read_field_csv(fields[0])
        assert H == -0.5
        assert np.abs(v).max() < 1e-12

    def test_solve_is_deterministic(self, tmp_path):
        """The same config gives byte-identical fields and summaries."""
        a = solve(tmp_path, TINY_CUBIC, "a")
        b = solve(tmp_path, TINY_CUBIC, "b")
        assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()
        for fa, fb in zip(sorted((a / "fields").iterdir()), sorted((b / "fields").iterdir())):
            assert fa.read_bytes() == fb.read_bytes()

    def test_failed_solve_writes_failure(self, tmp_path):
        """A Newton budget of one iteration stalls the cubic run."""
        config = write_config(tmp_path, TINY_CUBIC + "max_newton=1\nnewton_tol=1e-30\nh_step_min=0.02\n")
        out = tmp_path / "failed"
        assert main(["solve", "--config", str(config), "--out", str(out), "--verbosity", "0"]) == EXIT_FAILURE
        failure = read_kv(out / "failure.txt")
        assert failure["error"] == "ContinuationStalled"
        assert read_kv(out / "manifest.txt")["status"] == "failed"

    def test_any_solver_error_is_recorded(self, tmp_path, monkeypatch):
        """A solver error without an H still leaves failure.txt and a failed manifest."""

        def singular(*args, **kwargs):
            raise SingularLinearization("LU and GMRES both failed on the phi ramp")

        monkeypatch.setattr(cli, "continuation", singular)
        config = write_config(tmp_path, TINY_CUBIC + "cross_check=true\n")
        out = tmp_path / "singular"
        assert main(["solve", "--config", str(config), "--out", str(out), "--verbosity", "0"]) == EXIT_FAILURE
        failure = read_kv(out / "failure.txt")
        assert failure["error"] == "SingularLinearization"
        assert failure["H"] == ""
        assert "phi ramp" in failure["message"]
        manifest = read_kv(out / "manifest.txt")
        assert manifest["status"] == "failed"
        assert manifest["failed_H"] == ""


class TestPostProcessing:
    """foliate, export and report on a solved run."""

    def test_foliate_export_report(self, tmp_path, capsys):
        """The downstream commands succeed and write their artifacts."""
        out = solve(tmp_path, TINY_FUCHSIAN)
        assert main(["foliate", "--out", str(out), "--verbosity", "0"]) == EXIT_OK
        report = read_kv(out / "foliation_report.txt")
        assert report["passed"] == "true"
        assert (out / "leaves.csv").is_file()
        assert (out / "samples.csv").is_file()

        assert main(["export", "--out", str(out), "--verbosity", "0"]) == EXIT_OK
        exports = out / "exports"
        assert (exports / "stiffness.mtx").is_file()
        assert (exports / "diagnostics.csv").is_file()
        obj = (exports / "leaf_000.obj").read_text(encoding="utf-8").splitlines()
        assert sum(line.startswith("v ") for line in obj) == 1 + 4 * 8
        assert sum(line.startswith("f ") for line in obj) == 8 + 2 * 3 * 8

        capsys.readouterr()
        assert main(["report", "--out", str(out), "--verbosity", "0"]) == EXIT_OK
        printed = capsys.readouterr().out
        assert "residual_norm" in printed
        assert "passed" in printed

    def test_config_copy_reloads(self, tmp_path):
        """config.env of a run is itself a valid --config file."""
        out = solve(tmp_path, TINY_FUCHSIAN)
        again = tmp_path / "again"
        assert main(["solve", "--config", str(out / "config.env"), "--out", str(again), "--verbosity", "0"]) == EXIT_OK
        assert (out / "summary.csv").read_bytes() == (again / "summary.csv").read_bytes()
