"""Tests for the fp-control command line."""

import json
import sys

import pytest

from fp_control import cli
from fp_control.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, run
from fp_control.core.errors import CFLViolationError


def out_dir(small_scenario):
    """Output folder of the small scenario."""
    return small_scenario.parent / "out"


class TestExitCodes:
    """Tests for the mapping of failures to exit codes."""

    def test_forward_succeeds(self, small_scenario):
        """A forward run writes the density table and a sane summary."""
        assert run(["forward", "--config", str(small_scenario)]) == EXIT_OK
        out = out_dir(small_scenario)
        assert (out / "density.csv").is_file()
        summary = json.loads((out / "forward.json").read_text())
        assert summary["min_density"] >= 0.0
        assert 0.0 < summary["mass_T"] <= 1.0

    def test_missing_config(self, tmp_path):
        """A missing scenario file exits with the configuration code."""
        assert run(["forward", "--config", str(tmp_path / "none.json")]) == EXIT_CONFIG

    def test_unknown_override_key(self, small_scenario):
        """A misspelt override key exits with the configuration code."""
        argv = ["forward", "--config", str(small_scenario), "--override", "kapa=1"]
        assert run(argv) == EXIT_CONFIG

    def test_control_outside_range(self, small_scenario):
        """A constant control outside G exits with the configuration code."""
        argv = ["forward", "--config", str(small_scenario), "--control", "2.5"]
        assert run(argv) == EXIT_CONFIG

    @pytest.mark.parametrize("command", ["adjoint", "hjb", "gradcheck", "picard"])
    def test_noiseless_commands_reject_common_noise(self, small_scenario, command):
        """Commands without a common-noise solver refuse sigma0 > 0."""
        argv = [command, "--config", str(small_scenario), "--override", "sigma0=0.3"]
        assert run(argv) == EXIT_CONFIG

    def test_solver_failure(self, small_scenario, mocker):
        """Solver errors exit with the solver code."""
        mocker.patch(
            "fp_control.cli.solve_forward", side_effect=CFLViolationError("CFL number 1.5 > 1")
        )
        assert run(["forward", "--config", str(small_scenario)]) == EXIT_SOLVER

    def test_failures_are_logged(self, small_scenario, mocker):
        """The failing command and the error are passed to the logger as arguments."""
        failure = CFLViolationError("CFL number 1.5 > 1")
        mocker.patch("fp_control.cli.solve_forward", side_effect=failure)
        log = mocker.patch.object(cli, "logger")
        run(["forward", "--config", str(small_scenario)])
        log.error.assert_called_once_with("Solver failure in '%s': %s", "forward", failure)

    def test_config_flag_is_required(self):
        """argparse rejects a missing --config."""
        with pytest.raises(SystemExit) as exc:
            run(["forward"])
        assert exc.value.code == 2

    def test_main_reads_argv(self, small_scenario, monkeypatch):
        """main runs the command given on the command line."""
        monkeypatch.setattr(sys, "argv", ["fp-control", "hjb", "--config", str(small_scenario)])
        assert cli.main() == EXIT_OK


class TestCommands:
    """Tests for the artifacts of each subcommand."""

    def test_adjoint(self, small_scenario):
        """The adjoint command writes the density and the adjoint tables."""
        assert run(["adjoint", "--config", str(small_scenario), "--control", "0.5"]) == EXIT_OK
        out = out_dir(small_scenario)
        assert (out / "adjoint.csv").read_text().startswith("t,x,u,du_dx\n")
        assert (out / "density.csv").is_file()

    def test_hjb(self, small_scenario):
        """The hjb command writes the extracted control."""
        assert run(["hjb", "--config", str(small_scenario)]) == EXIT_OK
        out = out_dir(small_scenario)
        assert (out / "control.csv").read_text().startswith("t,x,gamma\n")

    def test_gradcheck(self, small_scenario):
        """One gradient check is written and passes."""
        assert run(["gradcheck", "--config", str(small_scenario)]) == EXIT_OK
        report = json.loads((out_dir(small_scenario) / "gradcheck.json").read_text())
        assert len(report["checks"]) == 1
        assert report["passed"]

    def test_picard(self, small_scenario):
        """The picard command writes every table and a converged summary."""
        assert run(["picard", "--config", str(small_scenario)]) == EXIT_OK
        out = out_dir(small_scenario)
        for name in ("density.csv", "adjoint.csv", "control.csv", "residuals.csv"):
            assert (out / name).is_file()
        assert (out / "active_set.csv").read_text().startswith("t,a_t,b_t,contiguous\n")
        summary = json.loads((out / "picard.json").read_text())
        assert summary["converged"]
        assert len(summary["cost_comparison"]["trials"]) == 2
        assert summary["cost_comparison"]["margin"] >= -1e-4

    def test_particles_with_state_dump(self, small_scenario):
        """--dump-state adds the Parquet state file."""
        argv = ["particles", "--config", str(small_scenario), "--dump-state", "--control", "1"]
        assert run(argv) == EXIT_OK
        out = out_dir(small_scenario)
        assert (out / "particles_summary.csv").read_text().startswith("t,mass,L,mean_X\n")
        assert (out / "particles_state.parquet").is_file()

    def test_particles_without_state_dump(self, small_scenario):
        """Without --dump-state only the summary is written."""
        assert run(["particles", "--config", str(small_scenario)]) == EXIT_OK
        assert not (out_dir(small_scenario) / "particles_state.parquet").exists()

    def test_compare(self, small_scenario):
        """Without common noise there is no shifted comparison."""
        assert run(["compare", "--config", str(small_scenario), "--control", "0.5"]) == EXIT_OK
        report = json.loads((out_dir(small_scenario) / "compare.json").read_text())
        assert report["n_particles"] == 500
        assert report["shifted_flat_distance"] is None
        assert report["flat_distance"] <= 0.2
        assert report["particle_cost_se"] > 0.0

    def test_compare_with_common_noise(self, small_scenario):
        """With sigma0 > 0 the shifted comparison is reported."""
        argv = ["compare", "--config", str(small_scenario), "--override", "sigma0=0.3"]
        assert run(argv) == EXIT_OK
        report = json.loads((out_dir(small_scenario) / "compare.json").read_text())
        assert report["shifted_flat_distance"] is not None

    def test_d0(self, small_scenario):
        """Flat distances are reported at evenly spaced snapshots."""
        assert run(["d0", "--config", str(small_scenario)]) == EXIT_OK
        report = json.loads((out_dir(small_scenario) / "d0.json").read_text())
        assert report["times"][0] == 0.0
        assert len(report["times"]) == len(report["flat_distances"]) == cli.D0_SNAPSHOTS + 1
        assert report["max_distance"] == max(report["flat_distances"])


class TestDeterminism:
    """Identical inputs give byte-identical artifacts."""

    @pytest.mark.parametrize(
        "command, artifact", [("forward", "density.csv"), ("particles", "particles_summary.csv")]
    )
    def test_repeat_runs(self, small_scenario, tmp_path, command, artifact):
        """Two runs with the same seed write the same bytes."""
        for name in ("a", "b"):
            argv = [command, "--config", str(small_scenario), "--out-dir", str(tmp_path / name)]
            assert run(argv + ["--seed", "4"]) == EXIT_OK
        assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()
