"""
Tests for the command line runner and report emission.
"""

import csv
import json
import logging
import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import src.cli as cli
from src.cli import EXIT_FAIL, EXIT_INPUT, EXIT_PASS, main, oracle_suite, run
from src.config import RunConfig
from src.observability import StageTrace, trace_command
from src.version import VERSION

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def test_check_command(tmp_path):
    """Test: scal margin of S³ × ℝ² is its trace."""
    out = tmp_path / "check.json"
    code = main(["check", "--condition", "scal", "--operator", "model:d=3,r=1,n=5", "--out", str(out)])
    assert code == EXIT_PASS
    report = json.loads(out.read_text())
    assert report["result"]["margin"] == pytest.approx(3.0)
    assert report["verdict"] == "pass"
    assert report["summary"]["verdict"] == "pass"
    assert report["provenance"]["seed"] == 0
    assert list(report) == sorted(report)


def test_check_failures_and_bad_input():
    """Test: failed verdicts exit 1, malformed input exits 2."""
    report, code = run(RunConfig(command="check", condition="scal", operator="zero:n=4"))
    assert code == EXIT_FAIL
    assert report["verdict"] == "boundary"

    report, code = run(RunConfig(command="check", condition="nonsense", operator="identity:n=4"))
    assert code == EXIT_INPUT
    assert report["verdict"] == "error"

    assert run(RunConfig(command="check"))[1] == EXIT_INPUT
    assert main(["check", "--operator", "identity:n=4", "--threads", "0"]) == EXIT_INPUT


@pytest.mark.parametrize("error", [np.linalg.LinAlgError("Eigenvalues did not converge"),
                                   FloatingPointError("overflow encountered")])
def test_numerical_failures_exit_as_input_errors(monkeypatch, tmp_path, error):
    """Test: numerical breakdowns become an error report with exit 2."""
    def broken(config):
        raise error

    monkeypatch.setitem(cli.HANDLERS, "check", broken)
    out = tmp_path / "broken.json"
    report, code = run(RunConfig(command="check", operator="identity:n=4", out=str(out)))
    assert code == EXIT_INPUT
    assert report["verdict"] == "error"
    assert type(error).__name__ in report["error"]
    assert json.loads(out.read_text())["verdict"] == "error"


def test_csv_rows(tmp_path):
    """Test: --format csv writes the sample rows next to the report."""
    out = tmp_path / "rescale.json"
    code = main(["rescale", "--data", "product", "--n", "4", "--condition", "scal",
                 "--tgrid", "1,0.5,0.25", "--format", "csv", "--out", str(out)])
    assert code == EXIT_PASS
    with open(tmp_path / "rescale.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(row["t"]) for row in rows] == [0.25, 0.5, 1.0]
    assert json.loads(out.read_text())["result"]["t_star"] == pytest.approx(1.0)


def test_same_seed_same_report():
    """Test: reports agree apart from timestamps and runtimes."""
    def strip(report):
        report = json.loads(json.dumps(report))
        report.pop("generated_at")
        report["summary"].pop("runtime_s")
        return report

    config = RunConfig(command="average", samples=2000, seed=3)
    first, _ = run(config)
    second, _ = run(config)
    assert strip(first) == strip(second)


def test_average_command():
    """Test: averaging S² × ℝ² over O(3) gives a third of S³ × ℝ."""
    report, code = run(RunConfig(command="average", d=2, n=4, samples=100_000))
    assert code == EXIT_PASS
    assert report["result"]["lambda"] == pytest.approx(1.0 / 3.0, rel=0.02)


def test_bend_command():
    """Test: S⁴ with positive scalar curvature bends and passes end to end."""
    code = main(["bend", "--model", "sphere-point", "--n", "4", "--condition", "scal", "--rbar", "0.5",
                 "--grid", "9", "--oracle-samples", "3", "--seed", "1"])
    assert code == EXIT_PASS


def test_bend_command_flat_model(tmp_path):
    """Test: flat space bends to a full report; the verdict records the negative ramp margins."""
    out = tmp_path / "flat.json"
    code = main(["bend", "--model", "flat-point", "--n", "4", "--condition", "scal", "--rbar", "0.5",
                 "--grid", "9", "--oracle-samples", "0", "--out", str(out)])
    assert code == EXIT_FAIL
    report = json.loads(out.read_text())
    assert report["verdict"] == "fail"
    assert report["result"]["constants"]["boundary"] is True
    assert report["result"]["target_failures"] == 0
    assert report["result"]["step1_ok"] is False


def test_conformal_command(tmp_path):
    """Test: conformal surgery on the round S⁴ and the flat chart."""
    out = tmp_path / "conformal.json"
    assert main(["conformal", "--chart", "sphere", "--n", "4", "--condition", "scal", "--grid", "17",
                 "--out", str(out)]) == EXIT_PASS
    report = json.loads(out.read_text())
    assert report["result"]["end_deviation"] <= 1e-10
    assert main(["conformal", "--chart", "flat", "--n", "4", "--condition", "scal"]) == EXIT_INPUT


def test_oracle_suite():
    """Test: every cross-validation passes."""
    rows = oracle_suite(seed=3, fixtures=4)
    assert [row["name"] for row in rows] == ["riemann_round_trip", "sphere_chart_fd",
                                             "berger_canonical_variation", "conformal_change_formulas"]
    for row in rows:
        logger.info(f"{row['name']}: {row['deviation']:.2e}")
        assert row["verdict"] == "pass"


def test_version_flag(capsys):
    """Test: --version prints the release and exits cleanly."""
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert f"curvcone {VERSION}" in capsys.readouterr().out


def test_tracing_disabled_is_transparent(monkeypatch):
    """Test: without LangFuse the decorator and stage spans are no-ops."""
    monkeypatch.setenv("ENABLE_OBSERVABILITY", "false")

    @trace_command("noop")
    def noop(config):
        return {"verdict": "pass"}, EXIT_PASS

    assert noop(RunConfig(command="oracle")) == ({"verdict": "pass"}, EXIT_PASS)
    with StageTrace("noop.stage", {"n": 4}) as stage:
        stage.output["ok"] = True
    assert stage.span is None
    with pytest.raises(ZeroDivisionError):
        with StageTrace("noop.fail"):
            1 / 0
