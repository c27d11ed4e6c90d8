import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from depcalab.cli import SUBCOMMANDS, build_parser, run

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

CASES = [
    ("solve", "scalar", {"trajectory.csv", "summary.json"}),
    ("reduce", "scalar", {"discrete.csv", "Z.csv", "summary.json"}),
    ("dichotomy", "scalar", {"dichotomy.json"}),
    ("rap-scan", "rap_demo", {"rap_scan.csv", "rap_summary.json"}),
    ("perturb", "perturb_discrete", {"certificate.json", "nu_ladder.csv", "solution.csv"}),
    ("perturb", "perturb_depca", {"certificate.json", "nu_ladder.csv", "solution.csv"}),
    ("nonlinear", "nonlinear", {"certificate.json", "solution.csv"}),
    ("oracle-check", "oracle", {"oracle.csv", "summary.json"}),
]


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


@pytest.mark.parametrize("command,config,artifacts", CASES, ids=[f"{c}-{f}" for c, f, _ in CASES])
def test_subcommands_succeed(tmp_path, command, config, artifacts):
    out = tmp_path / "out"
    assert run([command, str(CONFIGS / f"{config}.json"), "-o", str(out)]) == 0
    present = {p.name for p in out.iterdir()}
    assert artifacts | {"manifest.json"} <= present
    man = _manifest(out)
    assert man["exit_status"] == 0 and man["subcommand"] == command
    assert man["backend"] in ("cython", "python")


@pytest.mark.slow
def test_lasota_subcommand(tmp_path):
    out = tmp_path / "out"
    assert run(["lasota", str(CONFIGS / "lasota.json"), "-o", str(out)]) == 0
    assert {"trajectory.csv", "gamma_sweep.csv", "kernel_scan.csv", "summary.json"} <= {p.name for p in out.iterdir()}


def test_hypothesis_failure_exit_code(tmp_path, capsys):
    out = tmp_path / "out"
    assert run(["dichotomy", str(CONFIGS / "no_dichotomy.json"), "-o", str(out)]) == 2
    assert "not verified" in capsys.readouterr().err
    man = _manifest(out)
    assert man["exit_status"] == 2 and "unit circle" in man["error"]


def test_no_contraction_exit_code(tmp_path):
    out = tmp_path / "out"
    code = run(["perturb", str(CONFIGS / "perturb_discrete.json"), "-o", str(out), "--nu", "5"])
    assert code == 2
    assert "contraction" in _manifest(out)["error"]


def test_usage_errors(tmp_path, capsys):
    assert run(["solve", str(tmp_path / "missing.json"), "-o", str(tmp_path / "o")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["solve", str(bad), "-o", str(tmp_path / "o")]) == 1
    assert run(["solve", str(CONFIGS / "no_dichotomy.json"), "-o", str(tmp_path / "o")]) == 1
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args(["bogus", "x.json"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args(["solve", "x.json", "--m", "abc"])
    assert info.value.code == 1


def test_overrides_reach_the_run(tmp_path):
    out = tmp_path / "out"
    assert run(["solve", str(CONFIGS / "scalar.json"), "-o", str(out), "--m", "4", "--window", "-2", "2"]) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert len(lines) == 1 + 4 * 4 + 1
    assert lines[1].split(",")[0] in ("-2", "-2.0")


def test_parser_lists_every_subcommand():
    help_text = build_parser().format_help()
    for name in SUBCOMMANDS:
        assert name in help_text


@pytest.mark.skipif(shutil.which("depca-lab") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(
        ["depca-lab", "solve", str(CONFIGS / "scalar.json"), "-o", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "depcalab.cli", "dichotomy", str(CONFIGS / "no_dichotomy.json"), "-o", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2
