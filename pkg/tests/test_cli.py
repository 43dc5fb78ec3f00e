import csv
import json
import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, strategies as st

from progexp.checks import REGISTRY
from progexp.cli import main, to_json
from progexp.scenario import ConfigError, parse_scenario

NULL = """\
id: null-case
grid: {T: 1.0, K: 20}
ensemble: {n_paths: 5000, seed: 3}
model: {kind: independent, rate: 1.0}
tests: [null-drift]
output: {dir: out, sample_paths: 3}
"""

POWER = """\
id: power
grid: {T: 1.0, K: 40}
ensemble: {n_paths: 20000, seed: 11}
model: {kind: bridge_lognormal, T0: 2.0}
tests: [bridge-power]
output: {dir: out}
"""


def _write(tmp_path, text, name="scenario.yaml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return path


def test_list_checks_sorted_and_complete(capsys):
    assert main(["list-checks"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    names = [line.split()[0] for line in lines]
    assert names == sorted(names)
    for name in ("telescope", "shrinkage-eq40", "multi-drift-n2", "multi-drift-n3",
                 "null-drift", "bridge-power", "density-martingale", "density-normalization",
                 "single-decomposition", "marked-coincidence", "multi-reduction",
                 "z-empty-consistency", "multi-window-oracle", "q-integral-zero"):
        assert name in names
    assert all(len(line.split(None, 1)) == 2 for line in lines)


def test_null_scenario_exit_zero(tmp_path):
    cfg = _write(tmp_path, NULL)
    assert main(["run", str(cfg)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "paths.csv")))
    assert len(rows) == 3 * 21
    assert {r["drift_before"] for r in rows} == {"0"} and {r["drift_after"] for r in rows} == {"0"}
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["passed"] is True
    assert (tmp_path / "out" / "summary.txt").read_text().startswith("scenario null-case: PASS")


def test_power_scenario_fails_by_design(tmp_path):
    cfg = _write(tmp_path, POWER)
    assert main(["run", str(cfg)]) == 1
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    check = report["checks"][0]
    assert check["metrics"]["horizon_abs_z"] > 10
    assert {"scenario", "op", "pair", "feature", "z", "se", "verdict"} == set(check["records"][0])


BAD = {
    "K1": (NULL.replace("K: 20", "K: 1"), 2, "'K' must be >= 2"),
    "unknown-key": (NULL.replace("seed: 3", "seed: 3, colour: red"), 3, "unknown key 'colour'"),
    "few-paths": (NULL.replace("n_paths: 5000", "n_paths: 99"), 3, "n_paths"),
    "unknown-check": (NULL.replace("[null-drift]", "[null-drift, nope]"), 5, "unknown check"),
    "wrong-model": (NULL.replace("[null-drift]", "[shrinkage-eq40]"), 5, "does not apply"),
    "horizon": (POWER.replace("T: 1.0", "T: 1.9"), 2, "exceeds 0.9*T0"),
    "kind": (NULL.replace("kind: independent", "kind: gamma"), 4, "unknown model kind"),
    "yaml": (NULL.replace("grid: {T: 1.0, K: 20}", "grid: {T: 1.0, K: 20"), None, "malformed"),
    "duplicate": (NULL + "id: again\n", 7, "duplicate key"),
    "family-n": ("""\
        id: fam
        grid: {T: 1.0, K: 20}
        ensemble: {n_paths: 500, seed: 1}
        model: {kind: independent_driver_family, n: 2}
        tests: [multi-drift-n3]
        """, 5, "n = 3"),
}


@pytest.mark.parametrize("case", sorted(BAD))
def test_config_errors_exit_two(tmp_path, capsys, case):
    text, line, fragment = BAD[case]
    cfg = _write(tmp_path, text)
    assert main(["run", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert fragment in err
    if line is not None:
        assert f"scenario.yaml:{line}:" in err


def test_missing_config_exit_two(tmp_path):
    assert main(["run", str(tmp_path / "absent.yaml")]) == 2


def test_parse_defaults():
    sc = parse_scenario(NULL)
    assert (sc.T, sc.K, sc.n_paths, sc.mode, sc.bracket, sc.integrand) == \
        (1.0, 20, 5000, "plain", "covariation", (1.0, 0.0))
    with pytest.raises(ConfigError):
        parse_scenario("[1, 2]")


def test_every_registered_check_names_its_kinds():
    for check in REGISTRY.values():
        assert check.kinds and check.description


def test_emit_plot_data_matches_run(tmp_path):
    cfg = _write(tmp_path, NULL.replace("dir: out", "dir: run"))
    assert main(["run", str(cfg)]) == 0
    assert main(["emit-plot-data", str(cfg), "--out", str(tmp_path / "emit")]) == 0
    assert (tmp_path / "emit" / "paths.csv").read_text() == (tmp_path / "run" / "paths.csv").read_text()


def test_repeated_runs_and_threads_are_byte_identical(tmp_path):
    cfg = _write(tmp_path, NULL.replace("n_paths: 5000", "n_paths: 9000"))
    outs = []
    for i, threads in enumerate(["1", "4", "1"]):
        env = dict(os.environ, PROGEXP_THREADS=threads)
        res = subprocess.run([sys.executable, "-m", "progexp", "run", str(cfg), "--out",
                              str(tmp_path / f"o{i}")], env=env, capture_output=True)
        assert res.returncode == 0, res.stderr
        outs.append((tmp_path / f"o{i}" / "report.json").read_bytes())
    assert outs[0] == outs[1] == outs[2]


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_json_floats_round_trip(x):
    assert json.loads(to_json({"x": x}))["x"] == x


def test_json_layout():
    text = to_json({"a": [1, 2.5], "b": {"c": True, "d": None}, "e": np.float64(0.1)})
    assert json.loads(text) == {"a": [1, 2.5], "b": {"c": True, "d": None}, "e": 0.1}
    assert "0.10000000000000001" in text
    with pytest.raises(TypeError):
        to_json({"x": object()})


def test_shipped_scenarios_parse():
    from pathlib import Path

    from progexp.scenario import load_scenario

    root = Path(__file__).resolve().parents[1] / "scenarios"
    files = sorted(root.glob("*.yaml"))
    assert files
    for path in files:
        assert load_scenario(path).tests
