import json
import shutil
from pathlib import Path

import pytest

from zeno.cli import main

ROOT = Path(__file__).resolve().parent.parent
SCEN = ROOT / "scenarios"


def write(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return path


def weak_scenario(value):
    return {
        "name": "weak",
        "system": {
            "levels": [{"label": "i", "energy": 1.0}, {"label": "f", "energy": 0.0}],
            "channels": [{"label": "0", "energy": 0.0}, {"label": "a", "energy": 1.0}],
        },
        "perturbation": {"elements": [{"bra": ["f", "a"], "ket": ["i", "0"], "value": value}]},
        "measurement": {"kind": "projective"},
        "schedule": {"tau": 1.0},
    }


def test_run_writes_requested_files(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(SCEN / "pulsed_dephasing.json"), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["components.csv", "survival.csv"]
    assert "total jump probability" in capsys.readouterr().out


def test_sweep_and_profile(tmp_path):
    out = tmp_path / "o"
    assert main(["sweep", str(SCEN / "anti_zeno_sweep.json"), "--out", str(out), "--workers", "2"]) == 0
    assert (out / "rates.csv").read_text().splitlines()[0] == "tau,rate,rate_golden_rule,regime"
    assert main(["profile", str(SCEN / "two_level_detector.json"), "--out", str(out)]) == 0
    assert (out / "profile.csv").read_text().startswith("omega,P\n")


def test_sweep_without_sweep_section(tmp_path):
    assert main(["sweep", str(SCEN / "minimal.json"), "--out", str(tmp_path)]) == 2


def test_grid_override_changes_nothing_material(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(SCEN / "minimal.json"), "--out", str(a)]) == 0
    assert main(["run", str(SCEN / "minimal.json"), "--out", str(b), "--grid", "64"]) == 0
    ra = (a / "components.csv").read_text().splitlines()[1].split(",")
    rb = (b / "components.csv").read_text().splitlines()[1].split(",")
    assert float(ra[1]) == pytest.approx(float(rb[1]), rel=1e-9)


def test_input_errors_exit_2(tmp_path, capsys):
    bad = weak_scenario(0.05)
    bad["schedule"]["colour"] = 1
    path = write(tmp_path, "bad.json", bad)
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "schedule.colour" in err and str(path) in err
    assert main(["run", str(path), "--out", str(tmp_path / "o"), "--no-strict"]) == 0
    assert main(["run", str(write(tmp_path, "broken.json", "{"))]) == 2
    assert main(["run", str(tmp_path / "missing.json")]) == 1


def test_verify_default_set(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "verify.json").read_text())
    assert len(report) == 4
    for rec in report:
        assert set(rec) == {"scenario", "exponent", "residual", "pass"}
    assert [r["scenario"] for r in report] == sorted(r["scenario"] for r in report)
    assert capsys.readouterr().out.count("PASS") >= 3


def test_verify_directory(tmp_path):
    scen = tmp_path / "scen"
    scen.mkdir()
    for name in ("minimal.json", "pulsed_dephasing.json", "anti_zeno_sweep.json"):
        shutil.copy(SCEN / name, scen / name)
    assert main(["verify", "--scenarios", str(scen), "--out", str(tmp_path / "o")]) == 0
    names = {r["scenario"] for r in json.loads((tmp_path / "o" / "verify.json").read_text())}
    assert names == {"minimal", "pulsed-dephasing"}


def test_verify_numerics_exit_3(tmp_path):
    scen = tmp_path / "scen"
    scen.mkdir()
    write(scen, "weak.json", weak_scenario(1e-7))
    assert main(["verify", "--scenarios", str(scen), "--out", str(tmp_path / "o")]) == 3


def test_verify_empty_directory(tmp_path):
    assert main(["verify", "--scenarios", str(tmp_path), "--out", str(tmp_path / "o")]) == 2
