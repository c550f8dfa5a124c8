import json
import subprocess
import sys

import pytest

from cfaudit.cli import main
from cfaudit.cohort import read_cohort, write_cohort


@pytest.fixture
def cohort_csv(tmp_path, small_cohort):
    p = tmp_path / "c.csv"
    write_cohort(small_cohort, p)
    return p


@pytest.fixture
def audit_json(tmp_path):
    p = tmp_path / "a.json"
    p.write_text(json.dumps({"k": 3, "tasks": ["mortality"], "model_families": ["logistic", "gbt"],
                             "gbt": {"n_rounds": 5}, "logistic": {"max_iter": 100}}))
    return p


def test_synth_writes_csv(tmp_path, capsys):
    out = tmp_path / "deep" / "c.csv"
    assert main(["synth", "--seed", "3", "--n-patients", "50", "--out", str(out)]) == 0
    table = read_cohort(out)
    assert len({r.patient_id for r in table.rows}) == 50
    assert "wrote" in capsys.readouterr().out


def test_synth_from_config_and_calibration(tmp_path):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"n_patients": 40, "seed": 9}))
    out = tmp_path / "c.csv"
    assert main(["synth", "--config", str(cfg), "--out", str(out), "--calibrate-mortality", "0.3"]) == 0
    assert out.exists()


def test_synth_bad_config_exits_1(tmp_path):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"bias_sd": -1}))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "c.csv")]) == 1


def test_audit_writes_report(tmp_path, cohort_csv, audit_json):
    out = tmp_path / "r"
    assert main(["audit", "--cohort", str(cohort_csv), "--config", str(audit_json), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["k"] == 3
    assert (out / "run_info.json").exists()


def test_audit_flags_override_config(tmp_path, cohort_csv, audit_json):
    out = tmp_path / "r"
    rc = main(["audit", "--cohort", str(cohort_csv), "--config", str(audit_json), "--out", str(out),
               "--seed", "4", "--models", "logistic", "--axes", "overall,hidden_hypoxemia",
               "--threshold", "0.4", "--k", "2", "--format", "both", "--save-models"])
    assert rc == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["config"]["seed"] == 4 and rep["config"]["k"] == 2 and rep["config"]["threshold"] == 0.4
    assert rep["config"]["axes"] == ["overall", "hidden_hypoxemia"]
    assert (out / "tests.csv").exists() and (out / "plot.csv").exists()
    assert len(list((out / "models").glob("*.json"))) == 2 * 2


def test_audit_env_output_dir(tmp_path, cohort_csv, audit_json, monkeypatch):
    monkeypatch.setenv("CFAUDIT_OUT", str(tmp_path / "env_out"))
    assert main(["audit", "--cohort", str(cohort_csv), "--config", str(audit_json)]) == 0
    assert (tmp_path / "env_out" / "report.json").exists()


def test_audit_seed_reproducible(tmp_path, cohort_csv, audit_json):
    for name in ("a", "b"):
        assert main(["audit", "--cohort", str(cohort_csv), "--config", str(audit_json), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_unknown_flag_exits_2(capsys):
    assert main(["audit", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err
    assert main([]) == 2


def test_strict_corrupted_cohort_exits_1(tmp_path, cohort_csv, capsys):
    lines = cohort_csv.read_text().splitlines()
    header = lines[0].split(",")
    row = lines[1].split(",")
    row[header.index("sao2")] = "65"
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join([lines[0], ",".join(row)] + lines[2:]) + "\n")
    assert main(["validate", "--cohort", str(bad), "--strict"]) == 1
    assert "range" in capsys.readouterr().err
    assert main(["validate", "--cohort", str(bad)]) == 1
    assert "range: 1" in capsys.readouterr().out
    assert main(["audit", "--cohort", str(bad), "--strict", "--out", str(tmp_path / "r")]) == 1


def test_validate_ok_prints_summary(cohort_csv, capsys):
    assert main(["validate", "--cohort", str(cohort_csv)]) == 0
    out = capsys.readouterr().out
    assert "violations" in out and "sodium" in out


def test_missing_cohort_file_exits_1(tmp_path):
    assert main(["validate", "--cohort", str(tmp_path / "nope.csv")]) == 1


def test_report_subcommand(tmp_path, cohort_csv, audit_json, capsys):
    out = tmp_path / "r"
    assert main(["audit", "--cohort", str(cohort_csv), "--config", str(audit_json), "--out", str(out)]) == 0
    assert main(["report", "--in", str(out / "report.json"), "--out", str(tmp_path / "tables")]) == 0
    assert (tmp_path / "tables" / "plot.csv").exists()
    assert "comparisons" in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "cfaudit", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("cfaudit ")
