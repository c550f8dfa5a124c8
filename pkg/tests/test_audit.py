import csv
import json

import numpy as np
import pytest

from cfaudit import audit, synth
from cfaudit.audit import (
    AuditConfig,
    AuditError,
    ConfounderViolation,
    check_confounders,
    compare_arms,
    read_report,
    report_json,
    run_audit,
    write_report,
)
from cfaudit.cohort import CohortTable, write_cohort
from cfaudit.eval.metrics import SubgroupMetricRecord
from cfaudit.eval.stats import stars
from cfaudit.prep import Arm, FeatureMatrix, build_feature_matrix

from .helpers import ZERO_BIAS, make_obs


@pytest.fixture(scope="module")
def biased_report():
    cfg = AuditConfig(
        k=3, seed=5, tasks=("mortality", "sofa_increase"), output_dir="unused",
        logistic={"max_iter": 150}, gbt={"n_rounds": 10},
    )
    table = synth.generate_cohort(synth.SynthConfig(n_patients=1200, seed=3))
    return run_audit(cfg, table=table), cfg, table


def test_zero_bias_null(zero_bias_cohort, fast_audit_config):
    rep = run_audit(fast_audit_config, table=zero_bias_cohort)
    assert rep.tests
    for t in rep.tests:
        assert t.control_values == t.treatment_values
        if t.n_pairs >= 2:
            assert t.mean_diff == 0.0 and t.t_stat == 0.0 and t.p_value == 1.0 and t.stars == ""


def test_every_task_family_has_overall_entry(biased_report):
    rep, cfg, _ = biased_report
    for task in cfg.tasks:
        for fam in cfg.model_families:
            for metric in ("auroc", "recall", "f1", "accuracy"):
                t = rep.test(task, fam, "overall", "all", metric)
                assert t.n_pairs == cfg.k


def test_report_contents(biased_report):
    rep, cfg, table = biased_report
    assert rep.config["hyperparameters"]["gbt"]["n_rounds"] == 10
    assert rep.config["hyperparameters"]["logistic"]["l2_lambda"] == 1.0
    assert rep.provenance["cohort_rows"] == len(table)
    assert rep.provenance["report_schema"] == "cfaudit.report/1"
    assert len(rep.provenance["cohort_sha256"]) == 64
    # records: tasks x folds x families x arms x (5 + 4 + 2 + 1 subgroups) x 4 metrics
    assert len(rep.records) == 2 * 3 * 2 * 2 * 12 * 4
    for t in rep.tests:
        assert t.stars == stars(t.p_value)
        if t.p_value is not None:
            assert 0.0 <= t.p_value <= 1.0


def test_deterministic(biased_report):
    rep, cfg, table = biased_report
    again = run_audit(cfg, table=table)
    assert report_json(again) == report_json(rep)


def test_json_round_trip(biased_report, tmp_path):
    rep = biased_report[0]
    write_report(rep, "json", tmp_path)
    back = read_report(tmp_path)
    assert back == rep
    assert report_json(back) == report_json(rep)
    assert set(json.loads((tmp_path / "report.json").read_text())) == {
        "config", "provenance", "records", "tests", "warnings"
    }
    assert "wall_clock_s" in json.loads((tmp_path / "run_info.json").read_text())


def test_csv_outputs(biased_report, tmp_path):
    rep = biased_report[0]
    paths = write_report(rep, "csv", tmp_path)
    assert {p.name for p in paths} == {"records.csv", "tests.csv", "plot.csv", "run_info.json"}
    lines = (tmp_path / "records.csv").read_text().splitlines()
    assert len(lines) == len(rep.records) + 1
    with open(tmp_path / "tests.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(rep.tests)
    for row in rows:
        p = float(row["p_value"]) if row["p_value"] else None
        assert row["stars"] == stars(p)
    with open(tmp_path / "plot.csv") as fh:
        plot = list(csv.DictReader(fh))
    assert len(plot) == 2 * len(rep.tests)
    for row in plot:
        if row["mean"]:
            assert row["mean_2dp"] == f"{float(row['mean']):.2f}"


def test_infinite_t_survives_json():
    recs = []
    for fold in range(3):
        for arm, v in (("control_sao2", 0.75), ("treatment_spo2", 0.5)):
            recs.append(SubgroupMetricRecord("mortality", "gbt", arm, "overall", "all", fold, "recall", v - fold / 8, 50, False))
    (t,) = compare_arms(recs)
    assert t.t_stat == np.inf and t.p_value == 0.0 and t.stars == "***"
    rep = audit.AuditReport({}, {}, tuple(recs), (t,), ())
    assert audit.report_from_dict(json.loads(report_json(rep))) == rep


def test_undefined_pairs_dropped_with_warning():
    recs = []
    for fold, (c, tr) in enumerate([(0.5, 0.4), (None, 0.3), (0.6, 0.45), (0.7, None)]):
        recs.append(SubgroupMetricRecord("mortality", "gbt", "control_sao2", "overall", "all", fold, "recall", c, 5, True))
        recs.append(SubgroupMetricRecord("mortality", "gbt", "treatment_spo2", "overall", "all", fold, "recall", tr, 5, True))
    (t,) = compare_arms(recs)
    assert t.n_pairs == 2
    assert t.mean_control == pytest.approx(0.55) and t.mean_treatment == pytest.approx(0.425)


def test_single_pair_gives_no_p_value():
    recs = [
        SubgroupMetricRecord("mortality", "gbt", a, "overall", "all", 0, "recall", v, 5, True)
        for a, v in (("control_sao2", 0.5), ("treatment_spo2", 0.4))
    ]
    (t,) = compare_arms(recs)
    assert t.p_value is None and t.stars == "" and t.n_pairs == 1
    assert t.mean_diff == pytest.approx(0.1)


def test_confounder_violation_fires_on_tampering(small_cohort):
    c = build_feature_matrix(small_cohort, arm=Arm.CONTROL)
    t = build_feature_matrix(small_cohort, arm=Arm.TREATMENT)
    rows = np.arange(len(small_cohort))
    check_confounders(c, t, rows)
    X = np.array(t.X)
    X[3, 0] += 1.0
    tampered = FeatureMatrix(X, t.obs_ids, t.arm, t.imputed_mask, t.features)
    with pytest.raises(ConfounderViolation):
        check_confounders(c, tampered, rows)
    with pytest.raises(ConfounderViolation):
        check_confounders(c, c, rows)


def test_confounder_check_runs_every_fold(small_cohort, fast_audit_config, monkeypatch):
    calls = []
    real = audit.check_confounders

    def spy(c, t, rows):
        calls.append(len(rows))
        return real(c, t, rows)

    monkeypatch.setattr(audit, "check_confounders", spy)
    run_audit(fast_audit_config, table=small_cohort)
    # one full-table check plus train and test for every (task, fold)
    assert len(calls) == 1 + 3 * fast_audit_config.k * 2


def test_aborts_fold_on_single_class_training(fast_audit_config):
    # only one positive patient: folds whose training set lacks it abort
    rows = [make_obs(obs_id=f"p{i}", patient_id=f"p{i}", in_hospital_mortality=int(i == 0), age=40.0 + i) for i in range(12)]
    cfg = fast_audit_config.replace(tasks=("mortality",), model_families=("logistic",))
    rep = run_audit(cfg, table=CohortTable(tuple(rows)))
    assert any("single-class" in w for w in rep.warnings)
    assert any("unstable subgroup" in w for w in rep.warnings)


def test_too_few_valid_folds_is_an_error(fast_audit_config):
    rows = [make_obs(obs_id=f"p{i}", patient_id=f"p{i}", in_hospital_mortality=int(i == 0)) for i in range(6)]
    cfg = fast_audit_config.replace(tasks=("mortality",), model_families=("logistic",), k=2)
    with pytest.raises(AuditError):
        run_audit(cfg, table=CohortTable(tuple(rows)))


def test_empty_cohort(fast_audit_config):
    with pytest.raises(AuditError):
        run_audit(fast_audit_config, table=CohortTable(()))


def test_config_validation_and_parsing(tmp_path):
    cfg = AuditConfig(tasks="mortality, sofa_increase", model_families="gbt", gbt={"n_rounds": 7}, output_dir="o")
    assert cfg.tasks == ("mortality", "sofa_increase") and cfg.gbt.n_rounds == 7
    path = tmp_path / "a.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert AuditConfig.load(path) == cfg
    for bad in ({"k": 1}, {"tasks": ()}, {"axes": "colour"}, {"model_families": "svm"}, {"threshold": 1.0}, {"format": "xml"}):
        with pytest.raises(ValueError):
            AuditConfig(**bad)


def test_output_dir_env(monkeypatch):
    monkeypatch.setenv("CFAUDIT_OUT", "/tmp/somewhere")
    assert AuditConfig().output_dir == "/tmp/somewhere"


def test_runs_from_cohort_file(tmp_path, small_cohort, fast_audit_config):
    p = tmp_path / "c.csv"
    write_cohort(small_cohort, p)
    cfg = fast_audit_config.replace(cohort_path=str(p), tasks=("future_rsofa",), model_families=("logistic",))
    a = run_audit(cfg)
    b = run_audit(cfg, table=small_cohort)
    assert a.provenance["cohort_provenance"] == "ingested"
    assert a.provenance["cohort_sha256"] == b.provenance["cohort_sha256"]
    assert (a.records, a.tests) == (b.records, b.tests)


def test_stable_seed_is_task_specific():
    assert audit.stable_seed(0, "mortality") != audit.stable_seed(0, "sofa_increase")
    assert audit.stable_seed(0, "mortality") == audit.stable_seed(0, "mortality")


@pytest.mark.slow
def test_monotone_sensitivity_for_the_biased_group():
    diffs = []
    for b in (0.0, 1.5, 3.0):
        cfg = synth.SynthConfig(n_patients=8000, seed=1, bias_mean={**synth.DEFAULT_BIAS_MEAN, "Black": b})
        rep = run_audit(
            AuditConfig(tasks=("mortality",), model_families=("logistic",), axes=("race_ethnicity",), k=5, output_dir="x"),
            table=synth.generate_cohort(cfg),
        )
        diffs.append(abs(rep.test("mortality", "logistic", "race_ethnicity", "Black", "recall").mean_diff))
    assert diffs[0] <= diffs[1] <= diffs[2], diffs
