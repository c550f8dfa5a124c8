"""Counterfactual audit: paired control/treatment training and comparison.

For every task one patient-grouped fold assignment is drawn and shared by
both arms and all model families. Within a fold the two arms see the same
rows, features, labels and hyperparameters; only the oxygen-saturation
column differs (SaO2 for control, SpO2 for treatment).
"""

from __future__ import annotations

import csv
import dataclasses
import io
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from . import __version__, learn
from .cohort import CohortTable, cohort_to_csv_bytes, parse_cohort_csv_report
from .eval.metrics import Axis, Metric, PredictionSet, SubgroupMetricRecord, slice_metrics, subgroups
from .eval.stats import InsufficientPairs, paired_t_test, stars
from .folds import FoldAssignment, assign_folds, fold_slices
from .learn import GBTHyper, LogisticHyper, SingleClassTraining
from .prep import Arm, FeatureMatrix, FeatureSchema, Task, build_feature_matrix, make_labels

log = logging.getLogger(__name__)

REPORT_SCHEMA = "cfaudit.report/1"
ARMS = (Arm.CONTROL, Arm.TREATMENT)


class AuditError(RuntimeError):
    pass


class ConfounderViolation(AssertionError):
    """The two arms differ in something other than the oxygen column."""


class AbortedFold(RuntimeError):
    def __init__(self, task: str, fold: int, reason: str):
        super().__init__(f"task {task} fold {fold} aborted: {reason}")
        self.task, self.fold, self.reason = task, fold, reason


def default_output_dir() -> str:
    return os.environ.get("CFAUDIT_OUT", "cfaudit_out")


@dataclass(frozen=True)
class AuditConfig:
    cohort_path: Optional[str] = None
    tasks: tuple[str, ...] = tuple(t.value for t in Task)
    model_families: tuple[str, ...] = learn.FAMILIES
    k: int = 10
    seed: int = 0
    threshold: float = 0.5
    axes: tuple[str, ...] = tuple(a.value for a in Axis)
    schema_path: Optional[str] = None
    output_dir: str = field(default_factory=default_output_dir)
    format: str = "json"
    strict: bool = False
    logistic: LogisticHyper = field(default_factory=LogisticHyper)
    gbt: GBTHyper = field(default_factory=GBTHyper)
    save_models: bool = False

    def __post_init__(self):
        for name in ("tasks", "model_families", "axes"):
            value = getattr(self, name)
            if isinstance(value, str):
                value = tuple(v.strip() for v in value.split(",") if v.strip())
            object.__setattr__(self, name, tuple(value))
        if isinstance(self.logistic, Mapping):
            object.__setattr__(self, "logistic", LogisticHyper(**self.logistic))
        if isinstance(self.gbt, Mapping):
            object.__setattr__(self, "gbt", GBTHyper(**self.gbt))
        self.validate()

    def validate(self) -> None:
        if not self.tasks or not self.model_families or not self.axes:
            raise ValueError("tasks, model_families and axes must be nonempty")
        for t in self.tasks:
            Task(t)
        for a in self.axes:
            Axis(a)
        for m in self.model_families:
            if m not in learn.FAMILIES:
                raise ValueError(f"unknown model family {m!r}")
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.format not in ("json", "csv", "both"):
            raise ValueError("format must be json, csv or both")

    def replace(self, **changes) -> "AuditConfig":
        return dataclasses.replace(self, **changes)

    def hyper(self, family: str):
        return self.logistic if family == "logistic" else self.gbt

    def echo(self) -> dict:
        """Everything that determines the results, including frozen hyperparameters."""
        return {
            "tasks": list(self.tasks),
            "model_families": list(self.model_families),
            "k": self.k,
            "seed": self.seed,
            "threshold": self.threshold,
            "axes": list(self.axes),
            "schema_path": self.schema_path,
            "hyperparameters": {"logistic": self.logistic.to_dict(), "gbt": self.gbt.to_dict()},
        }

    def to_dict(self) -> dict:
        d = self.echo()
        d.update(
            cohort_path=self.cohort_path,
            output_dir=self.output_dir,
            format=self.format,
            strict=self.strict,
            save_models=self.save_models,
            logistic=d["hyperparameters"]["logistic"],
            gbt=d["hyperparameters"]["gbt"],
        )
        del d["hyperparameters"]
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "AuditConfig":
        data = dict(data)
        hyper = data.pop("hyperparameters", None)
        if hyper:
            data.setdefault("logistic", hyper.get("logistic", {}))
            data.setdefault("gbt", hyper.get("gbt", {}))
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown audit config keys: {sorted(extra)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "AuditConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class TestResult:
    task: str
    model_family: str
    axis: str
    subgroup: str
    metric: str
    control_values: tuple[Optional[float], ...]
    treatment_values: tuple[Optional[float], ...]
    mean_control: Optional[float]
    mean_treatment: Optional[float]
    mean_diff: Optional[float]
    t_stat: Optional[float]
    p_value: Optional[float]
    n_pairs: int
    stars: str

    __test__ = False  # not a pytest class

    @property
    def key(self) -> tuple:
        return (self.task, self.model_family, self.axis, self.subgroup, self.metric)


@dataclass(frozen=True)
class AuditReport:
    config: dict
    provenance: dict
    records: tuple[SubgroupMetricRecord, ...]
    tests: tuple[TestResult, ...]
    warnings: tuple[str, ...]
    wall_clock_s: float = field(default=0.0, compare=False)

    def test(self, task, family, axis, subgroup, metric) -> TestResult:
        key = (str(task), family, str(axis), subgroup, str(metric))
        for t in self.tests:
            if t.key == key:
                return t
        raise KeyError(key)


def stable_seed(master: int, label: str) -> int:
    digest = hashlib.blake2b(f"{int(master)}/{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def check_confounders(control: FeatureMatrix, treatment: FeatureMatrix, rows: np.ndarray) -> None:
    """Runtime guard: the arms may differ only in the final (oxygen) column."""
    if control.features != treatment.features or control.obs_ids != treatment.obs_ids:
        raise ConfounderViolation("arms use different feature lists or row order")
    if control.arm == treatment.arm:
        raise ConfounderViolation("both matrices belong to the same arm")
    a = control.X[rows, :-1]
    b = treatment.X[rows, :-1]
    if a.shape != b.shape or not np.array_equal(a, b):
        raise ConfounderViolation("non-oxygen features differ between arms")
    if not np.array_equal(control.imputed_mask[rows, :-1], treatment.imputed_mask[rows, :-1]):
        raise ConfounderViolation("imputation differs between arms")


def load_cohort(cfg: AuditConfig) -> tuple[CohortTable, bytes, list[str]]:
    if not cfg.cohort_path:
        raise AuditError("no cohort path configured")
    raw = Path(cfg.cohort_path).read_bytes()
    result = parse_cohort_csv_report(io.BytesIO(raw), strict=cfg.strict)
    warnings = []
    if result.violations:
        warnings.append(f"skipped {result.n_skipped} invalid cohort rows: {result.counts()}")
    return result.table, raw, warnings


def run_audit(cfg: AuditConfig, table: CohortTable | None = None, model_sink=None) -> AuditReport:
    """Run the full paired experiment. ``model_sink(name, model)`` receives every fitted model."""
    start = time.perf_counter()
    warnings: list[str] = []
    if table is None:
        table, raw, warnings = load_cohort(cfg)
    else:
        raw = cohort_to_csv_bytes(table)
    if len(table) == 0:
        raise AuditError("cohort is empty")
    schema = FeatureSchema.load(cfg.schema_path) if cfg.schema_path else FeatureSchema()

    matrices = {arm: build_feature_matrix(table, schema, arm) for arm in ARMS}
    control, treatment = matrices[Arm.CONTROL], matrices[Arm.TREATMENT]
    check_confounders(control, treatment, np.arange(len(table)))

    records: list[SubgroupMetricRecord] = []
    unstable: set[tuple] = set()
    for task_name in cfg.tasks:
        task = Task(task_name)
        labels = make_labels(table, task)
        assignment = assign_folds(table, labels, cfg.k, stable_seed(cfg.seed, task.value))
        valid_folds = 0
        for fold in range(cfg.k):
            train, test = fold_slices(assignment, table, fold)
            try:
                fold_records = _run_fold(cfg, task, fold, train, test, table, labels, matrices, model_sink)
            except AbortedFold as err:
                warnings.append(str(err))
                log.warning("%s", err)
                continue
            valid_folds += 1
            records.extend(fold_records)
        if valid_folds < 2:
            raise AuditError(f"task {task.value}: only {valid_folds} usable folds")
    for r in records:
        if r.unstable and r.arm == Arm.CONTROL.value and r.metric == Metric.ACCURACY.value:
            unstable.add((r.task, r.model_family, r.axis, r.subgroup, r.fold, r.n))
    for task, fam, axis, sub, fold, n in sorted(unstable):
        warnings.append(f"unstable subgroup (n={n} < 10): {task}/{fam}/{axis}/{sub} fold {fold}")

    tests = compare_arms(records, cfg)
    for t in tests:
        dropped = len(t.control_values) - t.n_pairs
        if dropped:
            warnings.append(
                f"dropped {dropped} undefined fold pairs: {t.task}/{t.model_family}/{t.axis}/{t.subgroup}/{t.metric}"
            )
    provenance = {
        "report_schema": REPORT_SCHEMA,
        "toolkit_version": __version__,
        "cohort_sha256": hashlib.sha256(raw).hexdigest(),
        "cohort_rows": len(table),
        "cohort_provenance": table.provenance.value,
        "fold_seeds": {t: stable_seed(cfg.seed, t) for t in cfg.tasks},
    }
    return AuditReport(
        config=cfg.echo(),
        provenance=provenance,
        records=tuple(records),
        tests=tuple(tests),
        warnings=tuple(warnings),
        wall_clock_s=time.perf_counter() - start,
    )


def _run_fold(cfg, task, fold, train, test, table, labels, matrices, model_sink):
    y = np.asarray(labels.y)
    y_train = y[train]
    if len(test) == 0:
        raise AbortedFold(task.value, fold, "empty test set")
    if y_train.min() == y_train.max():
        raise AbortedFold(task.value, fold, "single-class training set")
    control, treatment = matrices[Arm.CONTROL], matrices[Arm.TREATMENT]
    check_confounders(control, treatment, train)
    check_confounders(control, treatment, test)
    test_ids = tuple(table.obs_ids[i] for i in test)
    out = []
    for family in cfg.model_families:
        hyper = cfg.hyper(family)
        for arm in ARMS:
            X = matrices[arm].X
            try:
                model = learn.train(family, X[train], y_train, hyper)
            except SingleClassTraining as err:
                raise AbortedFold(task.value, fold, str(err)) from None
            if model_sink is not None:
                model_sink(f"{task.value}_{family}_{arm.value}_fold{fold}", model)
            preds = PredictionSet(
                obs_ids=test_ids,
                scores=model.predict_proba(X[test]),
                labels=y[test],
                arm=arm.value,
                fold=fold,
                task=task.value,
                model_family=family,
            )
            for axis in cfg.axes:
                out.extend(slice_metrics(preds, table, axis, cfg.threshold))
    return out


def _mean(values: Sequence[float]) -> Optional[float]:
    return math.fsum(values) / len(values) if values else None


def compare_arms(records: Sequence[SubgroupMetricRecord], cfg: AuditConfig | None = None) -> list[TestResult]:
    """Fold-paired t-test per (task, family, axis, subgroup, metric)."""
    by_key: dict[tuple, dict[str, dict[int, Optional[float]]]] = {}
    for r in records:
        key = (r.task, r.model_family, r.axis, r.subgroup, r.metric)
        by_key.setdefault(key, {}).setdefault(r.arm, {})[r.fold] = r.value
    order = _key_order(cfg)
    out = []
    for key in sorted(by_key, key=order):
        arms = by_key[key]
        c_map = arms.get(Arm.CONTROL.value, {})
        t_map = arms.get(Arm.TREATMENT.value, {})
        folds = sorted(set(c_map) | set(t_map))
        c_vals = tuple(c_map.get(f) for f in folds)
        t_vals = tuple(t_map.get(f) for f in folds)
        pairs = [(c, t) for c, t in zip(c_vals, t_vals) if c is not None and t is not None]
        mc = _mean([c for c, _ in pairs])
        mt = _mean([t for _, t in pairs])
        try:
            res = paired_t_test(c_vals, t_vals)
            t_stat, p, n_pairs, diff = res.t_stat, res.p_value, res.n_pairs, res.mean_diff
        except InsufficientPairs as err:
            t_stat, p, n_pairs = None, None, err.n
            diff = _mean([c - t for c, t in pairs])
        out.append(
            TestResult(
                task=key[0],
                model_family=key[1],
                axis=key[2],
                subgroup=key[3],
                metric=key[4],
                control_values=c_vals,
                treatment_values=t_vals,
                mean_control=mc,
                mean_treatment=mt,
                mean_diff=diff,
                t_stat=t_stat,
                p_value=p,
                n_pairs=n_pairs,
                stars=stars(p),
            )
        )
    return out


def _key_order(cfg: AuditConfig | None):
    tasks = list(cfg.tasks) if cfg else [t.value for t in Task]
    fams = list(cfg.model_families) if cfg else list(learn.FAMILIES)
    axes = [a.value for a in Axis]
    metrics = [m.value for m in Metric]

    def rank(seq, v):
        return seq.index(v) if v in seq else len(seq)

    def key(k):
        task, fam, axis, sub, metric = k
        subs = list(subgroups(axis))
        return (rank(tasks, task), rank(fams, fam), rank(axes, axis), rank(subs, sub), rank(metrics, metric))

    return key


# -- serialisation ------------------------------------------------------------


def _enc_float(x):
    if x is None:
        return None
    if math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    return x


def _dec_float(x):
    if x is None:
        return None
    if isinstance(x, str):
        return math.inf if x == "+inf" else -math.inf
    return float(x)


def report_to_dict(report: AuditReport) -> dict:
    return {
        "config": report.config,
        "provenance": report.provenance,
        "records": [dataclasses.asdict(r) for r in report.records],
        "tests": [
            {**dataclasses.asdict(t), "t_stat": _enc_float(t.t_stat),
             "control_values": list(t.control_values), "treatment_values": list(t.treatment_values)}
            for t in report.tests
        ],
        "warnings": list(report.warnings),
    }


def report_from_dict(d: Mapping[str, Any]) -> AuditReport:
    records = tuple(SubgroupMetricRecord(**r) for r in d["records"])
    tests = []
    for t in d["tests"]:
        t = dict(t)
        t["t_stat"] = _dec_float(t["t_stat"])
        t["control_values"] = tuple(t["control_values"])
        t["treatment_values"] = tuple(t["treatment_values"])
        tests.append(TestResult(**t))
    return AuditReport(
        config=d["config"],
        provenance=d["provenance"],
        records=records,
        tests=tuple(tests),
        warnings=tuple(d["warnings"]),
    )


def report_json(report: AuditReport) -> str:
    return json.dumps(report_to_dict(report), indent=1, allow_nan=False) + "\n"


def read_report(path) -> AuditReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    with open(path, encoding="utf-8") as fh:
        return report_from_dict(json.load(fh))


RECORD_COLUMNS = ("task", "model_family", "arm", "axis", "subgroup", "fold", "metric", "value", "n", "unstable")
TEST_COLUMNS = (
    "task", "model_family", "axis", "subgroup", "metric", "mean_control", "mean_treatment",
    "mean_diff", "t_stat", "p_value", "n_pairs", "stars",
)
PLOT_COLUMNS = ("task", "model_family", "axis", "subgroup", "metric", "arm", "mean", "mean_2dp", "stars")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return _enc_float(v) if math.isinf(v) else repr(v)
    return str(v)


def plot_rows(report: AuditReport) -> list[tuple]:
    """Long-format means per arm with significance stars, one row per arm."""
    rows = []
    for t in report.tests:
        for arm, mean in ((Arm.CONTROL.value, t.mean_control), (Arm.TREATMENT.value, t.mean_treatment)):
            rounded = None if mean is None else f"{mean:.2f}"
            rows.append((t.task, t.model_family, t.axis, t.subgroup, t.metric, arm, mean, rounded, t.stars))
    return rows


def write_report(report: AuditReport, format: str = "json", path=None) -> list[Path]:
    """Write report files into directory ``path``; returns the paths written."""
    out = Path(path if path is not None else default_output_dir())
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if format in ("json", "both"):
        p = out / "report.json"
        p.write_text(report_json(report), encoding="utf-8")
        written.append(p)
    if format in ("csv", "both"):
        tables = {
            "records.csv": (RECORD_COLUMNS, [[getattr(r, c) for c in RECORD_COLUMNS] for r in report.records]),
            "tests.csv": (TEST_COLUMNS, [[getattr(t, c) for c in TEST_COLUMNS] for t in report.tests]),
            "plot.csv": (PLOT_COLUMNS, plot_rows(report)),
        }
        for name, (header, rows) in tables.items():
            p = out / name
            with open(p, "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for row in rows:
                    w.writerow([_cell(v) for v in row])
            written.append(p)
    info = {"wall_clock_s": round(report.wall_clock_s, 3), "tree_backend": learn.BACKEND}
    p = out / "run_info.json"
    p.write_text(json.dumps(info, indent=1) + "\n", encoding="utf-8")
    written.append(p)
    return written
