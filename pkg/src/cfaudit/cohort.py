"""Cohort data model, CSV ingestion and validation.

A cohort is a table of paired oxygen-saturation observations (pulse oximetry
SpO2 and arterial blood gas SaO2) together with the clinical features and
outcomes needed by the downstream tasks. Several rows may belong to the same
patient.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Iterable, Mapping, Optional

import numpy as np

SCHEMA_VERSION = "1.0"

VITAL_NAMES = ("heart_rate", "resp_rate", "temperature_c", "map_mmhg", "sbp", "dbp")
LAB_NAMES = (
    "albumin",
    "anion_gap",
    "bicarbonate",
    "bun",
    "creatinine",
    "glucose",
    "hemoglobin",
    "lactate",
    "platelets",
    "potassium",
    "rbc",
    "rdw",
    "sodium",
)
SOFA_COMPONENTS = ("coagulation", "liver", "cardiovascular", "cns", "renal", "respiratory")
_SOFA_COLUMNS = {
    "coagulation": "sofa_past_coag",
    "liver": "sofa_past_liver",
    "cardiovascular": "sofa_past_cardio",
    "cns": "sofa_past_cns",
    "renal": "sofa_past_renal",
    "respiratory": "sofa_past_resp",
}

COLUMNS = (
    "obs_id",
    "patient_id",
    "spo2",
    "sao2",
    "time_delta_s",
    "race_ethnicity",
    "sex",
    "age",
    "comorbidity_score",
    *VITAL_NAMES,
    *LAB_NAMES,
    "sofa_past_total",
    *(_SOFA_COLUMNS[c] for c in SOFA_COMPONENTS),
    "sofa_future_total",
    "sofa_future_resp",
    "in_hospital_mortality",
)
OPTIONAL_COLUMNS = frozenset(("time_delta_s", *VITAL_NAMES, *LAB_NAMES))

MAX_TIME_DELTA_S = 300.0
SAT_LOW, SAT_HIGH = 70.0, 100.0


class RaceEthnicity(str, enum.Enum):
    ASIAN = "Asian"
    BLACK = "Black"
    HISPANIC_LATINO = "Hispanic or Latino"
    WHITE = "White"
    OTHER_UNKNOWN = "Other or Unknown"

    @classmethod
    def parse(cls, text: str) -> "RaceEthnicity":
        # blank or unrecognised categories fall into the catch-all bucket
        try:
            return cls(text.strip())
        except ValueError:
            return cls.OTHER_UNKNOWN


class Sex(str, enum.Enum):
    FEMALE = "Female"
    MALE = "Male"
    UNKNOWN = "Unknown"

    @classmethod
    def parse(cls, text: str) -> "Sex":
        try:
            return cls(text.strip())
        except ValueError:
            return cls.UNKNOWN


class Provenance(str, enum.Enum):
    INGESTED = "ingested"
    SYNTHETIC = "synthetic"


class CohortError(Exception):
    """Base class for cohort ingestion errors."""


class MissingColumn(CohortError):
    def __init__(self, name: str):
        super().__init__(f"missing required column: {name}")
        self.name = name


class RowViolation(CohortError):
    def __init__(self, line: int, rule: str, detail: str = ""):
        msg = f"line {line}: {rule}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.line = line
        self.rule = rule
        self.detail = detail


@dataclass(frozen=True)
class PairedObservation:
    obs_id: str
    patient_id: str
    spo2: float
    sao2: float
    time_delta_s: Optional[float]
    race_ethnicity: RaceEthnicity
    sex: Sex
    age: float
    comorbidity_score: int
    vitals: Mapping[str, Optional[float]]
    labs: Mapping[str, Optional[float]]
    sofa_past_total: int
    sofa_past_components: Mapping[str, int]
    sofa_future_total: int
    sofa_future_resp: int
    in_hospital_mortality: int

    @property
    def delta(self) -> float:
        """Device minus reference saturation; positive means overestimation."""
        return self.spo2 - self.sao2


def check_observation(obs: PairedObservation) -> list[tuple[str, str]]:
    """Return ``(rule, detail)`` for every invariant the observation breaks."""
    problems = []
    for name in ("spo2", "sao2"):
        v = getattr(obs, name)
        if not (SAT_LOW <= v <= SAT_HIGH):
            problems.append(("range", f"{name}={v} outside [70, 100]"))
    if obs.time_delta_s is not None and not (0.0 <= obs.time_delta_s <= MAX_TIME_DELTA_S):
        problems.append(("pairing_window", f"time_delta_s={obs.time_delta_s} outside [0, 300]"))
    if obs.age < 0:
        problems.append(("range", f"age={obs.age} negative"))
    if obs.comorbidity_score < 0:
        problems.append(("range", f"comorbidity_score={obs.comorbidity_score} negative"))
    for comp, v in obs.sofa_past_components.items():
        if not (0 <= v <= 4):
            problems.append(("sofa_component", f"{comp}={v} outside [0, 4]"))
    if not (0 <= obs.sofa_future_resp <= 4):
        problems.append(("sofa_component", f"sofa_future_resp={obs.sofa_future_resp} outside [0, 4]"))
    for name in ("sofa_past_total", "sofa_future_total"):
        v = getattr(obs, name)
        if not (0 <= v <= 24):
            problems.append(("sofa_total", f"{name}={v} outside [0, 24]"))
    if obs.in_hospital_mortality not in (0, 1):
        problems.append(("binary", f"in_hospital_mortality={obs.in_hospital_mortality}"))
    return problems


@dataclass(frozen=True)
class CohortTable:
    rows: tuple[PairedObservation, ...]
    schema_version: str = SCHEMA_VERSION
    provenance: Provenance = Provenance.INGESTED

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))

    def __len__(self) -> int:
        return len(self.rows)

    @cached_property
    def obs_ids(self) -> tuple[str, ...]:
        return tuple(r.obs_id for r in self.rows)

    @cached_property
    def patient_ids(self) -> np.ndarray:
        return np.array([r.patient_id for r in self.rows], dtype=object)

    @cached_property
    def obs_index(self) -> dict[str, int]:
        # first occurrence wins; duplicates are a validation concern
        index: dict[str, int] = {}
        for i, oid in enumerate(self.obs_ids):
            index.setdefault(oid, i)
        return index

    def column(self, name: str) -> np.ndarray:
        """Column as a float array, NaN where the value is absent.

        Columns are computed on demand and cached; the returned array is
        read-only so that shared tables stay immutable.
        """
        cache = self.__dict__.setdefault("_column_cache", {})
        if name not in cache:
            arr = np.array([_raw_value(r, name) for r in self.rows], dtype=float)
            arr.setflags(write=False)
            cache[name] = arr
        return cache[name]

    def race(self) -> np.ndarray:
        return np.array([r.race_ethnicity.value for r in self.rows], dtype=object)

    def sex(self) -> np.ndarray:
        return np.array([r.sex.value for r in self.rows], dtype=object)


def _raw_value(row: PairedObservation, name: str) -> float:
    if name in VITAL_NAMES:
        v = row.vitals.get(name)
    elif name in LAB_NAMES:
        v = row.labs.get(name)
    elif name.startswith("sofa_past_") and name != "sofa_past_total":
        comp = {col: c for c, col in _SOFA_COLUMNS.items()}[name]
        v = row.sofa_past_components[comp]
    else:
        v = getattr(row, name)
    return math.nan if v is None else float(v)


# -- CSV ----------------------------------------------------------------------

_INT_COLUMNS = frozenset(
    (
        "comorbidity_score",
        "sofa_past_total",
        *(_SOFA_COLUMNS.values()),
        "sofa_future_total",
        "sofa_future_resp",
        "in_hospital_mortality",
    )
)


@dataclass
class ParseResult:
    """Outcome of a lenient parse: the kept table plus what was skipped."""

    table: CohortTable
    violations: list[RowViolation] = field(default_factory=list)

    @property
    def n_skipped(self) -> int:
        return len({v.line for v in self.violations})

    def counts(self) -> dict[str, int]:
        return dict(Counter(v.rule for v in self.violations))


def _parse_int(text: str, col: str, line: int) -> int:
    try:
        value = float(text)
    except ValueError:
        raise RowViolation(line, "type", f"{col}={text!r} not numeric") from None
    if not value.is_integer():
        raise RowViolation(line, "type", f"{col}={text!r} not an integer")
    return int(value)


def _parse_float(text: str, col: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise RowViolation(line, "type", f"{col}={text!r} not numeric") from None
    if not math.isfinite(value):
        raise RowViolation(line, "type", f"{col}={text!r} not finite")
    return value


def _row_from_record(rec: Mapping[str, str], line: int) -> PairedObservation:
    vals: dict[str, object] = {}
    for col in COLUMNS:
        text = (rec.get(col) or "").strip()
        if col in ("obs_id", "patient_id", "race_ethnicity", "sex"):
            if not text and col in ("obs_id", "patient_id"):
                raise RowViolation(line, "missing", col)
            vals[col] = text
        elif not text:
            if col not in OPTIONAL_COLUMNS:
                raise RowViolation(line, "missing", col)
            vals[col] = None
        elif col in _INT_COLUMNS:
            vals[col] = _parse_int(text, col, line)
        else:
            vals[col] = _parse_float(text, col, line)
    obs = PairedObservation(
        obs_id=vals["obs_id"],
        patient_id=vals["patient_id"],
        spo2=vals["spo2"],
        sao2=vals["sao2"],
        time_delta_s=vals["time_delta_s"],
        race_ethnicity=RaceEthnicity.parse(vals["race_ethnicity"]),
        sex=Sex.parse(vals["sex"]),
        age=vals["age"],
        comorbidity_score=vals["comorbidity_score"],
        vitals={k: vals[k] for k in VITAL_NAMES},
        labs={k: vals[k] for k in LAB_NAMES},
        sofa_past_total=vals["sofa_past_total"],
        sofa_past_components={c: vals[_SOFA_COLUMNS[c]] for c in SOFA_COMPONENTS},
        sofa_future_total=vals["sofa_future_total"],
        sofa_future_resp=vals["sofa_future_resp"],
        in_hospital_mortality=vals["in_hospital_mortality"],
    )
    problems = check_observation(obs)
    if problems:
        rule, detail = problems[0]
        raise RowViolation(line, rule, detail)
    return obs


def parse_cohort_csv_report(source: IO, strict: bool = True) -> ParseResult:
    """Parse a cohort CSV, returning the table and any skipped-row violations.

    ``source`` may be a binary or text stream. In strict mode the first
    violation is raised; otherwise offending rows are skipped and reported.
    """
    if isinstance(source, (io.RawIOBase, io.BufferedIOBase)) or "b" in getattr(source, "mode", ""):
        source = io.TextIOWrapper(source, encoding="utf-8", newline="")
    reader = csv.DictReader(source)
    header = reader.fieldnames
    if header is None:
        raise MissingColumn(COLUMNS[0])
    header = [h.strip() for h in header]
    reader.fieldnames = header
    for col in COLUMNS:
        if col not in header:
            raise MissingColumn(col)

    rows = []
    violations = []
    seen: set[str] = set()
    for rec in reader:
        line = reader.line_num
        try:
            obs = _row_from_record(rec, line)
            if obs.obs_id in seen:
                raise RowViolation(line, "duplicate_obs_id", obs.obs_id)
        except RowViolation as err:
            if strict:
                raise
            violations.append(err)
            continue
        seen.add(obs.obs_id)
        rows.append(obs)
    return ParseResult(CohortTable(tuple(rows), provenance=Provenance.INGESTED), violations)


def parse_cohort_csv(source: IO, strict: bool = True) -> CohortTable:
    return parse_cohort_csv_report(source, strict=strict).table


def read_cohort(path, strict: bool = True) -> CohortTable:
    with open(path, "rb") as fh:
        return parse_cohort_csv(fh, strict=strict)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, float):
        # repr is the shortest text that round-trips to the same double
        return repr(value)
    return str(value)


def _record(row: PairedObservation) -> list[str]:
    out = []
    for col in COLUMNS:
        if col in VITAL_NAMES:
            v = row.vitals.get(col)
        elif col in LAB_NAMES:
            v = row.labs.get(col)
        elif col in _INT_COLUMNS and col.startswith("sofa_past_") and col != "sofa_past_total":
            comp = {c2: c for c, c2 in _SOFA_COLUMNS.items()}[col]
            v = row.sofa_past_components[comp]
        else:
            v = getattr(row, col)
        out.append(_fmt(v))
    return out


def write_cohort_csv(table: CohortTable, sink: IO[str]) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in table.rows:
        writer.writerow(_record(row))


def cohort_to_csv_bytes(table: CohortTable) -> bytes:
    buf = io.StringIO()
    write_cohort_csv(table, buf)
    return buf.getvalue().encode("utf-8")


def write_cohort(table: CohortTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_cohort_csv(table, fh)


# -- validation ---------------------------------------------------------------


@dataclass
class ValidationReport:
    n_rows: int
    n_patients: int
    violations: dict[str, int]
    duplicate_obs_ids: list[str]
    rows_per_patient: dict[str, int]
    positivity: dict[str, float]
    rsofa_clamped: int = 0
    imputed_counts: dict[str, int] = field(default_factory=dict)

    @property
    def n_violations(self) -> int:
        return sum(self.violations.values())

    @property
    def ok(self) -> bool:
        return self.n_violations == 0 and not self.duplicate_obs_ids

    def summary(self) -> str:
        lines = [
            f"rows: {self.n_rows}  patients: {self.n_patients}",
            f"violations: {self.n_violations}"
            + "".join(f"  {k}={v}" for k, v in sorted(self.violations.items())),
            f"duplicate obs_id: {len(self.duplicate_obs_ids)}",
        ]
        for task, rate in self.positivity.items():
            lines.append(f"positivity {task}: {rate:.4f}")
        if self.rsofa_clamped:
            lines.append(f"rSOFA clamped: {self.rsofa_clamped}")
        for col, n in self.imputed_counts.items():
            lines.append(f"imputed {col}: {n}")
        return "\n".join(lines)


def validate_cohort(table: CohortTable) -> ValidationReport:
    """Report-only check of a table against the row invariants."""
    from . import prep  # prep depends on cohort; import lazily

    violations: Counter = Counter()
    for row in table.rows:
        for rule, _ in check_observation(row):
            violations[rule] += 1
    id_counts = Counter(table.obs_ids)
    duplicates = sorted(oid for oid, c in id_counts.items() if c > 1)
    per_patient = dict(Counter(r.patient_id for r in table.rows))

    positivity: dict[str, float] = {}
    clamped = 0
    imputed: dict[str, int] = {}
    if len(table):
        for task in prep.Task:
            positivity[task.value] = float(prep.make_labels(table, task).y.mean())
        _, clamped = prep.derive_rsofa(table)
        imputed = prep.imputation_counts(table)
    return ValidationReport(
        n_rows=len(table),
        n_patients=len(per_patient),
        violations=dict(violations),
        duplicate_obs_ids=duplicates,
        rows_per_patient=per_patient,
        positivity=positivity,
        rsofa_clamped=clamped,
        imputed_counts=imputed,
    )


def concat(tables: Iterable[CohortTable]) -> CohortTable:
    tables = list(tables)
    rows = tuple(r for t in tables for r in t.rows)
    prov = tables[0].provenance if tables else Provenance.INGESTED
    return CohortTable(rows, provenance=prov)
