"""Feature engineering: task labels, rSOFA derivation, imputation, matrices."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .cohort import LAB_NAMES, CohortTable

NON_RESP_COMPONENTS = ("coagulation", "liver", "cardiovascular", "cns", "renal")
OXYGEN = "oxygen_saturation"


class Task(str, enum.Enum):
    MORTALITY = "mortality"
    FUTURE_RSOFA = "future_rsofa"
    SOFA_INCREASE = "sofa_increase"


class Arm(str, enum.Enum):
    CONTROL = "control_sao2"
    TREATMENT = "treatment_spo2"


ARM_OXYGEN_COLUMN = {Arm.CONTROL: "sao2", Arm.TREATMENT: "spo2"}


class MissingOutcome(Exception):
    def __init__(self, column: str):
        super().__init__(f"missing outcome column: {column}")
        self.column = column


DEFAULT_FEATURES = (
    "age",
    "sex_female",
    "comorbidity_score",
    "heart_rate",
    "resp_rate",
    "temperature_c",
    "map_mmhg",
    *LAB_NAMES,
    "sofa_past_total",
    "sofa_past_resp",
    "sofa_past_cardio",
    OXYGEN,
)

DEFAULT_RANGES = {
    "albumin": (3.5, 5.5),
    "anion_gap": (3.0, 11.0),
    "bicarbonate": (22.0, 28.0),
    "bun": (7.0, 20.0),
    "creatinine": (0.6, 1.2),
    "glucose": (70.0, 100.0),
    "hemoglobin": (12.0, 17.0),
    "lactate": (0.5, 2.0),
    "platelets": (150.0, 400.0),
    "potassium": (3.5, 5.0),
    "rbc": (4.2, 5.9),
    "rdw": (11.5, 14.5),
    "sodium": (135.0, 145.0),
    "heart_rate": (60.0, 100.0),
    "resp_rate": (12.0, 20.0),
    "temperature_c": (36.5, 37.5),
    "map_mmhg": (70.0, 100.0),
}


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[str, ...] = DEFAULT_FEATURES
    imputation_ranges: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_RANGES)
    )

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        ranges = {k: (float(lo), float(hi)) for k, (lo, hi) in self.imputation_ranges.items()}
        object.__setattr__(self, "imputation_ranges", ranges)
        for name, (lo, hi) in ranges.items():
            if not lo < hi:
                raise ValueError(f"imputation range for {name} needs low < high, got ({lo}, {hi})")
        if not self.features or self.features[-1] != OXYGEN:
            raise ValueError(f"{OXYGEN} must be the final feature")
        if len(set(self.features)) != len(self.features):
            raise ValueError("duplicate feature names")

    def to_dict(self) -> dict:
        return {
            "features": list(self.features),
            "imputation_ranges": {k: list(v) for k, v in self.imputation_ranges.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "FeatureSchema":
        ranges = dict(DEFAULT_RANGES)
        ranges.update({k: tuple(v) for k, v in data.get("imputation_ranges", {}).items()})
        return cls(tuple(data.get("features", DEFAULT_FEATURES)), ranges)

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class TaskLabel:
    task: Task
    y: np.ndarray


@dataclass(frozen=True)
class FeatureMatrix:
    X: np.ndarray
    obs_ids: tuple[str, ...]
    arm: Arm
    imputed_mask: np.ndarray
    features: tuple[str, ...]

    @property
    def shape(self):
        return self.X.shape


def compute_rsofa(total: int, components: Mapping[str, int]) -> tuple[int, bool]:
    """Respiratory SOFA as total minus the five non-respiratory scores.

    Returns ``(score, clamped)``; inconsistent records are clamped to [0, 4].
    """
    raw = int(total) - sum(int(components[c]) for c in NON_RESP_COMPONENTS)
    score = min(max(raw, 0), 4)
    return score, score != raw


def derive_rsofa(table: CohortTable) -> tuple[np.ndarray, int]:
    total = table.column("sofa_past_total")
    rest = sum(table.column(f"sofa_past_{c}") for c in ("coag", "liver", "cardio", "cns", "renal"))
    raw = (total - rest) if len(table) else np.zeros(0)
    clipped = np.clip(raw, 0, 4)
    return clipped, int(np.count_nonzero(clipped != raw))


def make_labels(table: CohortTable, task: Task | str) -> TaskLabel:
    task = Task(task)
    try:
        if task is Task.MORTALITY:
            y = table.column("in_hospital_mortality")
        elif task is Task.FUTURE_RSOFA:
            y = table.column("sofa_future_resp") >= 1
        else:
            y = (table.column("sofa_future_total") - table.column("sofa_past_total")) >= 2
    except AttributeError as err:
        raise MissingOutcome(err.name or str(err)) from None
    y = np.asarray(y, dtype=np.int8)
    y.setflags(write=False)
    return TaskLabel(task, y)


def impute_midpoint(value: Optional[float], bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return (lo + hi) / 2.0
    return value


def mean_arterial_pressure(table: CohortTable) -> np.ndarray:
    """Recorded MAP, else composed from systolic/diastolic as (sbp + 2 dbp) / 3."""
    map_ = np.array(table.column("map_mmhg"))
    composed = (table.column("sbp") + 2.0 * table.column("dbp")) / 3.0
    missing = np.isnan(map_)
    map_[missing] = composed[missing]
    return map_


def _raw_feature(table: CohortTable, name: str, arm: Arm) -> np.ndarray:
    if name == OXYGEN:
        return np.array(table.column(ARM_OXYGEN_COLUMN[arm]))
    if name == "sex_female":
        sex = table.sex()
        out = np.where(sex == "Female", 1.0, 0.0)
        out[sex == "Unknown"] = np.nan
        return out
    if name == "map_mmhg":
        return mean_arterial_pressure(table)
    if name == "sofa_past_resp":
        return derive_rsofa(table)[0]
    return np.array(table.column(name))


def build_feature_matrix(
    table: CohortTable, schema: FeatureSchema | None = None, arm: Arm | str = Arm.CONTROL
) -> FeatureMatrix:
    """Assemble the arm's design matrix; only the oxygen column depends on the arm."""
    schema = schema or FeatureSchema()
    arm = Arm(arm)
    n = len(table)
    X = np.empty((n, len(schema.features)), dtype=float)
    mask = np.zeros((n, len(schema.features)), dtype=bool)
    for j, name in enumerate(schema.features):
        col = _raw_feature(table, name, arm)
        missing = np.isnan(col)
        if missing.any():
            if name == "sex_female":
                fill = 0.5
            elif name in schema.imputation_ranges:
                lo, hi = schema.imputation_ranges[name]
                fill = (lo + hi) / 2.0
            else:
                raise ValueError(f"feature {name} has absent values but no imputation range")
            col[missing] = fill
            mask[:, j] = missing
        X[:, j] = col
    X.setflags(write=False)
    mask.setflags(write=False)
    return FeatureMatrix(X, table.obs_ids, arm, mask, schema.features)


def imputation_counts(table: CohortTable, schema: FeatureSchema | None = None) -> dict[str, int]:
    fm = build_feature_matrix(table, schema, Arm.CONTROL)
    return {name: int(fm.imputed_mask[:, j].sum()) for j, name in enumerate(fm.features)}
