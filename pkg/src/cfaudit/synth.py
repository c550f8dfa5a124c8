"""Deterministic synthetic cohort generator with injected device bias.

Every patient has a latent severity that drives arterial desaturation, SOFA
scores, weakly informative labs/vitals and in-hospital mortality. The pulse
oximetry reading is the arterial value plus a race-dependent offset and
noise. Outcomes are functions of the arterial value only, so any performance
gap between a model fed SpO2 and one fed SaO2 is caused by the device error.

Random draws come from counter-based Philox streams. Each field tag has its
own stream keyed by ``hash(seed, tag)`` and each patient owns a fixed-size
block of that stream, so a patient's values do not depend on which other
patients are generated or in what order.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit, ndtr, ndtri
from scipy.stats import poisson

from .cohort import (
    LAB_NAMES,
    SOFA_COMPONENTS,
    CohortTable,
    PairedObservation,
    Provenance,
    RaceEthnicity,
    Sex,
)
from .eval.metrics import hidden_hypoxemia

MAX_PAIRS = 32  # pairs per patient are capped; 1 + Geometric(0.35) exceeds it w.p. ~1e-6
CALIBRATION_PATIENTS = 50_000
CALIBRATION_SEED = 0x5EED_CA1B
_CHUNK = 2048

RACE_ORDER = tuple(r.value for r in RaceEthnicity)

# Cohort-level race/ethnicity shares of the reference ICU cohort.
_RACE_COUNTS = {
    "Asian": 605,
    "Black": 3397,
    "Hispanic or Latino": 1448,
    "White": 25979,
    "Other or Unknown": 2823,
}
DEFAULT_RACE_PROBS = {k: v / sum(_RACE_COUNTS.values()) for k, v in _RACE_COUNTS.items()}
DEFAULT_BIAS_MEAN = {
    "Asian": 0.5,
    "Black": 1.5,
    "Hispanic or Latino": 0.0,
    "White": 0.0,
    "Other or Unknown": 0.0,
}
# Frozen output of calibrate_intercept(SynthConfig(), 0.24).
DEFAULT_MORTALITY_INTERCEPT = -1.4611344522
DEFAULT_SEVERITY_EFFECT = {
    "mortality_intercept": DEFAULT_MORTALITY_INTERCEPT,
    "mortality_severity": 1.0,
    "mortality_hypox": 0.35,
}

# SOFA generation: component = round(base + slope * s + sd * z), clipped to [0, 4].
_SOFA_BASE = {"coagulation": 0.5, "liver": 0.4, "cardiovascular": 1.0, "cns": 0.9, "renal": 0.7, "respiratory": 1.1}
_SOFA_SLOPE = {"coagulation": 0.5, "liver": 0.4, "cardiovascular": 0.8, "cns": 0.7, "renal": 0.6, "respiratory": 0.8}
_SOFA_SD = 0.8
# future total = past total + step, step = round(offset + slope * s + z) in [-2, 3]
_STEP_OFFSET, _STEP_SLOPE = 0.6, 0.8
# future resp = past resp + round(offset + slope * s + sd * z), clipped to [0, 4]
_FRESP_OFFSET, _FRESP_SLOPE, _FRESP_SD = -0.95, 0.5, 0.8

# (reference value, spread, severity loading, decimals); loadings stay small so
# the oxygen reading keeps most of the signal about hypoxaemic risk.
_MEASURES = {
    "heart_rate": (85.0, 15.0, 0.3, 0),
    "resp_rate": (18.0, 4.0, 0.3, 0),
    "temperature_c": (37.0, 0.6, 0.1, 1),
    "sbp": (120.0, 18.0, -0.2, 0),
    "dbp": (65.0, 10.0, -0.2, 0),
    "albumin": (3.2, 0.6, -0.2, 1),
    "anion_gap": (12.0, 4.0, 0.2, 0),
    "bicarbonate": (24.0, 4.0, -0.2, 0),
    "bun": (25.0, 12.0, 0.2, 0),
    "creatinine": (1.3, 0.6, 0.2, 2),
    "glucose": (140.0, 40.0, 0.1, 0),
    "hemoglobin": (10.5, 2.0, -0.1, 1),
    "lactate": (2.0, 1.2, 0.3, 1),
    "platelets": (200.0, 80.0, -0.2, 0),
    "potassium": (4.2, 0.6, 0.05, 1),
    "rbc": (3.6, 0.7, -0.1, 2),
    "rdw": (15.0, 2.0, 0.2, 1),
    "sodium": (139.0, 5.0, 0.0, 0),
}
_VITAL_OUT = ("heart_rate", "resp_rate", "temperature_c", "map_mmhg", "sbp", "dbp")


class InvalidConfig(ValueError):
    pass


class NonConvergence(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 20_000
    race_probs: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_RACE_PROBS))
    bias_mean: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_BIAS_MEAN))
    bias_sd: float = 1.5
    sao2_noise_sd: float = 2.0
    severity_effect: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_SEVERITY_EFFECT))
    target_mortality: float = 0.24
    pairs_dist: float = 0.35
    missing_rate: float = 0.1
    seed: int = 42
    sao2_baseline: float = 94.0

    def validate(self) -> None:
        if int(self.n_patients) != self.n_patients or self.n_patients < 1:
            raise InvalidConfig(f"n_patients must be a positive integer, got {self.n_patients}")
        unknown = set(self.race_probs) - set(RACE_ORDER)
        if unknown:
            raise InvalidConfig(f"unknown race categories: {sorted(unknown)}")
        probs = [self.race_probs.get(r, 0.0) for r in RACE_ORDER]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise InvalidConfig("race_probs must lie in [0, 1]")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise InvalidConfig(f"race_probs must sum to 1, got {sum(probs)!r}")
        if set(self.bias_mean) - set(RACE_ORDER):
            raise InvalidConfig("bias_mean has unknown race categories")
        if self.bias_sd < 0 or self.sao2_noise_sd < 0:
            raise InvalidConfig("bias_sd and sao2_noise_sd must be nonnegative")
        for name in ("target_mortality", "missing_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1]")
        if not 0.0 < self.pairs_dist <= 1.0:
            raise InvalidConfig("pairs_dist must lie in (0, 1]")
        missing = {"mortality_intercept", "mortality_severity", "mortality_hypox"} - set(self.severity_effect)
        if missing:
            raise InvalidConfig(f"severity_effect missing {sorted(missing)}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidConfig("seed must be a 64-bit unsigned integer")

    def replace(self, **changes) -> "SynthConfig":
        return dataclasses.replace(self, **changes)

    def with_effect(self, **effects: float) -> "SynthConfig":
        eff = dict(self.severity_effect)
        eff.update(effects)
        return self.replace(severity_effect=eff)

    def to_dict(self) -> dict:
        return {
            "n_patients": int(self.n_patients),
            "race_probs": dict(self.race_probs),
            "bias_mean": dict(self.bias_mean),
            "bias_sd": self.bias_sd,
            "sao2_noise_sd": self.sao2_noise_sd,
            "severity_effect": dict(self.severity_effect),
            "target_mortality": self.target_mortality,
            "pairs_dist": self.pairs_dist,
            "missing_rate": self.missing_rate,
            "seed": int(self.seed),
            "sao2_baseline": self.sao2_baseline,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SynthConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - known
        if extra:
            raise InvalidConfig(f"unknown SynthConfig fields: {sorted(extra)}")
        kwargs = dict(data)
        if "severity_effect" in kwargs:
            eff = dict(DEFAULT_SEVERITY_EFFECT)
            eff.update(kwargs["severity_effect"])
            kwargs["severity_effect"] = eff
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "SynthConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# -- random streams -----------------------------------------------------------


def _stream_key(seed: int, tag: str) -> np.ndarray:
    digest = hashlib.blake2b(f"{int(seed)}/{tag}".encode(), digest_size=16).digest()
    return np.frombuffer(digest, dtype=np.uint64).copy()


def _uniforms(seed: int, tag: str, start: int, count: int, width: int) -> np.ndarray:
    """Open-interval uniforms of shape (count, width) for patients [start, start+count).

    Patient ``p`` always reads raw draws ``[p * width, (p + 1) * width)`` of
    the tag's stream; Philox emits four words per counter step, hence the
    width constraint.
    """
    assert width % 4 == 0
    bitgen = np.random.Philox(key=_stream_key(seed, tag))
    bitgen.advance(start * width // 4)
    raw = bitgen.random_raw(count * width)
    u = ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53
    return u.reshape(count, width)


def _normals(seed, tag, start, count, width):
    return ndtri(_uniforms(seed, tag, start, count, width))


def _softplus(x):
    return np.logaddexp(0.0, x)


# -- latent model -------------------------------------------------------------


@dataclass
class _Latent:
    """Per-patient and per-observation draws for a contiguous patient range."""

    race_idx: np.ndarray
    severity: np.ndarray
    n_pairs: np.ndarray
    mort_u: np.ndarray
    patient_u: np.ndarray  # remaining per-patient uniforms (sex, age, comorbidity)
    obs_patient: np.ndarray  # local patient index of each observation
    obs_slot: np.ndarray
    sao2: np.ndarray
    spo2: np.ndarray
    time_u: np.ndarray


def _simulate_latent(cfg: SynthConfig, seed: int, start: int, count: int) -> _Latent:
    pu = _uniforms(seed, "patient", start, count, 8)
    cum = np.cumsum([cfg.race_probs.get(r, 0.0) for r in RACE_ORDER])
    race_idx = np.minimum(np.searchsorted(cum, pu[:, 0], side="right"), len(RACE_ORDER) - 1)
    severity = ndtri(pu[:, 1])
    if cfg.pairs_dist >= 1.0:
        extra = np.zeros(count, dtype=np.int64)
    else:
        extra = np.floor(np.log(pu[:, 2]) / math.log1p(-cfg.pairs_dist)).astype(np.int64)
    n_pairs = np.minimum(1 + extra, MAX_PAIRS)

    patient_of_slot = np.repeat(np.arange(count), MAX_PAIRS)
    slot = np.tile(np.arange(MAX_PAIRS), count)
    keep = slot < n_pairs[patient_of_slot]

    sat = _uniforms(seed, "saturation", start, count, 4 * MAX_PAIRS).reshape(count * MAX_PAIRS, 4)[keep]
    obs_patient = patient_of_slot[keep]
    s_obs = severity[obs_patient]
    z1, z2 = ndtri(sat[:, 0]), ndtri(sat[:, 1])
    sao2 = np.clip(cfg.sao2_baseline - 3.5 * _softplus(s_obs) + cfg.sao2_noise_sd * z1, 70.0, 100.0)
    sao2 = np.clip(np.round(sao2, 1), 70.0, 100.0)
    offset = np.array([cfg.bias_mean.get(r, 0.0) for r in RACE_ORDER])[race_idx[obs_patient]]
    spo2 = np.clip(np.round(sao2 + offset + cfg.bias_sd * z2, 1), 70.0, 100.0)
    return _Latent(
        race_idx=race_idx,
        severity=severity,
        n_pairs=n_pairs,
        mort_u=pu[:, 3],
        patient_u=pu[:, 4:],
        obs_patient=obs_patient,
        obs_slot=slot[keep],
        sao2=sao2,
        spo2=spo2,
        time_u=sat[:, 2],
    )


def _mortality_logit(cfg: SynthConfig, lat: _Latent, intercept: float | None = None) -> np.ndarray:
    eff = cfg.severity_effect
    b0 = eff["mortality_intercept"] if intercept is None else intercept
    # patient-level hypoxaemic burden: mean arterial deficit below 88%
    deficit = np.maximum(0.0, 88.0 - lat.sao2)
    burden = np.bincount(lat.obs_patient, weights=deficit, minlength=len(lat.severity)) / lat.n_pairs
    return b0 + eff["mortality_severity"] * lat.severity + eff["mortality_hypox"] * burden


# -- public API ---------------------------------------------------------------


def generate_cohort(cfg: SynthConfig | None = None) -> CohortTable:
    """Generate a cohort, sorted by patient id then observation index."""
    cfg = cfg or SynthConfig()
    cfg.validate()
    rows: list[PairedObservation] = []
    for start in range(0, cfg.n_patients, _CHUNK):
        count = min(_CHUNK, cfg.n_patients - start)
        rows.extend(_generate_chunk(cfg, start, count))
    return CohortTable(tuple(rows), provenance=Provenance.SYNTHETIC)


def _generate_chunk(cfg: SynthConfig, start: int, count: int) -> list[PairedObservation]:
    seed = int(cfg.seed)
    lat = _simulate_latent(cfg, seed, start, count)
    died = (lat.mort_u < expit(_mortality_logit(cfg, lat))).astype(int)

    sex_u, age_u, comorb_u = lat.patient_u[:, 0], lat.patient_u[:, 1], lat.patient_u[:, 2]
    sex = np.where(sex_u < 0.44, 0, np.where(sex_u < 0.995, 1, 2))
    age = np.clip(np.round(65.0 + 15.0 * ndtri(age_u)), 18.0, 100.0)
    comorb = poisson.ppf(comorb_u, 4.0).astype(int)

    n_obs = len(lat.sao2)
    op = lat.obs_patient
    s = lat.severity[op]

    def per_obs(tag, width):
        block = _normals(seed, tag, start, count, width * MAX_PAIRS)
        flat = block.reshape(count * MAX_PAIRS, width)
        return flat[op * MAX_PAIRS + lat.obs_slot]

    sofa_z = per_obs("sofa", 8)
    comps = {}
    for k, name in enumerate(SOFA_COMPONENTS):
        raw = _SOFA_BASE[name] + _SOFA_SLOPE[name] * s + _SOFA_SD * sofa_z[:, k]
        comps[name] = np.clip(np.round(raw), 0, 4).astype(int)
    past_total = sum(comps.values())
    step = np.clip(np.round(_STEP_OFFSET + _STEP_SLOPE * s + sofa_z[:, 6]), -2, 3).astype(int)
    fut_resp = np.clip(
        comps["respiratory"] + np.round(_FRESP_OFFSET + _FRESP_SLOPE * s + _FRESP_SD * sofa_z[:, 7]), 0, 4
    ).astype(int)
    fut_total = np.maximum(np.clip(past_total + step, 0, 24), fut_resp)

    names = list(_MEASURES)
    width = len(names) + 2  # 18 measures, MAP, one spare column
    mz = per_obs("measurements", width)
    values = {}
    for k, name in enumerate(names):
        ref, spread, load, dec = _MEASURES[name]
        v = np.round(ref + spread * (load * s + mz[:, k]), dec)
        values[name] = np.maximum(v, 0.0)
    values["map_mmhg"] = np.round((values["sbp"] + 2.0 * values["dbp"]) / 3.0, 1)
    # missingness reads the CDF of a dedicated normal per cell
    mask_u = ndtr(per_obs("missingness", width))
    absent = {name: mask_u[:, k] < cfg.missing_rate for k, name in enumerate(values)}

    time_delta = np.round(lat.time_u * 300.0)
    race_vals = [RaceEthnicity(r) for r in RACE_ORDER]
    sex_vals = (Sex.FEMALE, Sex.MALE, Sex.UNKNOWN)

    def opt(name, i):
        return None if absent[name][i] else float(values[name][i])

    rows = []
    for i in range(n_obs):
        p = int(op[i])
        pid = f"P{start + p:06d}"
        rows.append(
            PairedObservation(
                obs_id=f"{pid}-{int(lat.obs_slot[i]):02d}",
                patient_id=pid,
                spo2=float(lat.spo2[i]),
                sao2=float(lat.sao2[i]),
                time_delta_s=float(time_delta[i]),
                race_ethnicity=race_vals[lat.race_idx[p]],
                sex=sex_vals[sex[p]],
                age=float(age[p]),
                comorbidity_score=int(comorb[p]),
                vitals={n: opt(n, i) for n in _VITAL_OUT},
                labs={n: opt(n, i) for n in LAB_NAMES},
                sofa_past_total=int(past_total[i]),
                sofa_past_components={c: int(comps[c][i]) for c in SOFA_COMPONENTS},
                sofa_future_total=int(fut_total[i]),
                sofa_future_resp=int(fut_resp[i]),
                in_hospital_mortality=int(died[p]),
            )
        )
    return rows


def patient_mortality_rate(table: CohortTable) -> float:
    """Share of patients who died (each patient counted once)."""
    died: dict[str, int] = {}
    for r in table.rows:
        died[r.patient_id] = max(died.get(r.patient_id, 0), r.in_hospital_mortality)
    return sum(died.values()) / len(died) if died else 0.0


def injected_bias_summary(table: CohortTable) -> dict[str, tuple[float, float, float]]:
    """Per race/ethnicity: (mean delta, sd delta, hidden-hypoxaemia rate)."""
    if not len(table):
        raise ValueError("table is empty")
    spo2, sao2 = table.column("spo2"), table.column("sao2")
    delta = spo2 - sao2
    hh = hidden_hypoxemia(sao2, spo2)
    race = table.race()
    out = {}
    for r in RACE_ORDER:
        m = race == r
        if m.any():
            out[r] = (float(delta[m].mean()), float(delta[m].std()), float(hh[m].mean()))
    return out


def hidden_hypoxemia_rate(table: CohortTable) -> float:
    return float(np.mean(hidden_hypoxemia(table.column("sao2"), table.column("spo2"))))


def simulated_mortality(cfg: SynthConfig, intercept: float, n_patients: int, seed: int) -> float:
    lat = _simulate_latent(cfg, seed, 0, n_patients)
    return float(np.mean(lat.mort_u < expit(_mortality_logit(cfg, lat, intercept))))


def calibrate_intercept(
    cfg: SynthConfig,
    target: float,
    n_patients: int = CALIBRATION_PATIENTS,
    seed: int = CALIBRATION_SEED,
    tol: float = 0.005,
    max_steps: int = 60,
) -> SynthConfig:
    """Bisect the mortality intercept until simulated mortality hits ``target``.

    The calibration sample uses its own fixed seed, so the result does not
    depend on ``cfg.seed``.
    """
    if not 0.0 < target < 1.0:
        raise InvalidConfig(f"target must lie in (0, 1), got {target}")
    cfg.validate()
    lat = _simulate_latent(cfg, seed, 0, n_patients)
    base = _mortality_logit(cfg, lat, 0.0)

    def rate(b):
        return float(np.mean(lat.mort_u < expit(base + b)))

    # invariant: rate(lo) < target <= rate(hi); rate is a nondecreasing step function
    lo, hi = -30.0, 30.0
    if not rate(lo) < target <= rate(hi):
        raise NonConvergence(f"target {target} outside the reachable mortality range")
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        if rate(mid) < target:
            lo = mid
        else:
            hi = mid
    mid = hi
    if abs(rate(mid) - target) > tol:
        raise NonConvergence(f"mortality rate {rate(mid):.4f} not within {tol} of {target} after {max_steps} steps")
    return cfg.with_effect(mortality_intercept=round(mid, 10))
