"""Builders shared across test modules."""

from cfaudit import synth
from cfaudit.cohort import LAB_NAMES, VITAL_NAMES, PairedObservation, RaceEthnicity, Sex

ZERO_BIAS = {r: 0.0 for r in synth.RACE_ORDER}


def make_obs(**overrides) -> PairedObservation:
    """A valid observation with every optional value present."""
    base = dict(
        obs_id="o1",
        patient_id="p1",
        spo2=95.0,
        sao2=92.0,
        time_delta_s=60.0,
        race_ethnicity=RaceEthnicity.WHITE,
        sex=Sex.FEMALE,
        age=60.0,
        comorbidity_score=3,
        vitals={n: 1.0 for n in VITAL_NAMES},
        labs={n: 1.0 for n in LAB_NAMES},
        sofa_past_total=5,
        sofa_past_components={
            "coagulation": 1,
            "liver": 0,
            "cardiovascular": 2,
            "cns": 1,
            "renal": 0,
            "respiratory": 1,
        },
        sofa_future_total=6,
        sofa_future_resp=1,
        in_hospital_mortality=0,
    )
    base.update(overrides)
    return PairedObservation(**base)
