"""Classification metrics and disparity-axis slicing of test predictions."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

MIN_STABLE_N = 10
HH_THRESHOLD = 88.0


class Axis(str, enum.Enum):
    RACE_ETHNICITY = "race_ethnicity"
    BIAS_MAGNITUDE = "bias_magnitude"
    HIDDEN_HYPOXEMIA = "hidden_hypoxemia"
    OVERALL = "overall"


class Metric(str, enum.Enum):
    AUROC = "auroc"
    RECALL = "recall"
    F1 = "f1"
    ACCURACY = "accuracy"


class DisparityBin(str, enum.Enum):
    LT_MINUS3 = "LtMinus3"
    MINUS3_TO_0 = "Minus3To0"
    ZERO_TO3 = "ZeroTo3"
    GE3 = "Ge3"


BIN_ORDER = tuple(DisparityBin)
RACE_SUBGROUPS = ("Asian", "Black", "Hispanic or Latino", "White", "Other or Unknown")
HH_SUBGROUPS = ("0", "1")
OVERALL_SUBGROUP = "all"


@dataclass(frozen=True)
class PredictionSet:
    obs_ids: tuple[str, ...]
    scores: np.ndarray
    labels: np.ndarray
    arm: str = ""
    fold: int = 0
    task: str = ""
    model_family: str = ""

    def __post_init__(self):
        if not (len(self.obs_ids) == len(self.scores) == len(self.labels)):
            raise ValueError("obs_ids, scores and labels must have equal length")

    def subset(self, mask: np.ndarray) -> "PredictionSet":
        ids = tuple(o for o, m in zip(self.obs_ids, mask) if m)
        return PredictionSet(ids, self.scores[mask], self.labels[mask], self.arm, self.fold, self.task, self.model_family)


@dataclass(frozen=True)
class SubgroupMetricRecord:
    task: str
    model_family: str
    arm: str
    axis: str
    subgroup: str
    fold: int
    metric: str
    value: Optional[float]
    n: int
    unstable: bool

    @property
    def key(self) -> tuple:
        return (self.task, self.model_family, self.arm, self.axis, self.subgroup, self.fold, self.metric)


def _as_arrays(preds_or_scores, labels=None):
    if isinstance(preds_or_scores, PredictionSet):
        return np.asarray(preds_or_scores.scores, float), np.asarray(preds_or_scores.labels)
    return np.asarray(preds_or_scores, float), np.asarray(labels)


def confusion_counts(scores, labels, threshold: float = 0.5) -> tuple[int, int, int, int]:
    """Return (TP, FP, TN, FN) with the positive call ``score >= threshold``."""
    pred = np.asarray(scores) >= threshold
    y = np.asarray(labels).astype(bool)
    tp = int(np.count_nonzero(pred & y))
    fp = int(np.count_nonzero(pred & ~y))
    fn = int(np.count_nonzero(~pred & y))
    tn = len(y) - tp - fp - fn
    return tp, fp, tn, fn


def metrics_at_threshold(preds, threshold: float = 0.5, labels=None):
    """Accuracy, recall and F1 at a fixed threshold; undefined values are None."""
    scores, y = _as_arrays(preds, labels)
    if len(y) == 0:
        raise ValueError("metrics need at least one prediction")
    tp, fp, tn, fn = confusion_counts(scores, y, threshold)
    accuracy = (tp + tn) / len(y)
    recall = tp / (tp + fn) if tp + fn else None
    f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else None
    return accuracy, recall, f1


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    # first index of each run of equal values
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    counts = np.diff(np.r_[starts, len(xs)])
    avg = starts + (counts + 1) / 2.0  # 1-based average rank of each run
    ranks = np.empty(len(x))
    ranks[order] = np.repeat(avg, counts)
    return ranks


def auroc(preds, labels=None) -> Optional[float]:
    """Area under the ROC curve as the Mann-Whitney statistic, ties counted 1/2."""
    scores, y = _as_arrays(preds, labels)
    y = y.astype(bool)
    n_pos = int(np.count_nonzero(y))
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _midranks(scores)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _delta(spo2, sao2):
    # saturations carry one decimal; rounding keeps e.g. 95.3 - 92.3 on the bin edge
    return np.round(np.asarray(spo2, float) - np.asarray(sao2, float), 9)


def disparity_bins(spo2, sao2) -> np.ndarray:
    """Vectorised bias-magnitude bin labels (lower-inclusive edges at -3, 0, 3)."""
    d = _delta(spo2, sao2)
    idx = np.searchsorted(np.array([-3.0, 0.0, 3.0]), d, side="right")
    return np.array([b.value for b in BIN_ORDER], dtype=object)[idx]


def disparity_bin(spo2: float, sao2: float) -> DisparityBin:
    return DisparityBin(disparity_bins([spo2], [sao2])[0])


def hidden_hypoxemia(sao2, spo2):
    """SaO2 below 88% while SpO2 reads at least 88%."""
    res = (np.asarray(sao2, float) < HH_THRESHOLD) & (np.asarray(spo2, float) >= HH_THRESHOLD)
    return bool(res) if res.ndim == 0 else res


def subgroups(axis: Axis | str) -> Sequence[str]:
    axis = Axis(axis)
    return {
        Axis.RACE_ETHNICITY: RACE_SUBGROUPS,
        Axis.BIAS_MAGNITUDE: tuple(b.value for b in BIN_ORDER),
        Axis.HIDDEN_HYPOXEMIA: HH_SUBGROUPS,
        Axis.OVERALL: (OVERALL_SUBGROUP,),
    }[axis]


def subgroup_labels(table, rows: np.ndarray, axis: Axis | str) -> np.ndarray:
    """Subgroup of each table row under ``axis``; depends on table columns only."""
    axis = Axis(axis)
    rows = np.asarray(rows, dtype=np.intp)
    if axis is Axis.OVERALL:
        return np.full(len(rows), OVERALL_SUBGROUP, dtype=object)
    if axis is Axis.RACE_ETHNICITY:
        return table.race()[rows]
    spo2, sao2 = table.column("spo2")[rows], table.column("sao2")[rows]
    if axis is Axis.BIAS_MAGNITUDE:
        return disparity_bins(spo2, sao2)
    return np.where(hidden_hypoxemia(sao2, spo2), "1", "0").astype(object)


class UnknownObsId(KeyError):
    pass


def slice_metrics(preds: PredictionSet, table, axis: Axis | str, threshold: float = 0.5) -> list[SubgroupMetricRecord]:
    """All four metrics for every subgroup of ``axis`` on one fold's predictions.

    Every subgroup of the axis gets records, including empty ones, so the
    record layout is the same for each fold and arm.
    """
    axis = Axis(axis)
    index = table.obs_index
    try:
        rows = np.array([index[o] for o in preds.obs_ids], dtype=np.intp)
    except KeyError as err:
        raise UnknownObsId(err.args[0]) from None
    labels = subgroup_labels(table, rows, axis)
    scores = np.asarray(preds.scores, float)
    y = np.asarray(preds.labels)
    out = []
    for sub in subgroups(axis):
        m = labels == sub
        n = int(np.count_nonzero(m))
        if n:
            acc, rec, f1 = metrics_at_threshold(scores[m], threshold, labels=y[m])
            auc = auroc(scores[m], y[m])
        else:
            acc = rec = f1 = auc = None
        values = {Metric.AUROC: auc, Metric.RECALL: rec, Metric.F1: f1, Metric.ACCURACY: acc}
        for metric, value in values.items():
            out.append(
                SubgroupMetricRecord(
                    task=preds.task,
                    model_family=preds.model_family,
                    arm=preds.arm,
                    axis=axis.value,
                    subgroup=sub,
                    fold=preds.fold,
                    metric=metric.value,
                    value=None if value is None else float(value),
                    n=n,
                    unstable=n < MIN_STABLE_N,
                )
            )
    return out
