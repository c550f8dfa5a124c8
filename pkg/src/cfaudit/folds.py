"""Patient-grouped, label-stratified k-fold assignment."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Mapping

import numpy as np

from .cohort import CohortTable
from .prep import TaskLabel


class TooFewPatients(ValueError):
    pass


class FoldOutOfRange(IndexError):
    pass


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    patient_to_fold: Mapping[str, int]
    seed: int
    task: str

    def row_folds(self, table: CohortTable) -> np.ndarray:
        return np.array([self.patient_to_fold[p] for p in table.patient_ids], dtype=np.intp)

    def write_csv(self, sink: IO[str]) -> None:
        w = csv.writer(sink, lineterminator="\n")
        w.writerow(["patient_id", "fold"])
        for pid in sorted(self.patient_to_fold):
            w.writerow([pid, self.patient_to_fold[pid]])


def assign_folds(table: CohortTable, labels: TaskLabel, k: int = 10, seed: int = 0) -> FoldAssignment:
    """Greedy packing of whole patients into ``k`` folds.

    Patients are visited by descending positive-row count, then descending
    row count; equal patients are ordered by a seeded shuffle, then by id.
    Each goes to the fold where it best balances the per-class row shares
    across folds, ties going to the fold with the fewest rows and then to
    the lowest fold index.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    pids = table.patient_ids
    uniq, inverse = np.unique(pids.astype(str), return_inverse=True)
    if len(uniq) < k:
        raise TooFewPatients(f"{len(uniq)} patients cannot fill {k} folds")
    y = np.asarray(labels.y).astype(bool)
    pos = np.bincount(inverse, weights=y, minlength=len(uniq)).astype(np.int64)
    size = np.bincount(inverse, minlength=len(uniq)).astype(np.int64)
    neg = size - pos

    shuffle_key = np.random.default_rng(seed).permutation(len(uniq))
    # lexsort: last key is primary
    order = np.lexsort((np.arange(len(uniq)), shuffle_key, -size, -pos))

    total_pos, total_neg = max(int(pos.sum()), 1), max(int(neg.sum()), 1)
    fold_pos = np.zeros(k, dtype=np.int64)
    fold_neg = np.zeros(k, dtype=np.int64)
    fold_size = np.zeros(k, dtype=np.int64)
    fold_of = np.empty(len(uniq), dtype=np.intp)
    # Placing (a_pos, a_neg) on fold f raises the across-fold variance of the
    # class shares by an amount increasing in a_pos*pos_f/P^2 + a_neg*neg_f/N^2.
    for i in order:
        a_p, a_n = pos[i], neg[i]
        cost = a_p * fold_pos / total_pos**2 + a_n * fold_neg / total_neg**2
        cand = np.flatnonzero(cost == cost.min())
        f = int(cand[np.argmin(fold_size[cand])])
        fold_of[i] = f
        fold_pos[f] += a_p
        fold_neg[f] += a_n
        fold_size[f] += size[i]
    mapping = {str(pid): int(fold_of[j]) for j, pid in enumerate(uniq)}
    return FoldAssignment(k=k, patient_to_fold=mapping, seed=int(seed), task=labels.task.value)


def fold_slices(assignment: FoldAssignment, table: CohortTable, fold: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 <= fold < assignment.k:
        raise FoldOutOfRange(f"fold {fold} outside [0, {assignment.k})")
    folds = assignment.row_folds(table)
    test = np.flatnonzero(folds == fold)
    train = np.flatnonzero(folds != fold)
    return train, test


def fold_positivity(assignment: FoldAssignment, table: CohortTable, labels: TaskLabel) -> np.ndarray:
    folds = assignment.row_folds(table)
    y = np.asarray(labels.y, float)
    return np.array([y[folds == f].mean() if np.any(folds == f) else np.nan for f in range(assignment.k)])
