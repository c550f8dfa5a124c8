"""Gradient-boosted regression trees for binary classification (Newton boosting).

Each round fits one depth-limited tree to the gradients and hessians of the
logistic loss. Splits are searched over per-feature quantile thresholds of
the training data using histogram sums; leaves store -G / (H + lambda).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from . import _backend
from .errors import DimensionMismatch, SingleClassTraining


@dataclass(frozen=True)
class GBTHyper:
    n_rounds: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_child_weight: float = 1.0
    candidate_quantiles: int = 32
    reg_lambda: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Tree:
    """Flat binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], np.intp),
            threshold=np.asarray(d["threshold"], float),
            left=np.asarray(d["left"], np.intp),
            right=np.asarray(d["right"], np.intp),
            value=np.asarray(d["value"], float),
        )

    @classmethod
    def stump(cls, feature: int, threshold: float, left_value: float, right_value: float) -> "Tree":
        return cls(
            feature=np.array([feature, -1, -1], np.intp),
            threshold=np.array([threshold, 0.0, 0.0]),
            left=np.array([1, -1, -1], np.intp),
            right=np.array([2, -1, -1], np.intp),
            value=np.array([0.0, left_value, right_value]),
        )


@dataclass(frozen=True)
class TreeEnsemble:
    trees: tuple[Tree, ...]
    base_score: float
    hyper: GBTHyper
    n_features: int
    train_loss: tuple[float, ...] = field(default=())

    kind = "gbt"

    def decision_function(self, X, backend: str | None = None) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionMismatch(self.n_features, X.shape[-1] if X.ndim else 0)
        k = _backend.get(backend)
        margin = np.full(X.shape[0], self.base_score)
        lr = self.hyper.learning_rate
        for t in self.trees:
            margin += lr * k.predict_tree(X, t.feature, t.threshold, t.left, t.right, t.value)
        return margin

    def predict_proba(self, X, backend: str | None = None) -> np.ndarray:
        p = expit(self.decision_function(X, backend))
        return np.clip(p, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "base_score": self.base_score,
            "n_features": self.n_features,
            "hyper": self.hyper.to_dict(),
            "trees": [t.to_dict() for t in self.trees],
            "train_loss": list(self.train_loss),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsemble":
        return cls(
            trees=tuple(Tree.from_dict(t) for t in d["trees"]),
            base_score=float(d["base_score"]),
            hyper=GBTHyper(**d["hyper"]),
            n_features=int(d["n_features"]),
            train_loss=tuple(d.get("train_loss", ())),
        )


def candidate_thresholds(X: np.ndarray, n_quantiles: int) -> list[np.ndarray]:
    """Sorted unique interior quantiles of each column."""
    q = np.arange(1, n_quantiles + 1) / (n_quantiles + 1)
    return [np.unique(np.quantile(X[:, j], q)) for j in range(X.shape[1])]


def bin_codes(X: np.ndarray, thresholds: list[np.ndarray]) -> np.ndarray:
    """Feature-major codes: code c means thresholds[c-1] < x <= thresholds[c]."""
    codes = np.empty((X.shape[1], X.shape[0]), dtype=np.uint8)
    for j, thr in enumerate(thresholds):
        codes[j] = np.searchsorted(thr, X[:, j], side="left")
    return codes


def logloss(margin: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


def _best_split(G, H, g_sum, h_sum, n_thr, lam, mcw):
    """Return (gain, feature, threshold index) of the best valid split or None.

    Ties resolve to the lowest feature, then the lowest threshold, because
    argmax returns the first maximum of the feature-major gain table.
    """
    GL = np.cumsum(G, axis=1)[:, :-1]
    HL = np.cumsum(H, axis=1)[:, :-1]
    GR = g_sum - GL
    HR = h_sum - HL
    gain = GL * GL / (HL + lam) + GR * GR / (HR + lam) - g_sum * g_sum / (h_sum + lam)
    valid = (HL >= mcw) & (HR >= mcw)
    valid &= np.arange(GL.shape[1])[None, :] < n_thr[:, None]
    gain = np.where(valid, gain, -np.inf)
    flat = int(np.argmax(gain))
    f, j = divmod(flat, gain.shape[1])
    best = gain[f, j]
    if not best > 0.0:
        return None
    return float(best), f, j


def _grow_tree(codes, thresholds, n_thr, grad, hess, rows, hyper: GBTHyper, kernels):
    n_bins = int(n_thr.max()) + 1 if len(n_thr) else 1
    lam, mcw = hyper.reg_lambda, hyper.min_child_weight
    feature, threshold, left, right, value = [], [], [], [], []
    leaf_rows = []  # (node id, rows) for every leaf, used to update training margins

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    frontier = [(new_node(), rows)]
    for depth in range(hyper.max_depth + 1):
        next_frontier = []
        for node, node_rows in frontier:
            g_sum = float(np.sum(grad[node_rows]))
            h_sum = float(np.sum(hess[node_rows]))
            split = None
            if depth < hyper.max_depth and len(node_rows) >= 2:
                G, H = kernels.histogram(codes, node_rows, grad, hess, n_bins)
                split = _best_split(G, H, g_sum, h_sum, n_thr, lam, mcw)
            if split is None:
                value[node] = -g_sum / (h_sum + lam)
                leaf_rows.append((node, node_rows))
                continue
            _, f, j = split
            go_left = codes[f, node_rows] <= j
            li, ri = new_node(), new_node()
            feature[node], threshold[node] = f, float(thresholds[f][j])
            left[node], right[node] = li, ri
            next_frontier.append((li, node_rows[go_left]))
            next_frontier.append((ri, node_rows[~go_left]))
        frontier = next_frontier
        if not frontier:
            break
    tree = Tree(
        feature=np.asarray(feature, np.intp),
        threshold=np.asarray(threshold, float),
        left=np.asarray(left, np.intp),
        right=np.asarray(right, np.intp),
        value=np.asarray(value, float),
    )
    return tree, leaf_rows


def train_gbt(X, y, hyper: GBTHyper | None = None, backend: str | None = None) -> TreeEnsemble:
    """Fit the boosted ensemble; deterministic for identical inputs."""
    hyper = hyper or GBTHyper()
    if not 1 <= hyper.candidate_quantiles <= 254:
        raise ValueError("candidate_quantiles must lie in [1, 254]")
    kernels = _backend.get(backend)
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, float)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise ValueError("X must be 2-D with one row per label")
    if len(y) == 0 or y.min() == y.max():
        raise SingleClassTraining("training labels contain a single class")

    thresholds = candidate_thresholds(X, hyper.candidate_quantiles)
    n_thr = np.array([len(t) for t in thresholds], dtype=np.intp)
    codes = bin_codes(X, thresholds)
    rows = np.arange(len(y), dtype=np.intp)

    ybar = float(y.mean())
    base = float(np.log(ybar / (1.0 - ybar)))
    margin = np.full(len(y), base)
    trees = []
    losses = [logloss(margin, y)]
    for _ in range(hyper.n_rounds):
        p = expit(margin)
        grad = p - y
        hess = p * (1.0 - p)
        tree, leaves = _grow_tree(codes, thresholds, n_thr, grad, hess, rows, hyper, kernels)
        for node, leaf in leaves:
            margin[leaf] += hyper.learning_rate * tree.value[node]
        trees.append(tree)
        losses.append(logloss(margin, y))
    return TreeEnsemble(tuple(trees), base, hyper, X.shape[1], tuple(losses))
