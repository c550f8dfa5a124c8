"""L2-regularised logistic regression fit by full-batch gradient descent."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch, SingleClassTraining


@dataclass(frozen=True)
class LogisticHyper:
    l2_lambda: float = 1.0
    max_iter: int = 1000
    tol: float = 1e-6

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    sd: np.ndarray
    hyper: LogisticHyper
    n_iter: int = 0
    converged: bool = False

    kind = "logistic"

    @property
    def n_features(self) -> int:
        return len(self.weights)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "standardization": {"mean": self.mean.tolist(), "sd": self.sd.tolist()},
            "hyper": self.hyper.to_dict(),
            "n_iter": self.n_iter,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(
            weights=np.asarray(d["weights"], float),
            bias=float(d["bias"]),
            mean=np.asarray(d["standardization"]["mean"], float),
            sd=np.asarray(d["standardization"]["sd"], float),
            hyper=LogisticHyper(**d["hyper"]),
            n_iter=int(d.get("n_iter", 0)),
            converged=bool(d.get("converged", False)),
        )

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionMismatch(self.n_features, X.shape[-1] if X.ndim else 0)
        return ((X - self.mean) / self.sd) @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        return _open_unit(expit(self.decision_function(X)))


def _open_unit(p: np.ndarray) -> np.ndarray:
    # keep probabilities strictly inside (0, 1) even when the logit saturates
    return np.clip(p, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)


def standardize_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return mean, sd


def objective(w: np.ndarray, b: float, Z: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Mean binary cross-entropy plus (l2 / n) * ||w||^2 on standardised inputs."""
    z = Z @ w + b
    n = len(y)
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + (l2 / n) * (w @ w))


def gradient(w: np.ndarray, b: float, Z: np.ndarray, y: np.ndarray, l2: float) -> tuple[np.ndarray, float]:
    n = len(y)
    r = expit(Z @ w + b) - y
    return Z.T @ r / n + (2.0 * l2 / n) * w, float(r.mean())


def train_logistic(X, y, hyper: LogisticHyper | None = None) -> LinearModel:
    """Fit on standardised columns with Armijo backtracking on the step size.

    Stops when the gradient's infinity norm falls to ``hyper.tol`` or after
    ``hyper.max_iter`` iterations.
    """
    hyper = hyper or LogisticHyper()
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise ValueError("X must be 2-D with one row per label")
    if len(y) < 2:
        raise SingleClassTraining("need at least two training rows")
    if y.min() == y.max():
        raise SingleClassTraining("training labels contain a single class")

    mean, sd = standardize_stats(X)
    Z = (X - mean) / sd
    l2 = hyper.l2_lambda
    w = np.zeros(X.shape[1])
    b = 0.0
    loss = objective(w, b, Z, y, l2)
    step = 1.0
    converged = False
    it = 0
    for it in range(1, hyper.max_iter + 1):
        gw, gb = gradient(w, b, Z, y, l2)
        gnorm2 = float(gw @ gw + gb * gb)
        if max(np.max(np.abs(gw), initial=0.0), abs(gb)) <= hyper.tol:
            converged = True
            it -= 1
            break
        while True:
            w_new, b_new = w - step * gw, b - step * gb
            loss_new = objective(w_new, b_new, Z, y, l2)
            if loss_new <= loss - 0.5 * step * gnorm2 or step < 1e-12:
                break
            step *= 0.5
        if loss_new > loss:
            # step collapsed without progress; the iterate is already optimal to precision
            break
        w, b, loss = w_new, b_new, loss_new
        step = min(step * 2.0, 64.0)
    else:
        gw, gb = gradient(w, b, Z, y, l2)
        converged = max(np.max(np.abs(gw), initial=0.0), abs(gb)) <= hyper.tol
    return LinearModel(w, float(b), mean, sd, hyper, n_iter=it, converged=converged)
