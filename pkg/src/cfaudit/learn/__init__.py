"""Binary classifiers behind a uniform train/predict interface."""

from ._backend import BACKEND
from .errors import DimensionMismatch, SingleClassTraining
from .gbt import GBTHyper, Tree, TreeEnsemble, train_gbt
from .logistic import LinearModel, LogisticHyper, train_logistic

FAMILIES = ("logistic", "gbt")


def train(family: str, X, y, hyper=None):
    if family == "logistic":
        return train_logistic(X, y, hyper)
    if family == "gbt":
        return train_gbt(X, y, hyper)
    raise ValueError(f"unknown model family {family!r}")


def predict_proba(model, X):
    return model.predict_proba(X)


def default_hyper(family: str):
    return {"logistic": LogisticHyper, "gbt": GBTHyper}[family]()


def model_from_dict(d: dict):
    if d["kind"] == "logistic":
        return LinearModel.from_dict(d)
    if d["kind"] == "gbt":
        return TreeEnsemble.from_dict(d)
    raise ValueError(f"unknown model kind {d['kind']!r}")


__all__ = [
    "BACKEND",
    "FAMILIES",
    "DimensionMismatch",
    "GBTHyper",
    "LinearModel",
    "LogisticHyper",
    "SingleClassTraining",
    "Tree",
    "TreeEnsemble",
    "default_hyper",
    "model_from_dict",
    "predict_proba",
    "train",
    "train_gbt",
    "train_logistic",
]
