import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfaudit.learn import (
    DimensionMismatch,
    LinearModel,
    LogisticHyper,
    SingleClassTraining,
    model_from_dict,
    train_logistic,
)
from cfaudit.learn.logistic import gradient, objective, standardize_stats

from .oracles import numeric_gradient


def random_problem(rng, n=50, d=5):
    X = rng.normal(size=(n, d)) * rng.uniform(0.5, 3.0, d) + rng.normal(size=d)
    w = rng.normal(size=d)
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-(X - X.mean(0)) @ w))).astype(float)
    y[:2] = [0, 1]
    return X, y


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    X, y = random_problem(rng)
    mean, sd = standardize_stats(X)
    Z = (X - mean) / sd
    w, b = rng.normal(size=5), 0.3
    gw, gb = gradient(w, b, Z, y, 1.0)
    nw, nb = numeric_gradient(lambda w_, b_: objective(w_, b_, Z, y, 1.0), w, b)
    assert rel_err(np.r_[gw, gb], np.r_[nw, nb]) <= 1e-6


def test_constant_columns_intercept_only():
    X = np.ones((40, 3))
    y = np.r_[np.ones(10), np.zeros(30)]
    m = train_logistic(X, y)
    assert np.allclose(m.weights, 0.0)
    assert np.all(m.sd == 1.0)
    assert abs(1 / (1 + np.exp(-m.bias)) - 0.25) <= 1e-3


def test_separable_1d():
    x = np.r_[np.linspace(-3, -0.1, 20), np.linspace(0.1, 3, 20)][:, None]
    y = (x[:, 0] > 0).astype(float)
    m = train_logistic(x, y, LogisticHyper(l2_lambda=1e-3))
    p = m.predict_proba(x)
    assert np.array_equal(p > 0.5, y == 1)


def test_zero_model_predicts_half():
    m = LinearModel(np.zeros(3), 0.0, np.zeros(3), np.ones(3), LogisticHyper())
    assert np.all(m.predict_proba(np.random.default_rng(1).normal(size=(7, 3))) == 0.5)


def test_errors():
    with pytest.raises(SingleClassTraining):
        train_logistic(np.ones((5, 2)), np.zeros(5))
    with pytest.raises(SingleClassTraining):
        train_logistic(np.ones((1, 2)), np.ones(1))
    m = train_logistic(*random_problem(np.random.default_rng(2)))
    with pytest.raises(DimensionMismatch):
        m.predict_proba(np.ones((3, 4)))


def test_deterministic_and_serializable():
    X, y = random_problem(np.random.default_rng(5), n=200, d=6)
    a, b = train_logistic(X, y), train_logistic(X, y)
    assert np.array_equal(a.weights, b.weights) and a.bias == b.bias
    back = model_from_dict(json.loads(json.dumps(a.to_dict())))
    assert np.array_equal(back.predict_proba(X), a.predict_proba(X))


def test_probability_range_on_extreme_inputs():
    X, y = random_problem(np.random.default_rng(6))
    m = train_logistic(X, y, LogisticHyper(l2_lambda=1e-6))
    p = m.predict_proba(np.r_[X * 1e6, -X * 1e6])
    assert np.all((p > 0) & (p < 1))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), l2=st.sampled_from([0.0, 0.01, 1.0, 10.0]))
def test_loss_never_above_intercept_only(seed, l2):
    X, y = random_problem(np.random.default_rng(seed), n=60, d=4)
    m = train_logistic(X, y, LogisticHyper(l2_lambda=l2, max_iter=300))
    Z = (X - m.mean) / m.sd
    ybar = y.mean()
    base = objective(np.zeros(4), float(np.log(ybar / (1 - ybar))), Z, y, l2)
    assert objective(m.weights, m.bias, Z, y, l2) <= base + 1e-12
    assert objective(m.weights, m.bias, Z, y, l2) <= objective(np.zeros(4), 0.0, Z, y, l2)


def test_converges_to_tolerance():
    X, y = random_problem(np.random.default_rng(8), n=300, d=5)
    m = train_logistic(X, y)
    assert m.converged
    gw, gb = gradient(m.weights, m.bias, (X - m.mean) / m.sd, y, 1.0)
    assert max(np.abs(gw).max(), abs(gb)) <= 1e-6
