"""Fold-paired Student t-test with a self-contained t-distribution tail."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


class InsufficientPairs(ValueError):
    def __init__(self, n: int):
        super().__init__(f"paired t-test needs at least 2 complete pairs, got {n}")
        self.n = n


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # the fraction converges fast only below the mean; use symmetry above it
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return min(1.0, regularized_incomplete_beta(df / 2.0, 0.5, x))


@dataclass(frozen=True)
class PairedTTest:
    t_stat: float
    p_value: float
    n_pairs: int
    mean_diff: float


def _complete_pairs(control, treatment):
    if len(control) != len(treatment):
        raise ValueError("control and treatment vectors differ in length")
    pairs = []
    for c, t in zip(control, treatment):
        if c is None or t is None:
            continue
        c, t = float(c), float(t)
        if math.isnan(c) or math.isnan(t):
            continue
        pairs.append((c, t))
    return pairs


def paired_t_test(control: Sequence[Optional[float]], treatment: Sequence[Optional[float]]) -> PairedTTest:
    """Two-sided paired t-test on ``control - treatment``.

    Pairs where either side is undefined are dropped first. A zero-variance
    difference gives t = 0, p = 1 when the mean is zero and t = +/-inf, p = 0
    otherwise.
    """
    pairs = _complete_pairs(control, treatment)
    n = len(pairs)
    if n < 2:
        raise InsufficientPairs(n)
    d = [c - t for c, t in pairs]
    mean = math.fsum(d) / n
    var = math.fsum((x - mean) ** 2 for x in d) / (n - 1)
    if var == 0.0:
        if mean == 0.0:
            return PairedTTest(0.0, 1.0, n, 0.0)
        return PairedTTest(math.copysign(math.inf, mean), 0.0, n, mean)
    t = mean / math.sqrt(var / n)
    return PairedTTest(t, t_two_sided_p(t, n - 1), n, mean)


def stars(p: Optional[float]) -> str:
    if p is None:
        return ""
    if p <= 0.001:
        return "***"
    if p <= 0.01:
        return "**"
    if p <= 0.05:
        return "*"
    return ""
