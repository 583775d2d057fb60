"""Summary statistics and the pooled-variance two-sample Student t-test."""

from __future__ import annotations

import math
from typing import Sequence

from .errors import InvalidInputError

_CF_EPS = 1e-15
_CF_TINY = 1e-300
_CF_MAX_ITER = 500


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and unbiased (n - 1) standard deviation; std is nan for n < 2."""
    n = len(values)
    if n == 0:
        raise InvalidInputError("mean of an empty sample")
    m = math.fsum(values) / n
    if n < 2:
        return m, math.nan
    var = math.fsum((v - m) ** 2 for v in values) / (n - 1)
    return m, math.sqrt(var)


def _beta_cf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta failed to converge for a={a}, b={b}, x={x}")


def _ibeta(x: float, y: float, a: float, b: float) -> float:
    # y is 1 - x, passed separately so callers can supply it without cancellation
    if x == 0.0 or y == 0.0:
        return 0.0 if x == 0.0 else 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log(y)
    front = math.exp(log_front)
    # the continued fraction converges fast only on this side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, y) / b


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if a <= 0 or b <= 0:
        raise InvalidInputError("beta parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise InvalidInputError(f"x must lie in [0, 1], got {x}")
    return _ibeta(x, 1.0 - x, a, b)


def t_two_sided_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    t2 = t * t
    x, y = df / (df + t2), t2 / (df + t2)
    # for small |t| evaluate the complement I_y(1/2, df/2), which keeps 1 - p exact
    if y < 0.5:
        p = 1.0 - _ibeta(y, x, 0.5, df / 2.0)
    else:
        p = _ibeta(x, y, df / 2.0, 0.5)
    return min(1.0, max(0.0, p))


def students_t_test(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sample pooled-variance t statistic and two-sided p-value.

    With zero pooled variance the result is ``(0, 1)`` for equal means and an
    infinite statistic with p = 0 otherwise.
    """
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise InvalidInputError("each sample needs at least two values")
    ma, mb = math.fsum(a) / na, math.fsum(b) / nb
    ss = math.fsum((v - ma) ** 2 for v in a) + math.fsum((v - mb) ** 2 for v in b)
    df = na + nb - 2
    pooled = ss / df
    diff = ma - mb
    if pooled == 0.0:
        if diff == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, diff), 0.0
    t = diff / math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    return t, t_two_sided_p(t, df)
