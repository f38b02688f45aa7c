"""Paired one-tailed t-test on top of a self-contained incomplete beta.

The survival function of Student's t with ``df`` degrees of freedom is
``0.5 * I_x(df/2, 1/2)`` at ``x = df / (df + t^2)`` for t >= 0, where ``I``
is the regularized incomplete beta function, evaluated here by the standard
continued-fraction expansion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from ..errors import ValidationError

_MAX_ITER = 300
_CF_EPS = 3e-15
_FPMIN = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ValidationError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValidationError("beta parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"x must be in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: int) -> float:
    """One-tailed p-value P(T_df > t)."""
    if df < 1:
        raise ValidationError("degrees of freedom must be >= 1")
    x = df / (df + t * t)
    half_tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x)
    return half_tail if t >= 0 else 1.0 - half_tail


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    degrees_of_freedom: int
    p_value_one_tailed: float


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Test whether the paired samples in `a` exceed those in `b`.

    t = mean(d) / (std(d) / sqrt(n)) on d = a - b with the sample standard
    deviation (ddof 1); the p-value is the upper tail, so small p supports
    "a exceeds b".
    """
    if len(a) != len(b):
        raise ValidationError(f"paired samples differ in length: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 2:
        raise ValidationError("need at least 2 pairs")
    diffs = [float(x) - float(y) for x, y in zip(a, b)]
    mean = sum(diffs) / n
    ssq = sum((d - mean) ** 2 for d in diffs)
    if ssq == 0.0:
        raise ValidationError("all paired differences are identical; t is undefined")
    std = math.sqrt(ssq / (n - 1))
    t = mean / (std / math.sqrt(n))
    return TTestResult(
        t_statistic=t,
        degrees_of_freedom=n - 1,
        p_value_one_tailed=student_t_sf(t, n - 1),
    )
