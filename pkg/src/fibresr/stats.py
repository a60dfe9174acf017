"""Paired two-sided t-test used by the ablation reports.

Implemented directly (statistic in closed form, p-value through the
regularised incomplete beta function evaluated with a Lentz continued
fraction) so the package carries no statistics dependency at runtime.

Degenerate case: when every pairwise difference is zero the samples are
indistinguishable and the test reports t = 0, p = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (Lentz)."""
    max_iter = 300
    eps = 3e-16
    fpmin = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def _betainc_reg(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta I_x(a, b) for a, b > 0, x in [0, 1]."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: float) -> float:
    """Survival function P(T > t) of Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ConfigurationError(f"degrees of freedom must be positive, got {df}")
    if t == 0.0:
        return 0.5
    x = df / (df + t * t)
    p_two_tail = _betainc_reg(df / 2.0, 0.5, x)
    return p_two_tail / 2.0 if t > 0 else 1.0 - p_two_tail / 2.0


@dataclass(frozen=True)
class TTestResult:
    statistic: float
    pvalue: float
    df: int
    mean_diff: float


def paired_ttest(a, b) -> TTestResult:
    """Two-sided paired t-test of H0: mean(a - b) = 0.

    Inputs are paired per-frame metric values. Requires n >= 2 finite pairs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigurationError("paired_ttest expects two 1-D arrays of equal length")
    if a.size < 2:
        raise ConfigurationError(f"need at least 2 pairs, got {a.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ConfigurationError("non-finite values in t-test input")
    d = a - b
    n = d.size
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = n - 1
    if sd == 0.0:
        # all differences identical; zero difference means indistinguishable
        if mean == 0.0:
            return TTestResult(statistic=0.0, pvalue=1.0, df=df, mean_diff=0.0)
        return TTestResult(
            statistic=math.copysign(math.inf, mean), pvalue=0.0, df=df, mean_diff=mean
        )
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * student_t_sf(abs(t), df)
    p = min(1.0, max(0.0, p))
    return TTestResult(statistic=float(t), pvalue=float(p), df=df, mean_diff=mean)
