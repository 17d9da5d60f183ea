"""Regularized incomplete beta, Student-t CDF and Welch's t-test."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import AnalysisError, ContractError

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 20000


def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for I_x(a, b), evaluated with the modified Lentz method."""
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


def betainc(a: float, b: float, x: float, complement: float | None = None) -> float:
    """Regularized incomplete beta I_x(a, b).

    ``complement`` may pass 1 - x computed without cancellation.
    """
    if a <= 0 or b <= 0:
        raise ContractError(f"betainc needs a, b > 0, got a={a}, b={b}")
    y = 1.0 - x if complement is None else complement
    if x < 0.0 or x > 1.0 or y < 0.0 or y > 1.0:
        raise ContractError(f"betainc argument x={x} outside [0,1]")
    if x == 0.0:
        return 0.0
    if y == 0.0:
        return 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log(y)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return min(1.0, front * _beta_cf(a, b, x) / a)
    return max(0.0, 1.0 - front * _beta_cf(b, a, y) / b)


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    t2 = t * t
    return min(1.0, betainc(0.5 * df, 0.5, df / (df + t2), t2 / (df + t2)))


def t_cdf(t: float, df: float) -> float:
    if df <= 0:
        raise ContractError(f"degrees of freedom must be positive, got {df}")
    if t == 0.0:
        return 0.5
    tail = 0.5 * t_two_sided_p(t, df)
    return 1.0 - tail if t > 0 else tail


@dataclass
class TTestResult:
    feature: int
    mean_a: float
    mean_b: float
    t_statistic: float
    degrees_of_freedom: float
    p_value: float
    name: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def welch_t_test(a, b, feature: int = -1, name: str = "") -> TTestResult:
    """Unequal-variance two-sample t-test with Welch-Satterthwaite degrees of freedom.

    Both groups constant: equal means give t=0, p=1; different means give
    t=+-inf and p=0 (below any reportable level).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise AnalysisError(f"each group needs at least 2 members (got {na} and {nb})")
    ma, mb = float(a.mean()), float(b.mean())
    qa = float(a.var(ddof=1)) / na
    qb = float(b.var(ddof=1)) / nb
    se2 = qa + qb
    if se2 == 0.0:
        if ma == mb:
            return TTestResult(feature, ma, mb, 0.0, float(na + nb - 2), 1.0, name)
        return TTestResult(feature, ma, mb, math.copysign(math.inf, ma - mb), float(na + nb - 2), 0.0, name)
    t = (ma - mb) / math.sqrt(se2)
    df = se2 * se2 / (qa * qa / (na - 1) + qb * qb / (nb - 1))
    return TTestResult(feature, ma, mb, t, df, t_two_sided_p(t, df), name)
