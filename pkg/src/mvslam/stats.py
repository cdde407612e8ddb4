"""Two-sample comparison used to decide whether one method beats another."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import InsufficientData


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: int
    degenerate: bool = False


@dataclass(frozen=True)
class FTestResult:
    f: float
    p: float
    df_num: int
    df_den: int
    degenerate: bool = False


@dataclass(frozen=True)
class NormalityResult:
    skewness: float
    excess_kurtosis: float
    jb: float
    p: float


def _samples(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    if len(a) < 2:
        raise InsufficientData(f"{name} needs at least 2 samples, got {len(a)}")
    if not np.all(np.isfinite(a)):
        raise InsufficientData(f"{name} contains non-finite samples")
    return a


def t_sf_two_sided(t: float, df: float) -> float:
    """``P(|T| >= |t|)`` for Student's t, via the regularised incomplete beta."""
    if math.isinf(t):
        return 0.0
    return float(special.betainc(0.5 * df, 0.5, df / (df + t * t)))


def two_sample_ttest(a, b) -> TTestResult:
    """Pooled-variance Student t-test, two-sided."""
    a, b = _samples(a, "a"), _samples(b, "b")
    na, nb = len(a), len(b)
    df = na + nb - 2
    diff = a.mean() - b.mean()
    sp2 = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / df
    se = math.sqrt(sp2 * (1.0 / na + 1.0 / nb))
    if se == 0.0:
        if diff == 0.0:
            return TTestResult(0.0, 1.0, df, degenerate=True)
        return TTestResult(math.copysign(math.inf, diff), 0.0, df, degenerate=True)
    t = diff / se
    return TTestResult(float(t), t_sf_two_sided(t, df), df)


def f_sf(f: float, d1: float, d2: float) -> float:
    """Upper tail of the F distribution."""
    if f <= 0.0:
        return 1.0
    return float(special.betainc(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * f)))


def variance_equality_test(a, b) -> FTestResult:
    """Two-sided F-test with the larger sample variance on top."""
    a, b = _samples(a, "a"), _samples(b, "b")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    (hi, dhi), (lo, dlo) = sorted([(va, len(a) - 1), (vb, len(b) - 1)], key=lambda x: -x[0])
    if lo == 0.0:
        if hi == 0.0:
            return FTestResult(1.0, 1.0, dhi, dlo, degenerate=True)
        return FTestResult(math.inf, 0.0, dhi, dlo, degenerate=True)
    f = hi / lo
    if f == 1.0 and dhi == dlo:
        # the median of F(d, d) is exactly 1; betainc rounds a hair below 0.5
        return FTestResult(1.0, 1.0, dhi, dlo)
    return FTestResult(float(f), min(1.0, 2.0 * f_sf(f, dhi, dlo)), dhi, dlo)


def jarque_bera(x) -> NormalityResult:
    """Sample skewness, excess kurtosis and the JB statistic (chi-square, 2 dof)."""
    x = _samples(x, "x")
    d = x - x.mean()
    m2 = np.mean(d**2)
    if m2 == 0.0:
        return NormalityResult(0.0, 0.0, 0.0, 1.0)
    skew = np.mean(d**3) / m2**1.5
    kurt = np.mean(d**4) / m2**2 - 3.0
    jb = len(x) / 6.0 * (skew**2 + kurt**2 / 4.0)
    return NormalityResult(float(skew), float(kurt), float(jb), float(math.exp(-0.5 * jb)))
