"""
Classification and return statistics: ROC/AUC, daily AUC trend, return
moments in the layout of a daily return statistics table, and t-tests.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from scipy import stats as sps

from .errors import (
    DateMismatch,
    DegenerateMoments,
    GeometricUndefined,
    SingleClass,
    TooFewObservations,
)

Z_95 = 1.96


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def _split_scores(scores, labels=None):
    if labels is None:
        pairs = list(scores)
        s = np.array([p[0] for p in pairs], dtype=float)
        y = np.array([p[1] for p in pairs], dtype=int)
    else:
        s = np.asarray(scores, dtype=float)
        y = np.asarray(labels, dtype=int)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    return s, y, n_pos, n_neg


def auc(scores, labels=None) -> float:
    """Mann-Whitney AUC: P(positive outscores negative), ties count one half.

    Accepts either ``auc(scores, labels)`` or ``auc([(score, label), ...])``.
    """
    s, y, n_pos, n_neg = _split_scores(scores, labels)
    ranks = sps.rankdata(s, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels=None) -> RocCurve:
    s, y, n_pos, n_neg = _split_scores(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    return RocCurve(fpr, tpr, auc(s, y))


@dataclass(frozen=True)
class TrendTest:
    slope: float
    intercept: float
    se: float
    t: float
    p_value: float
    n: int


def ols_trend(values: Sequence[float]) -> TrendTest:
    """OLS of ``values`` on their position 0..n-1 with a two-sided t-test on the slope."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 3:
        raise TooFewObservations("trend test needs at least 3 points")
    x = np.arange(n, dtype=float)
    xm, vm = x.mean(), v.mean()
    sxx = ((x - xm) ** 2).sum()
    slope = float(((x - xm) * (v - vm)).sum() / sxx)
    intercept = float(vm - slope * xm)
    ssr = float(((v - intercept - slope * x) ** 2).sum())
    se = math.sqrt(ssr / (n - 2) / sxx)
    if se == 0:
        t = 0.0 if slope == 0 else math.copysign(math.inf, slope)
    else:
        t = slope / se
    p = float(2 * sps.t.sf(abs(t), df=n - 2))
    return TrendTest(slope, intercept, se, t, p, n)


def daily_auc_series(predictions: pd.DataFrame) -> tuple[pd.Series, TrendTest | None, list]:
    """Per-day AUC from ``date, score, label`` rows plus a linear trend test.

    Days with a single class are skipped and returned in the third element.
    """
    values, skipped = {}, []
    for day, grp in predictions.groupby("date", sort=True):
        y = grp["label"].to_numpy()
        if y.min() == y.max():
            skipped.append(day)
            continue
        values[day] = auc(grp["score"].to_numpy(), y)
    series = pd.Series(values, dtype=float, name="auc")
    trend = ols_trend(series.to_numpy()) if len(series) >= 3 else None
    return series, trend, skipped


@dataclass(frozen=True)
class ReturnStats:
    min: float
    q1: float
    median: float
    arithmetic_mean: float
    geometric_mean: float
    q3: float
    max: float
    se_mean: float
    lcl95: float
    ucl95: float
    variance: float
    stdev: float
    skewness: float
    kurtosis: float
    n: int
    excess_kurtosis: bool = True

    def as_dict(self) -> dict:
        return asdict(self)


STAT_ROWS = [
    ("Minimum", "min"),
    ("Quartile 1", "q1"),
    ("Median", "median"),
    ("Arithmetic Mean", "arithmetic_mean"),
    ("Geometric Mean", "geometric_mean"),
    ("Quartile 3", "q3"),
    ("Maximum", "max"),
    ("SE Mean", "se_mean"),
    ("LCL Mean (0.95)", "lcl95"),
    ("UCL Mean (0.95)", "ucl95"),
    ("Variance", "variance"),
    ("Stdev", "stdev"),
    ("Skewness", "skewness"),
    ("Kurtosis", "kurtosis"),
]


def return_stats(series: Iterable[float], excess_kurtosis: bool = True) -> ReturnStats:
    """Descriptive statistics of a daily return series.

    Variance and stdev use the n-1 denominator; skewness and kurtosis are the
    moment ratios m3/m2^1.5 and m4/m2^2 (minus 3 when ``excess_kurtosis``).
    Quartiles interpolate linearly between order statistics. The confidence
    band is mean +- 1.96 standard errors.
    """
    r = np.asarray(list(series) if not isinstance(series, (np.ndarray, pd.Series)) else series, dtype=float)
    n = r.size
    if n < 2:
        raise TooFewObservations(f"need at least 2 returns, got {n}")
    if (r <= -1).any():
        raise GeometricUndefined("geometric mean undefined for returns <= -100%")
    mean = float(r.mean())
    var = float(r.var(ddof=1))
    sd = math.sqrt(var)
    dev = r - mean
    m2 = float(np.mean(dev**2))
    if m2 == 0 or r.max() == r.min():
        raise DegenerateMoments("constant series has undefined skewness and kurtosis")
    skew = float(np.mean(dev**3) / m2**1.5)
    kurt = float(np.mean(dev**4) / m2**2) - (3.0 if excess_kurtosis else 0.0)
    q1, med, q3 = (float(q) for q in np.quantile(r, [0.25, 0.5, 0.75]))
    se = sd / math.sqrt(n)
    return ReturnStats(
        min=float(r.min()),
        q1=q1,
        median=med,
        arithmetic_mean=mean,
        geometric_mean=float(math.expm1(np.mean(np.log1p(r)))),
        q3=q3,
        max=float(r.max()),
        se_mean=se,
        lcl95=mean - Z_95 * se,
        ucl95=mean + Z_95 * se,
        variance=var,
        stdev=sd,
        skewness=skew,
        kurtosis=kurt,
        n=n,
        excess_kurtosis=excess_kurtosis,
    )


def _t_stat(values: np.ndarray) -> float:
    n = values.size
    if n < 2:
        raise TooFewObservations(f"need at least 2 observations, got {n}")
    mean = float(values.mean())
    sd = float(values.std(ddof=1))
    if sd == 0:
        return 0.0 if mean == 0 else math.copysign(math.inf, mean)
    return mean / (sd / math.sqrt(n))


def t_test_zero(series) -> float:
    """t statistic for H0: mean return equals zero."""
    return _t_stat(np.asarray(series, dtype=float))


def t_test_paired_vs_index(strategy: pd.Series, index: pd.Series) -> float:
    """Paired t statistic for H0: equal mean returns, on per-day differences."""
    if not isinstance(strategy, pd.Series) or not isinstance(index, pd.Series):
        a, b = np.asarray(strategy, dtype=float), np.asarray(index, dtype=float)
        if a.shape != b.shape:
            raise DateMismatch("series lengths differ")
        return _t_stat(a - b)
    if not strategy.index.equals(index.index):
        raise DateMismatch("strategy and index series cover different dates")
    return _t_stat(strategy.to_numpy(float) - index.to_numpy(float))


def stats_table(columns: dict[str, Iterable[float]], excess_kurtosis: bool = True) -> pd.DataFrame:
    """Statistic-by-series table: one row per statistic, one column per series."""
    out = {}
    for name, series in columns.items():
        st = return_stats(series, excess_kurtosis)
        out[name] = [getattr(st, attr) for _, attr in STAT_ROWS]
    label = "Excess Kurtosis" if excess_kurtosis else "Kurtosis"
    index = [lbl if attr != "kurtosis" else label for lbl, attr in STAT_ROWS]
    return pd.DataFrame(out, index=pd.Index(index, name="statistic"))
