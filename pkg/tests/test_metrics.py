import math

import numpy as np
import pandas as pd
import pytest

from oracles import definitional_stats, definitional_t, definitional_trend, pairwise_auc, quantile_type7
from statarb.errors import DateMismatch, DegenerateMoments, GeometricUndefined, SingleClass, TooFewObservations
from statarb.metrics import (
    STAT_ROWS,
    auc,
    daily_auc_series,
    ols_trend,
    return_stats,
    roc_curve,
    stats_table,
    t_test_paired_vs_index,
    t_test_zero,
)


def close(a, b, rel=1e-10):
    return abs(a - b) <= rel * max(1.0, abs(b))


def test_auc_examples():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
    assert auc([0.5, 0.5], [0, 1]) == 0.5
    assert auc([(0.1, 0), (0.9, 1)]) == 1.0
    with pytest.raises(SingleClass):
        auc([0.1, 0.2], [1, 1])


def test_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = np.round(rng.random(30), 1)  # coarse scores force ties
        y = rng.integers(0, 2, 30)
        if y.min() == y.max():
            continue
        assert auc(s, y) == pairwise_auc(s.tolist(), y.tolist())


def test_auc_large_random_near_half():
    rng = np.random.default_rng(1)
    assert abs(auc(rng.random(20000), rng.integers(0, 2, 20000)) - 0.5) < 0.02


def test_auc_invariances():
    rng = np.random.default_rng(2)
    for _ in range(50):
        s = rng.normal(size=60)
        y = rng.integers(0, 2, 60)
        if y.min() == y.max():
            continue
        a = auc(s, y)
        assert auc(np.exp(s) * 3 + 1, y) == a
        assert a + auc(-s, y) == pytest.approx(1.0, abs=1e-15)


def test_roc_curve_shape():
    rng = np.random.default_rng(3)
    s = np.round(rng.random(100), 2)
    y = rng.integers(0, 2, 100)
    roc = roc_curve(s, y)
    assert (roc.fpr[0], roc.tpr[0]) == (0.0, 0.0)
    assert (roc.fpr[-1], roc.tpr[-1]) == (1.0, 1.0)
    assert (np.diff(roc.fpr) >= 0).all() and (np.diff(roc.tpr) >= 0).all()
    area = float(np.sum(np.diff(roc.fpr) * (roc.tpr[1:] + roc.tpr[:-1]) / 2))
    assert area == pytest.approx(roc.auc, abs=1e-12)


def test_trend_constant_and_oracle():
    t = ols_trend([0.55] * 40)
    assert t.slope == 0.0 and t.t == 0.0
    rng = np.random.default_rng(4)
    for _ in range(50):
        v = rng.normal(size=int(rng.integers(5, 300)))
        slope, tt = definitional_trend(v.tolist())
        got = ols_trend(v)
        assert close(got.slope, slope) and close(got.t, tt)
    with pytest.raises(TooFewObservations):
        ols_trend([1.0, 2.0])


def test_trend_detects_decline():
    rng = np.random.default_rng(5)
    v = 0.6 - 1e-4 * np.arange(2500) + rng.normal(0, 0.01, 2500)
    t = ols_trend(v)
    slope, tt = definitional_trend(v.tolist())
    assert close(t.slope, slope) and close(t.t, tt)
    assert t.t < -1.96 and t.p_value < 0.05


def test_daily_auc_series():
    rng = np.random.default_rng(6)
    days = pd.bdate_range("2012-01-02", periods=12)
    rows = []
    for i, d in enumerate(days):
        for j in range(20):
            label = 1 if i == 4 else j % 2  # day 4 is single-class
            rows.append((d, rng.random() + 0.3 * label, label))
    df = pd.DataFrame(rows, columns=["date", "score", "label"])
    series, trend, skipped = daily_auc_series(df)
    assert skipped == [days[4]]
    assert len(series) == 11 and days[4] not in series.index
    for d, v in series.items():
        g = df[df["date"] == d]
        assert v == pairwise_auc(g["score"].tolist(), g["label"].tolist())
    assert trend.n == 11


def test_return_stats_against_definitions():
    rng = np.random.default_rng(7)
    keys = [attr for _, attr in STAT_ROWS]
    for trial in range(30):
        r = rng.standard_t(4, size=1000) * 0.01
        got = return_stats(r).as_dict()
        exp = definitional_stats(r.tolist())
        for k in keys:
            assert close(got[k], exp[k]), (trial, k)
        assert got["n"] == 1000


def test_raw_kurtosis_option():
    r = np.random.default_rng(8).normal(0, 0.01, 500)
    a, b = return_stats(r), return_stats(r, excess_kurtosis=False)
    assert b.kurtosis == pytest.approx(a.kurtosis + 3, abs=1e-12)
    assert not b.excess_kurtosis


def test_return_stats_ordering_chain():
    rng = np.random.default_rng(9)
    for _ in range(200):
        n = int(rng.integers(2, 50))
        r = rng.normal(0, 0.03, n)
        s = return_stats(r)
        assert s.min <= s.q1 <= s.median <= s.q3 <= s.max
        assert s.lcl95 <= s.arithmetic_mean <= s.ucl95
        assert s.variance == pytest.approx(s.stdev**2, rel=1e-12)
        assert close(s.median, quantile_type7(r.tolist(), 0.5))
        assert s.geometric_mean <= s.arithmetic_mean + 1e-15


def test_return_stats_examples_and_errors():
    s = return_stats([0.01, -0.01] * 10)
    assert s.skewness == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DegenerateMoments):
        return_stats([0.002] * 10)
    with pytest.raises(TooFewObservations):
        return_stats([0.01])
    with pytest.raises(GeometricUndefined):
        return_stats([0.1, -1.0, 0.2])


def test_t_tests():
    rng = np.random.default_rng(10)
    for _ in range(30):
        v = rng.normal(0.001, 0.02, 1000)
        assert close(t_test_zero(v), definitional_t(v.tolist()))
        idx = rng.normal(0.0, 0.01, 1000)
        assert close(t_test_paired_vs_index(v, idx), definitional_t((v - idx).tolist()))
    assert t_test_zero(0.001 + rng.normal(0, 1e-6, 500)) > 100
    with pytest.raises(TooFewObservations):
        t_test_zero([0.1])
    dates = pd.bdate_range("2010-01-04", periods=5)
    a = pd.Series([0.25, 0.5, -0.25, 0.0, 0.75], index=dates)
    assert t_test_paired_vs_index(a, a.copy()) == 0.0
    assert t_test_paired_vs_index(a + 0.125, a) == math.inf  # exact constant difference
    with pytest.raises(DateMismatch):
        t_test_paired_vs_index(a, a.iloc[:4])
    with pytest.raises(DateMismatch):
        t_test_paired_vs_index([0.1, 0.2], [0.1])


def test_stats_table_layout():
    rng = np.random.default_rng(11)
    cols = {"Model (CR)": rng.normal(0, 0.01, 100), "Index": rng.normal(0, 0.01, 100)}
    tab = stats_table(cols)
    assert list(tab.columns) == ["Model (CR)", "Index"]
    assert tab.index[0] == "Minimum" and tab.index[-1] == "Excess Kurtosis"
    assert len(tab) == 14
    assert stats_table(cols, excess_kurtosis=False).index[-1] == "Kurtosis"
    assert tab.loc["Arithmetic Mean", "Index"] == pytest.approx(cols["Index"].mean(), abs=1e-15)
