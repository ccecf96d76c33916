import datetime as dt

import numpy as np
import pandas as pd
import pytest

from conftest import weekdays
from oracles import pairwise_auc
from statarb import gbm
from statarb.errors import InvalidConfig, RangeTooShort
from statarb.features import CATEGORICAL_LEVELS, CR_COLUMNS, GI_COLUMNS, PANEL_COLUMNS, SVI_COLUMNS
from statarb.gbm import GbmConfig
from statarb.seeding import derive_seed
from statarb.walkforward import (
    CvResult,
    FitRecord,
    ModelSpec,
    cross_validate,
    fit_counts,
    leakage_violations,
    make_folds,
    make_periods,
    model_specs,
    run_period,
    run_study,
    select_depth,
)

D = dt.date


def fake_panel(start=D(2005, 1, 3), n_days=780, n_tickers=10, seed=0, xor=False):
    """Panel-shaped frame with random predictors and a label planted in cr_1 (or cr_1 XOR dsvi_1)."""
    rng = np.random.default_rng(seed)
    days = weekdays(start, n_days)
    n = n_days * n_tickers
    df = pd.DataFrame(
        {
            "ticker": np.tile([f"T{i}" for i in range(n_tickers)], n_days),
            "date": pd.to_datetime(np.repeat(days, n_tickers)),
        }
    )
    for c in CR_COLUMNS:
        df[c] = 1 + rng.normal(0, 0.02, n)
    for c in SVI_COLUMNS:
        df[c] = rng.normal(0, 1, n)
    df["weekday"] = pd.Categorical(df["date"].dt.strftime("%a"), categories=CATEGORICAL_LEVELS["weekday"])
    df["industry"] = pd.Categorical(
        rng.choice(list(CATEGORICAL_LEVELS["industry"][:4]), n), categories=CATEGORICAL_LEVELS["industry"]
    )
    df["dvol"] = rng.normal(0, 0.3, n)
    signal = df["cr_1"] > 1
    if xor:
        signal = signal ^ (df["dsvi_1"] > 0)
    noise = rng.random(n) < 0.15
    df["label"] = (signal ^ noise).astype(int)
    assert list(df.columns) == PANEL_COLUMNS
    return df


def test_eleven_periods():
    periods = make_periods(D(2005, 1, 1), D(2017, 12, 31))
    assert len(periods) == 11
    p1 = periods[0]
    assert p1.train_range == (D(2005, 1, 1), D(2006, 12, 31))
    assert p1.test_range == (D(2007, 1, 1), D(2007, 12, 31))
    assert [p.test_start.year for p in periods] == list(range(2007, 2018))
    assert [p.index for p in periods] == list(range(1, 12))
    for p in periods:
        assert p.test_start == p.train_end + dt.timedelta(days=1)
    for a, b in zip(periods, periods[1:]):
        assert b.test_start == a.test_end + dt.timedelta(days=1)


def test_period_edge_cases():
    assert len(make_periods(D(2005, 1, 1), D(2007, 12, 31))) == 1
    with pytest.raises(RangeTooShort):
        make_periods(D(2005, 1, 1), D(2007, 12, 30))


def test_synthetic_calendar_lengths():
    days = weekdays(D(2005, 1, 3), 13 * 260)
    for p in make_periods(D(2005, 1, 1), D(2017, 12, 31)):
        n_train = sum(p.train_start <= d <= p.train_end for d in days)
        n_test = sum(p.test_start <= d <= p.test_end for d in days)
        assert abs(n_train - 504) <= 20 and abs(n_test - 252) <= 10


@pytest.mark.parametrize("n", [8, 9, 15, 503, 504, 510])
def test_folds_partition(n):
    days = weekdays(D(2010, 1, 4), n)
    folds = make_folds(days)
    assert [f.index for f in folds] == list(range(1, 9))
    assert [d for f in folds for d in f.days] == days
    sizes = [len(f.days) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    for a, b in zip(folds, folds[1:]):
        assert a.end < b.start
    with pytest.raises(RangeTooShort):
        make_folds(days[:7])


def test_model_specs():
    specs = model_specs()
    assert [s.name for s in specs] == ["CR", "SVI", "GI", "CR_SVI", "CR_GI", "SVI_GI", "CR_SVI_GI"]
    assert specs[-1].label == "Model (CR, SVI, GI)"
    assert ModelSpec(("SVI",)).columns == SVI_COLUMNS
    assert ModelSpec(("SVI",)).columns == [f"dsvi_{d}" for d in range(1, 6)]
    assert ModelSpec(("CR", "GI")).columns == CR_COLUMNS + GI_COLUMNS
    with pytest.raises(InvalidConfig):
        ModelSpec(())
    with pytest.raises(InvalidConfig):
        ModelSpec(("XX",))


@pytest.mark.parametrize("text", ["CR_GI", "CR+GI", "(CR, GI)", "gi_cr"])
def test_model_spec_parse(text):
    assert ModelSpec.parse(text) == ModelSpec(("CR", "GI"))


def test_model_spec_parse_rejects():
    with pytest.raises(InvalidConfig):
        ModelSpec.parse("CR_FOO")
    with pytest.raises(InvalidConfig):
        ModelSpec.parse("")


def test_select_depth():
    assert select_depth([CvResult(4, (0.6,) * 6)]) == 4
    r = [CvResult(8, (0.6,) * 6), CvResult(4, (0.6,) * 6), CvResult(6, (0.55,) * 6)]
    assert select_depth(r) == 4
    r = [CvResult(4, (0.5,) * 6), CvResult(6, (0.52,) * 6), CvResult(8, (0.51,) * 6)]
    assert select_depth(r) == 6
    nan = float("nan")
    r = [CvResult(4, (nan,) * 6), CvResult(6, (nan, 0.7, 0.7, 0.7, 0.7, 0.7))]
    assert select_depth(r) == 6
    assert CvResult(6, (nan, 0.7, 0.5, 0.7, 0.7, 0.7)).mean_auc == pytest.approx(0.66)


def test_leakage_detector():
    ok = FitRecord(1, "CR", 4, 3, 10, D(2005, 1, 1), D(2005, 6, 1), D(2005, 6, 2), D(2005, 9, 1))
    bad = FitRecord(1, "CR", 4, 3, 10, D(2005, 1, 1), D(2005, 6, 2), D(2005, 6, 2), D(2005, 9, 1))
    final_no_test = FitRecord(1, "CR", 4, None, 10, D(2005, 1, 1), D(2005, 6, 2), None, None)
    assert leakage_violations([ok, bad, final_no_test]) == [bad]


@pytest.fixture(scope="module")
def xor_train():
    df = fake_panel(n_days=520, xor=True, seed=3)
    days = sorted({d.date() for d in df["date"]})
    return df, days


def test_cross_validation_matches_exhaustive_oracle(xor_train):
    df, days = xor_train
    spec = ModelSpec(("CR", "SVI"))
    cfg = GbmConfig(n_trees=15, shrinkage=0.2, min_node=10, seed=11)
    grid = (1, 2, 3)
    depth, results, records = cross_validate(df, days, spec, cfg, grid, period=2)
    assert len(records) == 18 and all(len(r.fold_aucs) == 6 for r in results)
    assert [r.fold for r in records[:6]] == [3, 4, 5, 6, 7, 8]
    assert not leakage_violations(records)

    # independent re-evaluation: chronological eighths, pairwise AUC on each following fold
    chunks = np.array_split(np.array(days), 8)
    means = {}
    for d in grid:
        aucs = []
        for k in range(6):
            tr_days = set(chunks[k]) | set(chunks[k + 1])
            va_days = set(chunks[k + 2])
            tr = df[df["date"].dt.date.isin(tr_days)]
            va = df[df["date"].dt.date.isin(va_days)]
            seed = derive_seed(11, "gbm", 2, "CR_SVI", d, k + 3)
            model = gbm.fit(tr, tr["label"].to_numpy(), cfg.replace(interaction_depth=d, seed=seed), columns=spec.columns)
            aucs.append(pairwise_auc(model.predict_proba(va).tolist(), va["label"].tolist()))
        means[d] = float(np.mean(aucs))
        got = next(r for r in results if r.depth == d)
        assert got.mean_auc == pytest.approx(means[d], abs=1e-12)
    oracle = min(d for d in grid if means[d] == max(means.values()))
    assert depth == oracle
    # a single split cannot express the interaction
    assert depth >= 2 and means[1] < means[2]


def test_single_depth_grid(xor_train):
    df, days = xor_train
    depth, results, records = cross_validate(df, days, ModelSpec(("CR",)), GbmConfig(n_trees=2, min_node=10), (4,))
    assert depth == 4 and len(results) == 1 and len(records) == 6


def test_single_class_fold_is_skipped(xor_train):
    df, days = xor_train
    df = df.copy()
    folds = make_folds(days)
    in_fold5 = df["date"].dt.date.between(folds[4].start, folds[4].end)
    df.loc[in_fold5, "label"] = 1
    _, results, records = cross_validate(df, days, ModelSpec(("CR",)), GbmConfig(n_trees=2, min_node=10), (2,))
    assert np.isnan(results[0].fold_aucs[2])
    assert sum(np.isnan(results[0].fold_aucs)) == 1
    assert len(records) == 6


@pytest.fixture(scope="module")
def small_study():
    df = fake_panel(n_days=1050, seed=1)
    periods = make_periods(D(2005, 1, 1), D(2008, 12, 31))
    specs = [ModelSpec(("CR",)), ModelSpec(("SVI",))]
    cfg = GbmConfig(n_trees=5, shrinkage=0.1, min_node=10, seed=4)
    return df, periods, specs, cfg, run_study(df, periods, specs, cfg, (2, 3))


def test_study_structure(small_study):
    df, periods, specs, cfg, results = small_study
    assert len(periods) == 2
    assert [(r.period.index, r.spec.name) for r in results] == [(1, "CR"), (1, "SVI"), (2, "CR"), (2, "SVI")]
    assert fit_counts(results) == {"cv": 2 * 2 * 2 * 6, "final": 4}
    fits = [f for r in results for f in r.fits]
    assert not leakage_violations(fits)
    for r in results:
        test = df[(df["date"] >= pd.Timestamp(r.period.test_start)) & (df["date"] <= pd.Timestamp(r.period.test_end))]
        assert len(r.predictions) == len(test)
        assert list(r.predictions.columns) == ["date", "ticker", "score", "label"]
        assert ((r.predictions["score"] > 0) & (r.predictions["score"] < 1)).all()
        assert [v.name for v in r.model.variables] == r.spec.columns
        assert r.model.config.interaction_depth == r.depth
        final = r.fits[-1]
        assert final.kind == "final" and final.train_end < final.eval_start
        assert final.train_start >= r.period.train_start and final.train_end <= r.period.train_end


def test_planted_signal_wins_out_of_sample(small_study):
    _, _, _, _, results = small_study
    for r in results:
        a = pairwise_auc(r.predictions["score"].tolist(), r.predictions["label"].tolist())
        if r.spec.name == "CR":
            assert a > 0.75
        else:
            assert abs(a - 0.5) < 0.05


def test_study_reproducible_and_parallel_equal(small_study):
    df, periods, specs, cfg, results = small_study
    again = run_study(df, periods, specs, cfg, (2, 3), workers=2)
    for a, b in zip(results, again):
        assert a.depth == b.depth
        assert a.model.to_json() == b.model.to_json()
        pd.testing.assert_frame_equal(a.predictions, b.predictions)


def test_run_period_uses_only_window_rows():
    df = fake_panel(n_days=800, seed=2)
    period = make_periods(D(2005, 1, 1), D(2007, 12, 31))[0]
    cfg = GbmConfig(n_trees=3, min_node=10, seed=0)
    r = run_period(df, period, ModelSpec(("CR",)), cfg, (2,))
    assert r.predictions["date"].min() >= pd.Timestamp(period.test_start)
    assert r.predictions["date"].max() <= pd.Timestamp(period.test_end)
    # rows after the test window must not change anything
    r2 = run_period(df[df["date"] <= pd.Timestamp(period.test_end)], period, ModelSpec(("CR",)), cfg, (2,))
    assert r.model.to_json() == r2.model.to_json()
