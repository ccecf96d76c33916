"""
Walk-forward study design.

Three-year windows roll forward one year at a time: two years of training,
one year of testing. Within each training window, interaction depth is
chosen by rolling cross-validation over eight chronological folds (fit on
two consecutive folds, validate on the next).
"""

from __future__ import annotations

import datetime as dt
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np
import pandas as pd

from . import gbm
from .errors import InvalidConfig, RangeTooShort, SingleClass
from .features import PREDICTOR_SETS, PanelSlice
from .metrics import auc
from .seeding import derive_seed

logger = logging.getLogger(__name__)

N_FOLDS = 8
FOLDS_PER_FIT = 2
DEPTH_GRID = (4, 6, 8)
SET_ORDER = ("CR", "SVI", "GI")


def _add_years(day: dt.date, years: int) -> dt.date:
    try:
        return day.replace(year=day.year + years)
    except ValueError:  # Feb 29
        return day.replace(year=day.year + years, day=28)


@dataclass(frozen=True)
class StudyPeriod:
    index: int
    train_start: dt.date
    train_end: dt.date
    test_start: dt.date
    test_end: dt.date

    @property
    def train_range(self) -> tuple[dt.date, dt.date]:
        return self.train_start, self.train_end

    @property
    def test_range(self) -> tuple[dt.date, dt.date]:
        return self.test_start, self.test_end


def make_periods(start: dt.date, end: dt.date, train_years: int = 2, test_years: int = 1) -> list[StudyPeriod]:
    """Sliding windows of ``train_years + test_years`` advancing by ``test_years``."""
    periods = []
    k = 0
    while True:
        base = _add_years(start, k * test_years)
        test_start = _add_years(start, k * test_years + train_years)
        test_end = _add_years(start, k * test_years + train_years + test_years) - dt.timedelta(days=1)
        if test_end > end:
            break
        periods.append(StudyPeriod(k + 1, base, test_start - dt.timedelta(days=1), test_start, test_end))
        k += 1
    if not periods:
        raise RangeTooShort(f"{start}..{end} is shorter than {train_years + test_years} years")
    return periods


@dataclass(frozen=True)
class ModelSpec:
    sets: tuple[str, ...]

    def __post_init__(self):
        if not self.sets:
            raise InvalidConfig("a model needs at least one predictor set")
        unknown = [s for s in self.sets if s not in PREDICTOR_SETS]
        if unknown:
            raise InvalidConfig(f"unknown predictor set(s) {unknown}")

    @property
    def name(self) -> str:
        return "_".join(self.sets)

    @property
    def label(self) -> str:
        return f"Model ({', '.join(self.sets)})"

    @property
    def columns(self) -> list[str]:
        return [c for s in self.sets for c in PREDICTOR_SETS[s]]

    @classmethod
    def parse(cls, text: str) -> "ModelSpec":
        """``"CR_GI"``, ``"CR+GI"`` or ``"(CR, GI)"`` -> ModelSpec(("CR", "GI"))."""
        cleaned = text.strip().strip("()")
        for sep in ("+", ",", " "):
            cleaned = cleaned.replace(sep, "_")
        parts = {p.upper() for p in cleaned.split("_") if p}
        unknown = sorted(parts - set(SET_ORDER))
        if unknown:
            raise InvalidConfig(f"unknown predictor set(s) {unknown}")
        return cls(tuple(s for s in SET_ORDER if s in parts))


def model_specs() -> list[ModelSpec]:
    """All non-empty subsets of {CR, SVI, GI}: singles, pairs, then the full set."""
    return [ModelSpec(c) for r in (1, 2, 3) for c in combinations(SET_ORDER, r)]


@dataclass(frozen=True)
class CvFold:
    index: int
    start: dt.date
    end: dt.date
    days: tuple[dt.date, ...]


def make_folds(days: Sequence[dt.date], n_folds: int = N_FOLDS) -> list[CvFold]:
    """Chronological folds with trading-day counts differing by at most one."""
    if len(days) < n_folds:
        raise RangeTooShort(f"{len(days)} days cannot form {n_folds} folds")
    chunks = np.array_split(np.arange(len(days)), n_folds)
    return [CvFold(i + 1, days[c[0]], days[c[-1]], tuple(days[j] for j in c)) for i, c in enumerate(chunks)]


@dataclass(frozen=True)
class CvResult:
    depth: int
    fold_aucs: tuple[float, ...]  # NaN where the validation fold had one class

    @property
    def mean_auc(self) -> float:
        vals = [a for a in self.fold_aucs if not math.isnan(a)]
        return float(np.mean(vals)) if vals else math.nan


@dataclass(frozen=True)
class FitRecord:
    period: int
    spec: str
    depth: int
    fold: int | None  # validation fold index, None for the final fit
    n_train: int
    train_start: dt.date
    train_end: dt.date
    eval_start: dt.date | None
    eval_end: dt.date | None

    @property
    def kind(self) -> str:
        return "final" if self.fold is None else "cv"


def _rows_in(df: pd.DataFrame, start: dt.date, end: dt.date) -> pd.DataFrame:
    mask = (df["date"] >= pd.Timestamp(start)) & (df["date"] <= pd.Timestamp(end))
    return df.loc[mask]


def _fit_seed(seed: int, period: int, spec: str, depth: int, fold) -> int:
    return derive_seed(seed, "gbm", period, spec, depth, "final" if fold is None else fold)


def _dates(df: pd.DataFrame) -> tuple[dt.date, dt.date]:
    return df["date"].min().date(), df["date"].max().date()


def select_depth(results: Sequence[CvResult]) -> int:
    """Highest mean validation AUC; ties and all-NaN go to the smallest depth."""
    ordered = sorted(results, key=lambda r: r.depth)
    best, best_auc = ordered[0].depth, -math.inf
    for r in ordered:
        m = r.mean_auc
        if not math.isnan(m) and m > best_auc:
            best, best_auc = r.depth, m
    return best


def cross_validate(
    train: pd.DataFrame,
    days: Sequence[dt.date],
    spec: ModelSpec,
    config: gbm.GbmConfig,
    depth_grid: Sequence[int] = DEPTH_GRID,
    period: int = 0,
) -> tuple[int, list[CvResult], list[FitRecord]]:
    """Rolling CV over ``days``: for each depth fit folds (k, k+1), score fold k+2.

    Returns the selected depth, per-depth results and a record of every fit.
    """
    folds = make_folds(days)
    results, records = [], []
    cols = spec.columns
    for depth in sorted(depth_grid):
        aucs = []
        for k in range(N_FOLDS - FOLDS_PER_FIT):
            fit_folds = folds[k : k + FOLDS_PER_FIT]
            val = folds[k + FOLDS_PER_FIT]
            tr = _rows_in(train, fit_folds[0].start, fit_folds[-1].end)
            va = _rows_in(train, val.start, val.end)
            cfg = config.replace(interaction_depth=depth, seed=_fit_seed(config.seed, period, spec.name, depth, val.index))
            model = gbm.fit(tr, tr["label"].to_numpy(), cfg, columns=cols)
            records.append(FitRecord(period, spec.name, depth, val.index, len(tr), *_dates(tr), *_dates(va)))
            try:
                aucs.append(auc(model.predict_proba(va), va["label"].to_numpy()))
            except SingleClass:
                logger.warning("period %d %s depth %d: fold %d has one class, skipped", period, spec.name, depth, val.index)
                aucs.append(math.nan)
        results.append(CvResult(depth, tuple(aucs)))
    return select_depth(results), results, records


@dataclass
class PeriodResult:
    period: StudyPeriod
    spec: ModelSpec
    depth: int
    cv: list[CvResult]
    model: gbm.BoostedModel
    predictions: pd.DataFrame  # date, ticker, score, label
    fits: list[FitRecord] = field(default_factory=list)


def run_period(
    panel: PanelSlice | pd.DataFrame,
    period: StudyPeriod,
    spec: ModelSpec,
    config: gbm.GbmConfig,
    depth_grid: Sequence[int] = DEPTH_GRID,
) -> PeriodResult:
    """Cross-validate depth on the training window, refit on all of it, score the test window."""
    rows = panel.rows if isinstance(panel, PanelSlice) else panel
    train = _rows_in(rows, *period.train_range)
    test = _rows_in(rows, *period.test_range)
    train_days = sorted({d.date() for d in train["date"]})
    depth, cv, fits = cross_validate(train, train_days, spec, config, depth_grid, period.index)
    cfg = config.replace(interaction_depth=depth, seed=_fit_seed(config.seed, period.index, spec.name, depth, None))
    model = gbm.fit(train, train["label"].to_numpy(), cfg, columns=spec.columns)
    test_dates = _dates(test) if len(test) else (None, None)
    fits.append(FitRecord(period.index, spec.name, depth, None, len(train), *_dates(train), *test_dates))
    preds = pd.DataFrame(
        {
            "date": test["date"].to_numpy(),
            "ticker": test["ticker"].to_numpy(),
            "score": model.predict_proba(test) if len(test) else np.array([]),
            "label": test["label"].to_numpy(),
        }
    )
    logger.info("period %d %s: depth %d, %d test rows", period.index, spec.name, depth, len(preds))
    return PeriodResult(period, spec, depth, cv, model, preds, fits)


def _run_task(args):
    rows, period, spec, config, depth_grid = args
    return run_period(rows, period, spec, config, depth_grid)


def run_study(
    panel: PanelSlice | pd.DataFrame,
    periods: Sequence[StudyPeriod],
    specs: Sequence[ModelSpec],
    config: gbm.GbmConfig,
    depth_grid: Sequence[int] = DEPTH_GRID,
    workers: int = 1,
) -> list[PeriodResult]:
    """Run every (period, spec); results come back in (period, spec) order."""
    rows = panel.rows if isinstance(panel, PanelSlice) else panel
    tasks = []
    for period in periods:
        window = _rows_in(rows, period.train_start, period.test_end)
        for spec in specs:
            tasks.append((window, period, spec, config, tuple(depth_grid)))
    if workers <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_task, tasks))


def leakage_violations(fits: Sequence[FitRecord]) -> list[FitRecord]:
    """Fits whose training data does not end strictly before their evaluation data."""
    return [f for f in fits if f.eval_start is not None and not f.train_end < f.eval_start]


def fit_counts(results: Sequence[PeriodResult]) -> dict[str, int]:
    fits = [f for r in results for f in r.fits]
    return {"cv": sum(f.kind == "cv" for f in fits), "final": sum(f.kind == "final" for f in fits)}
