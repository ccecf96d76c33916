"""
Daily long/short portfolios from prediction scores.

Each day the five highest-scored stocks are bought and the five lowest sold
short, equally weighted, zero net investment, no transaction costs. The
combined return is per unit of one-side gross exposure, so it is the sum of
the long-book and short-book returns.
"""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import MissingRealizedReturn, TooFewScores

logger = logging.getLogger(__name__)

K = 5

SUBPERIODS: dict[str, tuple[dt.date, dt.date]] = {
    "2007-2009": (dt.date(2007, 1, 1), dt.date(2009, 12, 31)),
    "2010-2012": (dt.date(2010, 1, 1), dt.date(2012, 12, 31)),
    "2013-2015": (dt.date(2013, 1, 1), dt.date(2015, 12, 31)),
    "2016-2017": (dt.date(2016, 1, 1), dt.date(2017, 12, 31)),
}


@dataclass(frozen=True)
class DailyPortfolio:
    date: object
    longs: tuple[str, ...]
    shorts: tuple[str, ...]
    long_return: float = float("nan")
    short_return: float = float("nan")

    @property
    def combined_return(self) -> float:
        return self.long_return + self.short_return


def build_portfolio(scores_on_day: Mapping[str, float], k: int = K, date=None) -> DailyPortfolio:
    """Top-``k`` scores long, bottom-``k`` short; score ties go to the smaller ticker."""
    if len(scores_on_day) < 2 * k:
        raise TooFewScores(f"{date}: {len(scores_on_day)} scored stocks, need {2 * k}")
    items = list(scores_on_day.items())
    longs = [t for t, _ in sorted(items, key=lambda kv: (-kv[1], kv[0]))[:k]]
    taken = set(longs)
    shorts = [t for t, _ in sorted(items, key=lambda kv: (kv[1], kv[0])) if t not in taken][:k]
    return DailyPortfolio(date, tuple(longs), tuple(shorts))


def portfolio_return(portfolio: DailyPortfolio, realized: Mapping[str, float]) -> DailyPortfolio:
    missing = [t for t in (*portfolio.longs, *portfolio.shorts) if t not in realized or pd.isna(realized[t])]
    if missing:
        raise MissingRealizedReturn(f"{portfolio.date}: no realized return for {missing}")
    long_ret = float(np.mean([realized[t] for t in portfolio.longs]))
    short_ret = -float(np.mean([realized[t] for t in portfolio.shorts]))
    return DailyPortfolio(portfolio.date, portfolio.longs, portfolio.shorts, long_ret, short_ret)


def simulate(predictions: pd.DataFrame, realized: pd.DataFrame | None = None, k: int = K) -> tuple[list[DailyPortfolio], list]:
    """Run the daily strategy over ``date, ticker, score`` rows.

    Args:
        predictions: one row per scored (date, ticker).
        realized: ``date, ticker, ret``; defaults to a ``ret`` column in
            ``predictions``.
        k: stocks per side.

    Returns:
        The traded portfolios in date order and the list of skipped days.
    """
    src = realized if realized is not None else predictions
    by_day = {day: dict(zip(g["ticker"], g["ret"])) for day, g in src.groupby("date", sort=False)}
    portfolios, skipped = [], []
    for day, grp in predictions.groupby("date", sort=True):
        scores = dict(zip(grp["ticker"], grp["score"]))
        try:
            pf = build_portfolio(scores, k, day)
        except TooFewScores:
            logger.warning("skipping %s: only %d scored stocks", day, len(scores))
            skipped.append(day)
            continue
        portfolios.append(portfolio_return(pf, by_day.get(day, {})))
    return portfolios, skipped


def returns_frame(portfolios: Sequence[DailyPortfolio]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "long": [p.long_return for p in portfolios],
            "short": [p.short_return for p in portfolios],
            "combined": [p.combined_return for p in portfolios],
        },
        index=pd.DatetimeIndex([pd.Timestamp(p.date) for p in portfolios], name="date"),
    )


def cumulative(series: pd.Series) -> pd.Series:
    """Compounded return to date: prod(1 + r) - 1."""
    return (1.0 + series.astype(float)).cumprod() - 1.0


def subperiods(series: pd.Series, bounds: Mapping[str, tuple[dt.date, dt.date]] = SUBPERIODS) -> dict[str, pd.Series]:
    idx = pd.DatetimeIndex(series.index)
    out = {}
    covered = np.zeros(len(series), dtype=bool)
    for name, (lo, hi) in bounds.items():
        mask = (idx >= pd.Timestamp(lo)) & (idx <= pd.Timestamp(hi))
        covered |= mask
        out[name] = series[mask]
    if not covered.all():
        first = idx[~covered][0]
        raise ValueError(f"{first.date()} lies outside every sub-period")
    return out


def year_blocks(series: pd.Series, size: int = 3) -> dict[str, tuple[dt.date, dt.date]]:
    """Consecutive blocks of ``size`` calendar years covering ``series``; for studies outside 2007-2017."""
    years = sorted({d.year for d in pd.DatetimeIndex(series.index)})
    out = {}
    for i in range(0, len(years), size):
        chunk = years[i : i + size]
        out[f"{chunk[0]}-{chunk[-1]}"] = (dt.date(chunk[0], 1, 1), dt.date(chunk[-1], 12, 31))
    return out


def index_benchmark(returns: pd.DataFrame) -> pd.Series:
    """Equal-weighted mean return per day over the given ``date, ticker, ret`` rows."""
    return returns.groupby("date", sort=True)["ret"].mean().rename("index")


def ledger_rows(portfolios: Sequence[DailyPortfolio], predictions: pd.DataFrame, realized: pd.DataFrame, spec: str) -> pd.DataFrame:
    score = predictions.set_index(["date", "ticker"])["score"]
    ret = realized.set_index(["date", "ticker"])["ret"]
    rows = []
    for p in portfolios:
        for side, names in (("long", p.longs), ("short", p.shorts)):
            for t in names:
                rows.append((p.date, spec, side, t, score[(p.date, t)], ret[(p.date, t)]))
    return pd.DataFrame(rows, columns=["date", "spec", "side", "ticker", "score", "realized_return"])
