"""
Search-volume (SVI) reconstruction.

Daily SVI is only available as short fragments that the source rescales to
0-100 individually. Each monthly fragment is rescaled by its month's level
from the long-horizon monthly series, giving one consistent daily series.
"""

from __future__ import annotations

import calendar
import datetime as dt
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DuplicateMonth,
    EmptyUniverse,
    InvalidFragment,
    MalformedRow,
    MissingMonthlyLevel,
    OutOfRangeValue,
)

logger = logging.getLogger(__name__)

LESS_THAN_ONE = "<1"


def normalize_raw(raw) -> int:
    """Map a raw SVI cell to an integer; ``"<1"`` becomes 0."""
    if isinstance(raw, str):
        text = raw.strip()
        if text == LESS_THAN_ONE:
            return 0
        try:
            raw = int(text)
        except ValueError:
            raise OutOfRangeValue(f"not an SVI value: {raw!r}") from None
    if isinstance(raw, (bool, np.bool_)):
        raise OutOfRangeValue(f"not an SVI value: {raw!r}")
    if isinstance(raw, (float, np.floating)):
        if not float(raw).is_integer():
            raise OutOfRangeValue(f"SVI values are integers, got {raw!r}")
        raw = int(raw)
    if not isinstance(raw, (int, np.integer)) or not 0 <= raw <= 100:
        raise OutOfRangeValue(f"SVI value {raw!r} outside 0..100")
    return int(raw)


def month_key(day: dt.date) -> str:
    return f"{day.year:04d}-{day.month:02d}"


def month_days(key: str) -> list[dt.date]:
    year, month = int(key[:4]), int(key[5:7])
    return [dt.date(year, month, d) for d in range(1, calendar.monthrange(year, month)[1] + 1)]


@dataclass(frozen=True)
class SviFragment:
    ticker: str
    month_key: str
    values: tuple[tuple[dt.date, object], ...]

    def __post_init__(self):
        days = [d for d, _ in self.values]
        for a, b in zip(days, days[1:]):
            if not a < b:
                raise InvalidFragment(f"{self.ticker} {self.month_key}: dates not strictly increasing")
        for d in days:
            if month_key(d) != self.month_key:
                raise InvalidFragment(f"{self.ticker}: {d} outside fragment month {self.month_key}")
        normalized = [normalize_raw(v) for _, v in self.values]
        if normalized and max(normalized) != 100 and any(normalized):
            raise InvalidFragment(f"{self.ticker} {self.month_key}: fragment not rescaled to a maximum of 100")

    def dense(self) -> list[tuple[dt.date, int]]:
        """All calendar days of the month, absent days filled with 0."""
        present = {d: normalize_raw(v) for d, v in self.values}
        return [(d, present.get(d, 0)) for d in month_days(self.month_key)]


@dataclass(frozen=True)
class MonthlySvi:
    ticker: str
    levels: tuple[tuple[str, float], ...]

    def __post_init__(self):
        months = [m for m, _ in self.levels]
        for a, b in zip(months, months[1:]):
            if not a < b:
                raise DuplicateMonth(f"{self.ticker}: monthly levels not strictly increasing at {a} -> {b}")
            if _next_month(a) != b:
                raise InvalidFragment(f"{self.ticker}: monthly series not contiguous between {a} and {b}")
        for m, lvl in self.levels:
            if not 0 <= lvl <= 100:
                raise OutOfRangeValue(f"{self.ticker} {m}: monthly level {lvl} outside [0, 100]")

    def as_dict(self) -> dict[str, float]:
        return dict(self.levels)


@dataclass(frozen=True)
class StitchedSvi:
    ticker: str
    series: tuple[tuple[dt.date, float], ...] = field(default_factory=tuple)

    def as_series(self) -> pd.Series:
        idx = pd.DatetimeIndex([pd.Timestamp(d) for d, _ in self.series])
        return pd.Series([v for _, v in self.series], index=idx, name=self.ticker, dtype=float)


def _next_month(key: str) -> str:
    year, month = int(key[:4]), int(key[5:7])
    return f"{year + month // 12:04d}-{month % 12 + 1:02d}"


def stitch(fragments: Sequence[SviFragment], monthly: MonthlySvi) -> StitchedSvi:
    """Rescale each monthly fragment by ``level / 100`` and concatenate by date."""
    levels = monthly.as_dict()
    seen: set[str] = set()
    out: list[tuple[dt.date, float]] = []
    for frag in sorted(fragments, key=lambda f: f.month_key):
        if frag.ticker != monthly.ticker:
            raise ValueError(f"fragment ticker {frag.ticker} != monthly ticker {monthly.ticker}")
        if frag.month_key in seen:
            raise DuplicateMonth(f"{frag.ticker}: two fragments for {frag.month_key}")
        seen.add(frag.month_key)
        if frag.month_key not in levels:
            raise MissingMonthlyLevel(frag.ticker, frag.month_key)
        factor = levels[frag.month_key] / 100.0
        out.extend((d, v * factor) for d, v in frag.dense())
    return StitchedSvi(monthly.ticker, tuple(out))


def zero_share(day: dt.date, universe: Iterable[str], stitched: Mapping[str, StitchedSvi | pd.Series]) -> float:
    """Fraction of ``universe`` whose stitched SVI is 0 on ``day`` (missing counts as 0)."""
    members = list(universe)
    if not members:
        raise EmptyUniverse(f"no index members on {day}")
    ts = pd.Timestamp(day)
    zeros = 0
    for t in members:
        s = stitched.get(t)
        if s is None:
            zeros += 1
            continue
        if isinstance(s, StitchedSvi):
            s = s.as_series()
        v = s.get(ts, 0.0)
        zeros += v == 0
    return zeros / len(members)


def rolling_mean(series: Sequence[tuple[object, float]], window: int) -> list[tuple[object, float]]:
    """Trailing mean over ``window`` observations; the first ``window - 1`` positions are dropped."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if len(series) < window:
        return []
    dates = [d for d, _ in series]
    vals = np.asarray([v for _, v in series], dtype=float)
    sums = np.lib.stride_tricks.sliding_window_view(vals, window).sum(axis=1)
    return list(zip(dates[window - 1 :], (sums / window).tolist()))


# --------------------------------------------------------------------------- file IO


def load_svi_daily(path) -> dict[str, list[SviFragment]]:
    """Read ``ticker,date,value`` into per-ticker monthly fragments."""
    path = str(path)
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if list(df.columns) != ["ticker", "date", "value"]:
        raise MalformedRow(1, f"header {list(df.columns)} != ['ticker', 'date', 'value']", path)
    dates = pd.to_datetime(df["date"], format="%Y-%m-%d", errors="coerce")
    if dates.isna().any():
        raise MalformedRow(int(np.flatnonzero(dates.isna().to_numpy())[0]) + 2, "bad date", path)
    df["day"] = dates.dt.date
    df["month"] = dates.dt.strftime("%Y-%m")
    df["line"] = np.arange(len(df)) + 2
    if df.duplicated(["ticker", "day"]).any():
        raise MalformedRow(int(df.loc[df.duplicated(["ticker", "day"]), "line"].iloc[0]), "duplicate (ticker, date)", path)
    out: dict[str, list[SviFragment]] = {}
    df = df.sort_values(["ticker", "day"], kind="stable")
    for (ticker, month), grp in df.groupby(["ticker", "month"], sort=True):
        for line, value in zip(grp["line"], grp["value"]):
            try:
                normalize_raw(value)
            except OutOfRangeValue as exc:
                raise MalformedRow(int(line), str(exc), path) from None
        frag = SviFragment(ticker, month, tuple(zip(grp["day"], grp["value"])))
        out.setdefault(ticker, []).append(frag)
    return out


def load_svi_monthly(path) -> dict[str, MonthlySvi]:
    path = str(path)
    df = pd.read_csv(path, dtype={"ticker": str, "month": str})
    if list(df.columns) != ["ticker", "month", "level"]:
        raise MalformedRow(1, f"header {list(df.columns)} != ['ticker', 'month', 'level']", path)
    bad = ~df["month"].str.fullmatch(r"\d{4}-\d{2}")
    if bad.any():
        raise MalformedRow(int(np.flatnonzero(bad.to_numpy())[0]) + 2, "bad month", path)
    dup = df.duplicated(["ticker", "month"])
    if dup.any():
        raise DuplicateMonth(f"{path}:{int(np.flatnonzero(dup.to_numpy())[0]) + 2}: duplicate (ticker, month)")
    out = {}
    for ticker, grp in df.sort_values(["ticker", "month"]).groupby("ticker", sort=True):
        out[ticker] = MonthlySvi(ticker, tuple(zip(grp["month"], grp["level"].astype(float))))
    return out


def stitch_all(fragments: Mapping[str, Sequence[SviFragment]], monthly: Mapping[str, MonthlySvi]) -> dict[str, StitchedSvi]:
    out = {}
    for ticker in sorted(fragments):
        if ticker not in monthly:
            raise MissingMonthlyLevel(ticker, fragments[ticker][0].month_key)
        out[ticker] = stitch(fragments[ticker], monthly[ticker])
    return out


def stitched_frame(stitched: Mapping[str, StitchedSvi]) -> pd.DataFrame:
    """Long ``ticker, date, svi`` frame."""
    rows = [(t, pd.Timestamp(d), v) for t in sorted(stitched) for d, v in stitched[t].series]
    return pd.DataFrame(rows, columns=["ticker", "date", "svi"])


def dump_stitched(stitched: Mapping[str, StitchedSvi]) -> str:
    buf = io.StringIO()
    buf.write("ticker,date,svi\n")
    for t in sorted(stitched):
        for d, v in stitched[t].series:
            buf.write(f"{t},{d.isoformat()},{v:.6f}\n")
    return buf.getvalue()


def load_stitched(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"ticker": str})
    if list(df.columns) != ["ticker", "date", "svi"]:
        raise MalformedRow(1, f"header {list(df.columns)} != ['ticker', 'date', 'svi']", str(path))
    df["date"] = pd.to_datetime(df["date"], format="%Y-%m-%d")
    return df


def diagnostics(
    stitched: pd.DataFrame,
    days: Sequence[dt.date],
    members: Mapping[dt.date, set[str]],
    window: int = 120,
) -> pd.DataFrame:
    """Per trading day mean SVI and zero share over index members, with trailing means.

    Args:
        stitched: long ``ticker, date, svi`` frame.
        days: trading days to evaluate.
        members: index membership per day.
        window: trailing window for the smoothed columns.
    """
    wide = stitched.pivot(index="date", columns="ticker", values="svi")
    rows = []
    for d in days:
        universe = sorted(members.get(d, ()))
        if not universe:
            continue
        ts = pd.Timestamp(d)
        vals = wide.reindex(index=[ts], columns=universe).fillna(0.0).to_numpy()[0] if ts in wide.index else np.zeros(len(universe))
        rows.append((d, float(vals.mean()), float((vals == 0).mean())))
    out = pd.DataFrame(rows, columns=["date", "mean_svi", "zero_share"])
    for col in ("mean_svi", "zero_share"):
        rm = dict(rolling_mean(list(zip(out["date"], out[col])), window))
        out[f"{col}_ma{window}"] = [rm.get(d, np.nan) for d in out["date"]]
    return out
