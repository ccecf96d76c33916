"""
Loading and validation of constituent histories, returns and prices.

All CSV inputs are UTF-8, comma-delimited, ISO dates. Validation failures
raise immediately with the offending line number.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import (
    MalformedRow,
    NonPositivePrice,
    OverlappingMembership,
    ReturnMismatch,
    TickerMismatch,
    UnknownSicDivision,
)

logger = logging.getLogger(__name__)

SIC_DIVISIONS: tuple[str, ...] = (
    "Agriculture, Forestry, And Fishing",
    "Mining",
    "Construction",
    "Manufacturing",
    "Transportation, Communications, Electric, Gas, And Sanitary Services",
    "Wholesale Trade",
    "Retail Trade",
    "Finance, Insurance, And Real Estate",
    "Services",
    "Public Administration",
    "Non-classifiable",
)
_SIC_LOOKUP = {s.lower(): s for s in SIC_DIVISIONS}

CONSTITUENT_HEADER = ["ticker", "from_date", "to_date", "sic_division"]
RETURNS_HEADER = ["date", "ticker", "ret"]
PRICES_HEADER = ["date", "ticker", "close", "dividend", "shares_traded"]

RETURN_TOLERANCE = 1e-8

_TICKER_RE = re.compile(r"^[A-Z0-9.\-]+$")


def canonical_sic(name: str) -> str:
    try:
        return _SIC_LOOKUP[name.strip().lower()]
    except KeyError:
        raise UnknownSicDivision(f"unknown SIC division {name!r}") from None


def validate_ticker(ticker: str) -> str:
    if not ticker or not _TICKER_RE.match(ticker):
        raise ValueError(f"invalid ticker {ticker!r}")
    return ticker


@dataclass(frozen=True)
class ConstituentRecord:
    ticker: str
    from_date: dt.date
    to_date: dt.date | None
    sic_division: str

    def __post_init__(self):
        validate_ticker(self.ticker)
        if self.to_date is not None and self.to_date < self.from_date:
            raise ValueError(f"{self.ticker}: to_date {self.to_date} before from_date {self.from_date}")
        if self.sic_division not in SIC_DIVISIONS:
            raise UnknownSicDivision(f"unknown SIC division {self.sic_division!r}")

    def covers(self, day: dt.date) -> bool:
        return self.from_date <= day and (self.to_date is None or day <= self.to_date)


@dataclass(frozen=True)
class TradingCalendar:
    days: tuple[dt.date, ...]

    def __post_init__(self):
        for a, b in zip(self.days, self.days[1:]):
            if not a < b:
                raise ValueError(f"calendar not strictly increasing at {a} -> {b}")

    def __len__(self) -> int:
        return len(self.days)

    def __iter__(self):
        return iter(self.days)

    def index(self, day: dt.date) -> int:
        pos = int(np.searchsorted(np.array(self.days, dtype="datetime64[D]"), np.datetime64(day, "D")))
        if pos >= len(self.days) or self.days[pos] != day:
            raise KeyError(day)
        return pos

    def between(self, start: dt.date, end: dt.date) -> list[dt.date]:
        return [d for d in self.days if start <= d <= end]

    @classmethod
    def from_dates(cls, dates: Iterable) -> "TradingCalendar":
        uniq = sorted({pd.Timestamp(d).date() for d in dates})
        return cls(tuple(uniq))


@dataclass(frozen=True)
class RawPriceRecord:
    ticker: str
    date: dt.date
    close_price: float
    dividend: float = 0.0
    shares_traded: float = 0.0

    def __post_init__(self):
        if not self.close_price > 0:
            raise NonPositivePrice(f"{self.ticker} {self.date}: close price {self.close_price} <= 0")
        if self.dividend < 0 or self.shares_traded < 0:
            raise ValueError(f"{self.ticker} {self.date}: negative dividend or share count")


@dataclass(frozen=True)
class DailyObservation:
    ticker: str
    date: dt.date
    ret: float
    dollar_volume: float
    svi: float

    def __post_init__(self):
        if not self.ret > -1:
            raise ValueError(f"{self.ticker} {self.date}: return {self.ret} <= -1")
        if self.dollar_volume < 0:
            raise ValueError(f"{self.ticker} {self.date}: negative dollar volume")
        if not 0 <= self.svi <= 100:
            raise ValueError(f"{self.ticker} {self.date}: svi {self.svi} outside [0, 100]")


def hpr_from_prices(prev: RawPriceRecord, cur: RawPriceRecord) -> float:
    """Holding period return from two consecutive closes plus the dividend paid on ``cur``."""
    if prev.ticker != cur.ticker:
        raise TickerMismatch(f"{prev.ticker} != {cur.ticker}")
    if not prev.close_price > 0:
        raise NonPositivePrice(f"{prev.ticker} {prev.date}: close price {prev.close_price} <= 0")
    return ((cur.close_price - prev.close_price) + cur.dividend) / prev.close_price


def dollar_volume(rec: RawPriceRecord) -> float:
    return rec.shares_traded * rec.close_price


# --------------------------------------------------------------------------- constituents


def _parse_date(text: str, line: int, path: str | None) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise MalformedRow(line, f"bad date {text!r}", path) from None


def _check_header(found: Sequence[str], expected: Sequence[str], path: str | None) -> None:
    if [h.strip() for h in found] != list(expected):
        raise MalformedRow(1, f"header {list(found)} != {list(expected)}", path)


def check_overlaps(records: Sequence[ConstituentRecord]) -> None:
    by_ticker: dict[str, list[ConstituentRecord]] = {}
    for rec in records:
        by_ticker.setdefault(rec.ticker, []).append(rec)
    for ticker, recs in by_ticker.items():
        recs = sorted(recs, key=lambda r: r.from_date)
        for a, b in zip(recs, recs[1:]):
            if a.to_date is None or a.to_date >= b.from_date:
                raise OverlappingMembership(
                    f"{ticker}: [{a.from_date}, {a.to_date or 'open'}] overlaps "
                    f"[{b.from_date}, {b.to_date or 'open'}]"
                )


def parse_constituents(text: str, path: str | None = None) -> list[ConstituentRecord]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedRow(1, "empty file", path) from None
    _check_header(header, CONSTITUENT_HEADER, path)
    records = []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise MalformedRow(line, f"expected 4 fields, got {len(row)}", path)
        ticker, from_s, to_s, sic = (c.strip() for c in row)
        try:
            validate_ticker(ticker)
        except ValueError as exc:
            raise MalformedRow(line, str(exc), path) from None
        start = _parse_date(from_s, line, path)
        end = _parse_date(to_s, line, path) if to_s else None
        if end is not None and end < start:
            raise MalformedRow(line, f"to_date {end} before from_date {start}", path)
        records.append(ConstituentRecord(ticker, start, end, canonical_sic(sic)))
    check_overlaps(records)
    return records


def load_constituents(path) -> list[ConstituentRecord]:
    path = Path(path)
    return parse_constituents(path.read_text(encoding="utf-8"), str(path))


def dump_constituents(records: Iterable[ConstituentRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CONSTITUENT_HEADER)
    for rec in records:
        writer.writerow(
            [rec.ticker, rec.from_date.isoformat(), rec.to_date.isoformat() if rec.to_date else "", rec.sic_division]
        )
    return buf.getvalue()


def write_constituents(records: Iterable[ConstituentRecord], path) -> None:
    Path(path).write_text(dump_constituents(records), encoding="utf-8")


def membership_on(records: Iterable[ConstituentRecord], day: dt.date) -> set[str]:
    """Tickers that are index members over the whole of ``day`` (closed intervals)."""
    return {rec.ticker for rec in records if rec.covers(day)}


def membership_matrix(records: Sequence[ConstituentRecord], days: Sequence[dt.date], tickers: Sequence[str]) -> np.ndarray:
    """Boolean (len(days), len(tickers)) matrix of daily membership."""
    col = {t: j for j, t in enumerate(tickers)}
    day_arr = np.array(days, dtype="datetime64[D]")
    out = np.zeros((len(days), len(tickers)), dtype=bool)
    for rec in records:
        j = col.get(rec.ticker)
        if j is None:
            continue
        lo = np.datetime64(rec.from_date, "D")
        hi = np.datetime64(rec.to_date, "D") if rec.to_date else np.datetime64("9999-12-31", "D")
        out[(day_arr >= lo) & (day_arr <= hi), j] = True
    return out


def industry_map(records: Iterable[ConstituentRecord]) -> dict[str, str]:
    """Latest SIC division per ticker."""
    out: dict[str, tuple[dt.date, str]] = {}
    for rec in records:
        if rec.ticker not in out or rec.from_date >= out[rec.ticker][0]:
            out[rec.ticker] = (rec.from_date, rec.sic_division)
    return {t: v[1] for t, v in out.items()}


# --------------------------------------------------------------------------- returns / prices


def _read_frame(path, header: Sequence[str]) -> pd.DataFrame:
    path = str(path)
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\r\n")
    _check_header(first.split(","), header, path)
    df = pd.read_csv(path, dtype={"ticker": str, "date": str}, keep_default_na=False, na_values=[""])
    return df


def _bad_rows(mask: np.ndarray, df: pd.DataFrame, reason: str, path) -> None:
    if mask.any():
        first = int(np.flatnonzero(mask)[0])
        raise MalformedRow(first + 2, f"{reason}: {df.iloc[first].to_dict()}", str(path))


def _coerce_dates(df: pd.DataFrame, path) -> pd.DataFrame:
    parsed = pd.to_datetime(df["date"], format="%Y-%m-%d", errors="coerce")
    _bad_rows(parsed.isna().to_numpy(), df, "bad date", path)
    df["date"] = parsed
    return df


def _numeric(df: pd.DataFrame, col: str, path) -> None:
    vals = pd.to_numeric(df[col], errors="coerce")
    _bad_rows(vals.isna().to_numpy(), df, f"non-numeric {col}", path)
    df[col] = vals.astype(float)


def load_returns(path) -> pd.DataFrame:
    """Long frame ``date, ticker, ret`` sorted by (date, ticker)."""
    df = _read_frame(path, RETURNS_HEADER)
    df = _coerce_dates(df, path)
    _numeric(df, "ret", path)
    _bad_rows((df["ret"] <= -1).to_numpy(), df, "return <= -1", path)
    _bad_rows(~df["ticker"].fillna("").str.match(_TICKER_RE.pattern).to_numpy(), df, "invalid ticker", path)
    _bad_rows(df.duplicated(["date", "ticker"]).to_numpy(), df, "duplicate (date, ticker)", path)
    return df.sort_values(["date", "ticker"], kind="stable").reset_index(drop=True)


def load_prices(path) -> pd.DataFrame:
    df = _read_frame(path, PRICES_HEADER)
    df = _coerce_dates(df, path)
    for col in ("close", "dividend", "shares_traded"):
        _numeric(df, col, path)
    if (df["close"] <= 0).any():
        first = int(np.flatnonzero((df["close"] <= 0).to_numpy())[0])
        raise NonPositivePrice(f"{path}:{first + 2}: close price must be positive")
    _bad_rows(((df["dividend"] < 0) | (df["shares_traded"] < 0)).to_numpy(), df, "negative dividend/shares", path)
    _bad_rows(df.duplicated(["date", "ticker"]).to_numpy(), df, "duplicate (date, ticker)", path)
    return df.sort_values(["date", "ticker"], kind="stable").reset_index(drop=True)


def returns_from_prices(prices: pd.DataFrame) -> pd.DataFrame:
    """Vectorised holding period returns between each ticker's consecutive price rows."""
    p = prices.sort_values(["ticker", "date"], kind="stable")
    prev_close = p.groupby("ticker", sort=False)["close"].shift(1)
    ret = ((p["close"] - prev_close) + p["dividend"]) / prev_close
    out = pd.DataFrame({"date": p["date"], "ticker": p["ticker"], "ret": ret}).dropna(subset=["ret"])
    return out.sort_values(["date", "ticker"], kind="stable").reset_index(drop=True)


def dollar_volumes(prices: pd.DataFrame) -> pd.DataFrame:
    out = prices[["date", "ticker"]].copy()
    out["dollar_volume"] = prices["shares_traded"] * prices["close"]
    return out


def reconcile_returns(returns: pd.DataFrame, derived: pd.DataFrame, tol: float = RETURN_TOLERANCE) -> None:
    merged = returns.merge(derived, on=["date", "ticker"], suffixes=("", "_px"))
    diff = (merged["ret"] - merged["ret_px"]).abs()
    bad = diff > tol
    if bad.any():
        row = merged[bad].iloc[0]
        raise ReturnMismatch(
            f"{int(bad.sum())} return(s) disagree with prices by more than {tol}; "
            f"first: {row['ticker']} {row['date'].date()} ret={row['ret']!r} from prices={row['ret_px']!r}"
        )


@dataclass
class MarketData:
    """Validated market inputs for one universe."""

    constituents: list[ConstituentRecord]
    returns: pd.DataFrame
    dollar_volume: pd.DataFrame | None
    calendar: TradingCalendar

    @property
    def tickers(self) -> list[str]:
        return sorted(set(self.returns["ticker"]) | {r.ticker for r in self.constituents})


def load_market_data(constituents_path, returns_path=None, prices_path=None) -> MarketData:
    constituents = load_constituents(constituents_path)
    prices = load_prices(prices_path) if prices_path and Path(prices_path).exists() else None
    if returns_path and Path(returns_path).exists():
        returns = load_returns(returns_path)
        if prices is not None:
            reconcile_returns(returns, returns_from_prices(prices))
    elif prices is not None:
        returns = returns_from_prices(prices)
    else:
        raise FileNotFoundError("need returns.csv or prices.csv")
    dv = dollar_volumes(prices) if prices is not None else None
    calendar = TradingCalendar.from_dates(returns["date"].unique())
    logger.info(
        "loaded %d constituent records, %d returns over %d trading days", len(constituents), len(returns), len(calendar)
    )
    return MarketData(constituents, returns, dv, calendar)
