"""
Seeded synthetic universes.

Writes the same CSV files the ingest layer reads, plus ``truth.csv`` with
the generating latent SVI series, the planted signal shift and the realized
outperformance labels, so the full pipeline can be tested against known
ground truth.
"""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import InvalidConfig
from .features import SVI_JUMP
from .ingest import SIC_DIVISIONS, ConstituentRecord, write_constituents
from .seeding import make_rng

logger = logging.getLogger(__name__)

DAYS_PER_YEAR = 252
# rough index weights by SIC division; the two empty divisions never occur
_SIC_WEIGHTS = np.array([1.0, 5.8, 0.0, 43.8, 15.8, 1.0, 8.4, 16.5, 6.3, 0.0, 2.6])


@dataclass(frozen=True)
class SynthConfig:
    n_tickers: int = 20
    years: int = 14
    signal_strength: float = 0.0
    signal_variables: tuple[str, ...] = ("cr_1",)
    svi_missing_rate: float = 0.2
    seed: int = 0
    start_year: int = 2004
    n_swaps: int | None = None  # index membership changes; default n_tickers // 10

    def __post_init__(self):
        if self.n_tickers < 10:
            raise InvalidConfig("n_tickers must be at least 10 (five long, five short)")
        if self.years < 1:
            raise InvalidConfig("years must be >= 1")
        if not self.signal_strength >= 0:
            raise InvalidConfig("signal_strength must be >= 0")
        if not 0 <= self.svi_missing_rate <= 1:
            raise InvalidConfig("svi_missing_rate must be in [0, 1]")
        for v in self.signal_variables:
            if not _parse_signal(v):
                raise InvalidConfig(f"unsupported signal variable {v!r}")
        if self.n_swaps is not None and self.n_swaps < 0:
            raise InvalidConfig("n_swaps must be >= 0")

    @property
    def swaps(self) -> int:
        return self.n_tickers // 10 if self.n_swaps is None else self.n_swaps


def _parse_signal(name: str):
    if name == "dvol":
        return ("dvol", 1)
    for prefix in ("cr_", "dsvi_"):
        if name.startswith(prefix) and name[len(prefix) :].isdigit() and int(name[len(prefix) :]) >= 1:
            return (prefix[:-1], int(name[len(prefix) :]))
    return None


def trading_calendar(start_year: int, years: int, per_year: int = DAYS_PER_YEAR) -> list[dt.date]:
    """Weekdays with evenly spaced days dropped so each year has ``per_year`` sessions."""
    days = []
    for year in range(start_year, start_year + years):
        wd = [d for d in pd.date_range(f"{year}-01-01", f"{year}-12-31", freq="B").date]
        n_drop = len(wd) - per_year
        drop = set(np.linspace(0, len(wd) - 1, n_drop + 2)[1:-1].round().astype(int)) if n_drop > 0 else set()
        days.extend(d for i, d in enumerate(wd) if i not in drop)
    return days


def _rank_z(x: np.ndarray) -> np.ndarray:
    n = x.size
    ranks = pd.Series(x).rank(method="average").to_numpy()
    return (ranks - (n + 1) / 2.0) / np.sqrt((n * n - 1) / 12.0)


def _delta(prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (cur - prev) / prev
    return np.where(prev > 0, r, np.where(cur == 0, 0.0, SVI_JUMP))


@dataclass
class SynthData:
    """In-memory synthetic universe; ``write`` emits the CSV files."""

    config: SynthConfig
    constituents: list[ConstituentRecord]
    returns: pd.DataFrame
    prices: pd.DataFrame
    svi_daily: pd.DataFrame  # ticker, date, value (int or "<1")
    svi_monthly: pd.DataFrame  # ticker, month, level
    truth: pd.DataFrame
    latent: dict[str, pd.Series] = field(default_factory=dict)

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "constituents": out / "constituents.csv",
            "returns": out / "returns.csv",
            "prices": out / "prices.csv",
            "svi_daily": out / "svi_daily.csv",
            "svi_monthly": out / "svi_monthly.csv",
            "truth": out / "truth.csv",
        }
        write_constituents(self.constituents, paths["constituents"])
        for key, df in (
            ("returns", self.returns),
            ("prices", self.prices),
            ("svi_daily", self.svi_daily),
            ("svi_monthly", self.svi_monthly),
            ("truth", self.truth),
        ):
            frame = df.copy()
            if "date" in frame:
                frame["date"] = pd.to_datetime(frame["date"]).dt.strftime("%Y-%m-%d")
            frame.to_csv(paths[key], index=False, lineterminator="\n")
        return paths


def generate(config: SynthConfig) -> SynthData:
    """Simulate a universe with a planted link between lagged predictors and outperformance."""
    seed = config.seed
    n_total = config.n_tickers + config.swaps
    tickers = [f"T{i:03d}" for i in range(n_total)]
    days = trading_calendar(config.start_year, config.years)
    T = len(days)
    cal_days = pd.date_range(f"{config.start_year}-01-01", f"{config.start_year + config.years - 1}-12-31", freq="D")

    # --- constituents: the first n_tickers start as members, swaps bring in the rest
    rng = make_rng(seed, "synth", "constituents")
    sic = rng.choice(len(SIC_DIVISIONS), size=n_total, p=_SIC_WEIGHTS / _SIC_WEIGHTS.sum())
    members = list(range(config.n_tickers))
    start_of = {i: days[0] for i in members}
    records = []
    earliest = min(T - 1, 260)
    swap_days = sorted(rng.choice(np.arange(earliest, T), size=config.swaps, replace=False)) if config.swaps else []
    for k, t_idx in enumerate(swap_days):
        leaver = members.pop(int(rng.integers(len(members))))
        records.append(ConstituentRecord(tickers[leaver], start_of.pop(leaver), days[t_idx - 1], SIC_DIVISIONS[sic[leaver]]))
        joiner = config.n_tickers + k
        members.append(joiner)
        start_of[joiner] = days[t_idx]
    for i in sorted(start_of):
        records.append(ConstituentRecord(tickers[i], start_of[i], None, SIC_DIVISIONS[sic[i]]))
    records.sort(key=lambda r: (r.ticker, r.from_date))
    member_mat = np.zeros((T, n_total), dtype=bool)
    day_arr = np.array(days, dtype="datetime64[D]")
    for r in records:
        hi = np.datetime64(r.to_date or days[-1], "D")
        member_mat[(day_arr >= np.datetime64(r.from_date, "D")) & (day_arr <= hi), tickers.index(r.ticker)] = True

    # --- latent search interest on every calendar day, quantised per month as the source does
    rng = make_rng(seed, "synth", "svi")
    n_cal = len(cal_days)
    level = rng.normal(3.0, 0.5, size=n_total)
    trend = rng.normal(0.0002, 0.0002, size=n_total)
    noise = np.empty((n_cal, n_total))
    noise[0] = rng.normal(0, 0.3, n_total)
    shocks = rng.normal(0, 0.15, size=(n_cal, n_total))
    for t in range(1, n_cal):
        noise[t] = 0.8 * noise[t - 1] + shocks[t]
    weekend = np.isin(cal_days.dayofweek, (5, 6))[:, None] * -0.4
    latent = np.exp(level + trend * np.arange(n_cal)[:, None] + noise + weekend)
    latent[rng.random((n_cal, n_total)) < config.svi_missing_rate] = 0.0
    months = cal_days.strftime("%Y-%m").to_numpy()
    month_ids, month_pos = np.unique(months, return_inverse=True)
    month_max = np.zeros((len(month_ids), n_total))
    np.maximum.at(month_max, month_pos, latent)
    mm = month_max[month_pos]
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(mm > 0, np.rint(100.0 * latent / mm), 0.0)
    quantised = raw * mm / 100.0
    global_max = month_max.max(axis=0)
    levels = np.where(global_max > 0, 100.0 * month_max / np.where(global_max > 0, global_max, 1.0), 0.0)
    levels[(month_max == global_max) & (global_max > 0)] = 100.0  # peak month is exactly 100, as at the source

    svi_rows = []
    for j, tk in enumerate(tickers):
        vals = raw[:, j].astype(int).astype(object)
        vals[(raw[:, j] == 0) & (latent[:, j] > 0)] = "<1"
        svi_rows.append(pd.DataFrame({"ticker": tk, "date": cal_days, "value": vals}))
    svi_daily = pd.concat(svi_rows, ignore_index=True)
    svi_monthly = pd.DataFrame(
        {
            "ticker": np.repeat(tickers, len(month_ids)),
            "month": np.tile(month_ids, n_total),
            "level": levels.T.reshape(-1),
        }
    )

    # --- returns, volumes and prices, day by day so signals only see the past
    rng = make_rng(seed, "synth", "market")
    trade_pos = cal_days.get_indexer(pd.DatetimeIndex(days))
    svi_trade = quantised[trade_pos]
    vol_state = np.zeros(T)
    vs_shocks = rng.normal(0, 0.12, T)
    for t in range(1, T):
        vol_state[t] = 0.97 * vol_state[t - 1] + vs_shocks[t]
    sigma = np.exp(vol_state)
    market = 0.0003 + 0.008 * sigma * rng.standard_t(4, size=T) / np.sqrt(2.0)
    eps = rng.logistic(0.0, 1.0, size=(T, n_total))
    log_dv = np.log(rng.uniform(5e7, 2e9, size=n_total))
    dv_noise = rng.normal(0, 0.3, size=(T, n_total))
    price0 = 50.0 * np.exp(rng.normal(0, 0.5, n_total))
    pays_div = rng.random(n_total) < 0.5
    div_day = np.array([i % 63 == 40 for i in range(T)])

    signals = [_parse_signal(v) for v in config.signal_variables]
    R = np.zeros((T, n_total))
    P = np.zeros((T, n_total))
    D = np.zeros((T, n_total))
    shares = np.zeros((T, n_total))
    V = np.zeros((T, n_total))
    shift_mat = np.zeros((T, n_total))
    log_growth = np.zeros((T + 1, n_total))  # log_growth[t] = sum of log(1 + R) over days < t
    u = np.zeros(n_total)
    for t in range(T):
        shift = np.zeros(n_total)
        if config.signal_strength > 0 and t > 0:
            zs = []
            for kind, d in signals:
                if kind == "cr":
                    lo = max(0, t - d)
                    x = log_growth[t] - log_growth[lo]
                elif kind == "dsvi":
                    x = _delta(svi_trade[t - d - 1], svi_trade[t - d]) if t - d - 1 >= 0 else np.zeros(n_total)
                else:
                    x = (V[t - 1] - V[t - 2]) / V[t - 2] if t >= 2 else np.zeros(n_total)
                zs.append(_rank_z(x))
            shift = config.signal_strength * np.mean(zs, axis=0)
        shift_mat[t] = shift
        R[t] = np.maximum(market[t] + 0.006 * sigma[t] * (eps[t] + shift), -0.5)
        log_growth[t + 1] = log_growth[t] + np.log1p(R[t])
        prev = price0 if t == 0 else P[t - 1]
        D[t] = np.where(pays_div & div_day[t], 0.005 * prev, 0.0)
        P[t] = prev * (1.0 + R[t]) - D[t]
        u = 0.7 * u + dv_noise[t]
        shares[t] = np.maximum(np.rint(np.exp(log_dv + u) / P[t]), 1.0)
        V[t] = shares[t] * P[t]
    # the first day has no previous close, so its return cannot be checked against prices
    R_out = R.copy()
    R_out[0] = np.nan

    date_col = np.repeat(np.array(days, dtype="datetime64[ns]"), n_total)
    tick_col = np.tile(tickers, T)
    returns = pd.DataFrame({"date": date_col, "ticker": tick_col, "ret": R_out.reshape(-1)}).dropna()
    prices = pd.DataFrame(
        {
            "date": date_col,
            "ticker": tick_col,
            "close": P.reshape(-1),
            "dividend": D.reshape(-1),
            "shares_traded": shares.reshape(-1).astype(np.int64),
        }
    )

    labels = np.full((T, n_total), np.nan)
    for t in range(1, T):
        m = member_mat[t]
        med = np.median(R[t, m])
        labels[t, m] = (R[t, m] > med).astype(float)
    truth = pd.DataFrame(
        {
            "ticker": np.repeat(tickers, n_cal),
            "date": np.tile(cal_days, n_total),
            "latent_svi": quantised.T.reshape(-1),
        }
    )
    trade_truth = pd.DataFrame(
        {
            "ticker": tick_col,
            "date": date_col,
            "signal_shift": shift_mat.reshape(-1),
            "label": labels.reshape(-1),
        }
    )
    truth = truth.merge(trade_truth, on=["ticker", "date"], how="left")
    truth["label"] = truth["label"].astype("Int8")
    latent_series = {tk: pd.Series(quantised[:, j], index=cal_days, name=tk) for j, tk in enumerate(tickers)}
    logger.info("synthetic universe: %d tickers, %d trading days, %d swaps", n_total, T, config.swaps)
    return SynthData(config, records, returns, prices, svi_daily, svi_monthly, truth, latent_series)
