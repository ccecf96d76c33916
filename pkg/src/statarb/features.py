"""
Predictor and response construction.

One row per (ticker, trading day) for index members with a full 240-day
return history, a usable volume change and a same-day return. Lags are
counted in trading days of the common calendar.
"""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DegenerateDay, InsufficientHistory, NegativeSvi, ZeroPriorVolume
from .ingest import SIC_DIVISIONS, MarketData, membership_matrix

logger = logging.getLogger(__name__)

CR_LAGS: tuple[int, ...] = (1, 2, 3, 4, 5, 10, 15, 20, 40, 60, 120, 180, 240)
SVI_LAGS: tuple[int, ...] = (1, 2, 3, 4, 5)
WEEKDAYS: tuple[str, ...] = ("Mon", "Tue", "Wed", "Thu", "Fri")
SVI_JUMP = 99.0

CR_COLUMNS = [f"cr_{d}" for d in CR_LAGS]
SVI_COLUMNS = [f"dsvi_{d}" for d in SVI_LAGS]
GI_COLUMNS = ["weekday", "industry", "dvol"]
PREDICTOR_SETS: dict[str, list[str]] = {"CR": CR_COLUMNS, "SVI": SVI_COLUMNS, "GI": GI_COLUMNS}
PANEL_COLUMNS = ["ticker", "date", *CR_COLUMNS, *SVI_COLUMNS, *GI_COLUMNS, "label"]
CATEGORICAL_LEVELS: dict[str, tuple[str, ...]] = {"weekday": WEEKDAYS, "industry": SIC_DIVISIONS}

MAX_LAG = max(CR_LAGS)


def cumulative_return(returns: Sequence[float], d: int) -> float:
    """Product of ``(1 + R)`` over the last ``d`` returns.

    Args:
        returns: trailing returns ending at t-1, oldest first.
        d: lag length in trading days.
    """
    if d < 1:
        raise ValueError("lag must be >= 1")
    if len(returns) < d:
        raise InsufficientHistory(f"need {d} returns, have {len(returns)}")
    out = 1.0
    for r in reversed(returns[-d:]):
        out *= 1.0 + r
    return out


def delta_svi(svi_prev: float, svi_cur: float) -> float:
    if svi_prev < 0 or svi_cur < 0:
        raise NegativeSvi(f"negative SVI ({svi_prev}, {svi_cur})")
    if svi_prev > 0:
        return (svi_cur - svi_prev) / svi_prev
    if svi_cur == 0:
        return 0.0
    return SVI_JUMP


def delta_volume(v_t1: float, v_t2: float) -> float:
    if not v_t2 > 0:
        raise ZeroPriorVolume(f"prior dollar volume {v_t2}")
    return (v_t1 - v_t2) / v_t2


def label_day(returns_on_t: Mapping[str, float]) -> dict[str, int]:
    """1 for tickers strictly above the cross-sectional median return, else 0."""
    if len(returns_on_t) < 2:
        raise DegenerateDay(f"need at least 2 returns, got {len(returns_on_t)}")
    med = float(np.median(np.fromiter(returns_on_t.values(), dtype=float)))
    return {t: int(r > med) for t, r in returns_on_t.items()}


def _delta_svi_array(prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (cur - prev) / prev
    return np.where(prev > 0, ratio, np.where(cur == 0, 0.0, SVI_JUMP))


def _lagged(mat: np.ndarray, k: int) -> np.ndarray:
    out = np.full_like(mat, np.nan, dtype=float)
    if k < mat.shape[0]:
        out[k:] = mat[: mat.shape[0] - k]
    return out


def _window_products(growth: np.ndarray, d: int) -> np.ndarray:
    """out[t] = prod(growth[t-d : t]) along axis 0, NaN where t < d."""
    out = np.full_like(growth, np.nan)
    if d < growth.shape[0]:
        win = np.lib.stride_tricks.sliding_window_view(growth, d, axis=0)
        out[d:] = win.prod(axis=-1)[: growth.shape[0] - d]
    return out


@dataclass
class PanelSlice:
    """Feature rows plus accounting of what was removed and why."""

    rows: pd.DataFrame
    days: list[dt.date]
    removals: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def between(self, start: dt.date, end: dt.date) -> "PanelSlice":
        mask = (self.rows["date"] >= pd.Timestamp(start)) & (self.rows["date"] <= pd.Timestamp(end))
        days = [d for d in self.days if start <= d <= end]
        return PanelSlice(self.rows.loc[mask].reset_index(drop=True), days, {})


def _categorical(values, levels: Sequence[str]) -> pd.Categorical:
    return pd.Categorical(values, categories=list(levels))


def build_panel(
    data: MarketData,
    stitched_svi: pd.DataFrame | None,
    window: tuple[dt.date, dt.date] | None = None,
) -> PanelSlice:
    """Build the feature panel for every trading day inside ``window``.

    Args:
        data: validated market inputs.
        stitched_svi: long ``ticker, date, svi`` frame; missing dates count as 0.
        window: inclusive date range for emitted rows (lookback data outside it
            is still used for lags).
    """
    days = list(data.calendar.days)
    day_index = pd.DatetimeIndex([pd.Timestamp(d) for d in days])
    tickers = sorted({r.ticker for r in data.constituents})
    T, N = len(days), len(tickers)

    R = data.returns.pivot(index="date", columns="ticker", values="ret").reindex(index=day_index, columns=tickers).to_numpy(float)
    if data.dollar_volume is not None:
        V = (
            data.dollar_volume.pivot(index="date", columns="ticker", values="dollar_volume")
            .reindex(index=day_index, columns=tickers)
            .to_numpy(float)
        )
    else:
        V = None
    if stitched_svi is not None and len(stitched_svi):
        S = (
            stitched_svi.pivot(index="date", columns="ticker", values="svi")
            .reindex(index=day_index, columns=tickers)
            .fillna(0.0)
            .to_numpy(float)
        )
    else:
        S = np.zeros((T, N))
    member = membership_matrix(data.constituents, days, tickers)

    in_window = np.ones(T, dtype=bool)
    if window is not None:
        lo, hi = np.datetime64(window[0], "D"), np.datetime64(window[1], "D")
        arr = np.array(days, dtype="datetime64[D]")
        in_window = (arr >= lo) & (arr <= hi)
    cand = member & in_window[:, None]

    growth = 1.0 + R
    cr = {d: _window_products(growth, d) for d in CR_LAGS}
    dsvi = {d: _delta_svi_array(_lagged(S, d + 1), _lagged(S, d)) for d in SVI_LAGS}
    # rows with t < d + 1 have no SVI history at all; the 240-day rule removes them anyway
    removals = {
        "missing_return": 0,
        "insufficient_history": 0,
        "missing_volume": 0,
        "zero_prior_volume": 0,
        "degenerate_day": 0,
    }
    keep = cand.copy()
    miss_ret = keep & np.isnan(R)
    removals["missing_return"] = int(miss_ret.sum())
    keep &= ~miss_ret
    short_hist = keep & np.isnan(cr[MAX_LAG])
    removals["insufficient_history"] = int(short_hist.sum())
    keep &= ~short_hist
    if V is not None:
        v1, v2 = _lagged(V, 1), _lagged(V, 2)
        miss_vol = keep & (np.isnan(v1) | np.isnan(v2))
        removals["missing_volume"] = int(miss_vol.sum())
        keep &= ~miss_vol
        zero_vol = keep & ~(v2 > 0)
        removals["zero_prior_volume"] = int(zero_vol.sum())
        keep &= ~zero_vol
        with np.errstate(divide="ignore", invalid="ignore"):
            dvol = (v1 - v2) / v2
    else:
        dvol = np.full((T, N), np.nan)

    per_day = keep.sum(axis=1)
    degenerate = (per_day > 0) & (per_day < 2)
    removals["degenerate_day"] = int(per_day[degenerate].sum())
    keep[degenerate] = False

    ti, ni = np.nonzero(keep)
    industries = _industry_lookup(data, days, tickers, ti, ni)
    dates = day_index[ti]
    weekday = [WEEKDAYS[d] if d < 5 else None for d in dates.dayofweek]
    if any(w is None for w in weekday):
        raise ValueError("calendar contains weekend days")
    rows = {"ticker": np.asarray(tickers, dtype=object)[ni], "date": dates}
    for d in CR_LAGS:
        rows[f"cr_{d}"] = cr[d][ti, ni]
    for d in SVI_LAGS:
        rows[f"dsvi_{d}"] = dsvi[d][ti, ni]
    rows["weekday"] = _categorical(weekday, WEEKDAYS)
    rows["industry"] = _categorical(industries, SIC_DIVISIONS)
    rows["dvol"] = dvol[ti, ni]
    rows["ret"] = R[ti, ni]
    df = pd.DataFrame(rows)
    med = df.groupby("date")["ret"].transform("median")
    df["label"] = (df["ret"] > med).astype(np.int8)
    df = df.sort_values(["date", "ticker"], kind="stable").reset_index(drop=True)
    panel_days = sorted({d.date() for d in df["date"]})
    logger.info("panel: %d rows over %d days; removals %s", len(df), len(panel_days), removals)
    return PanelSlice(df, panel_days, removals)


def _industry_lookup(data: MarketData, days, tickers, ti, ni) -> list[str]:
    by_ticker: dict[str, list] = {}
    for rec in data.constituents:
        by_ticker.setdefault(rec.ticker, []).append(rec)
    out = []
    for t_idx, n_idx in zip(ti, ni):
        day = days[t_idx]
        recs = by_ticker[tickers[n_idx]]
        out.append(next(r.sic_division for r in recs if r.covers(day)))
    return out


def write_panel(panel: PanelSlice | pd.DataFrame, path) -> None:
    df = panel.rows if isinstance(panel, PanelSlice) else panel
    out = df[PANEL_COLUMNS].copy()
    out["date"] = out["date"].dt.strftime("%Y-%m-%d")
    out.to_csv(path, index=False, lineterminator="\n")


def read_panel(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"ticker": str})
    if list(df.columns) != PANEL_COLUMNS:
        raise ValueError(f"{path}: unexpected panel columns")
    df["date"] = pd.to_datetime(df["date"], format="%Y-%m-%d")
    for col, levels in CATEGORICAL_LEVELS.items():
        df[col] = _categorical(df[col], levels)
    return df
