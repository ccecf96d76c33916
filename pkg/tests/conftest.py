import datetime as dt

import numpy as np
import pandas as pd
import pytest

from statarb.ingest import ConstituentRecord, MarketData, TradingCalendar
from statarb.synthgen import SynthConfig, generate


def weekdays(start: dt.date, n: int) -> list[dt.date]:
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def make_market(n_tickers=10, n_days=600, seed=0, start=dt.date(2010, 1, 4), with_volume=True):
    """Dense random universe: every ticker a member on every day."""
    rng = np.random.default_rng(seed)
    days = weekdays(start, n_days)
    tickers = [f"T{i:02d}" for i in range(n_tickers)]
    sics = ["Manufacturing", "Mining", "Retail Trade", "Services"]
    cons = [ConstituentRecord(t, days[0], None, sics[i % len(sics)]) for i, t in enumerate(tickers)]
    rets = rng.standard_t(4, size=(n_days, n_tickers)) * 0.01
    rows = [(pd.Timestamp(d), t, rets[i, j]) for i, d in enumerate(days) for j, t in enumerate(tickers)]
    returns = pd.DataFrame(rows, columns=["date", "ticker", "ret"])
    dv = None
    if with_volume:
        vol = rng.lognormal(15, 0.5, size=(n_days, n_tickers))
        dv = pd.DataFrame(
            [(pd.Timestamp(d), t, vol[i, j]) for i, d in enumerate(days) for j, t in enumerate(tickers)],
            columns=["date", "ticker", "dollar_volume"],
        )
    return MarketData(cons, returns, dv, TradingCalendar(tuple(days)))


@pytest.fixture(scope="session")
def small_synth():
    return generate(SynthConfig(n_tickers=12, years=2, seed=5, start_year=2010, svi_missing_rate=0.2))


@pytest.fixture(scope="session")
def small_synth_dir(tmp_path_factory, small_synth):
    out = tmp_path_factory.mktemp("synth")
    small_synth.write(out)
    return out


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep
