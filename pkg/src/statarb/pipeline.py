"""
End-to-end orchestration: inputs -> panel -> walk-forward -> backtest -> reports.

Everything under the output directory is a pure function of the inputs and
the run config. ``manifest.json`` records the config hash and a sha256 per
output file, so identical manifests imply identical outputs.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd

from . import backtest, metrics, svi
from .config import INPUT_NAMES, RunConfig
from .errors import SingleClass, StatArbError
from .features import PanelSlice, build_panel
from .gbm import BoostedModel
from .ingest import MarketData, load_market_data, membership_matrix
from .walkforward import ModelSpec, PeriodResult, leakage_violations, make_periods, model_specs, run_study

logger = logging.getLogger(__name__)

from . import __version__


def load_inputs(cfg: RunConfig) -> MarketData:
    cons = cfg.path("constituents")
    if cons is None or not cons.exists():
        raise FileNotFoundError(f"constituents file not found: {cons}")
    return load_market_data(cons, cfg.path("returns"), cfg.path("prices"))


def load_svi(cfg: RunConfig) -> pd.DataFrame | None:
    """Stitched SVI: a pre-stitched file if present, else stitched from fragments, else None."""
    stitched = cfg.path("stitched")
    if stitched is not None and stitched.exists():
        return svi.load_stitched(stitched)
    daily, monthly = cfg.path("svi_daily"), cfg.path("svi_monthly")
    if daily is not None and daily.exists():
        return svi.stitched_frame(stitch_files(daily, monthly))
    logger.warning("no SVI inputs; every SVI value is treated as 0")
    return None


def stitch_files(daily, monthly) -> dict[str, svi.StitchedSvi]:
    """Stitch fragment files; a missing monthly file means every month lacks a level."""
    levels = svi.load_svi_monthly(monthly) if monthly is not None and Path(monthly).exists() else {}
    return svi.stitch_all(svi.load_svi_daily(daily), levels)


def build(cfg: RunConfig, data: MarketData | None = None) -> PanelSlice:
    data = data or load_inputs(cfg)
    return build_panel(data, load_svi(cfg), (cfg.study_start, cfg.study_end))


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _csv(df: pd.DataFrame, path: Path, **kw) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, lineterminator="\n", float_format="%.17g", **kw)


def _iso(series: pd.Series) -> pd.Series:
    return pd.to_datetime(series).dt.strftime("%Y-%m-%d")


def prediction_path(out: Path, period: int, spec: str) -> Path:
    return out / "predictions" / f"p{period:02d}_{spec}.csv"


def model_path(out: Path, period: int, spec: str) -> Path:
    return out / "models" / f"p{period:02d}_{spec}.json"


def write_study(results: list[PeriodResult], out: Path) -> None:
    """Predictions, models, CV report and fit log, in (period, spec) order."""
    cv_rows, fit_rows = [], []
    for r in results:
        p, spec = r.period.index, r.spec.name
        preds = r.predictions.copy()
        preds["date"] = _iso(preds["date"])
        _csv(preds, prediction_path(out, p, spec), index=False)
        mp = model_path(out, p, spec)
        mp.parent.mkdir(parents=True, exist_ok=True)
        mp.write_text(r.model.to_json(), encoding="utf-8")
        for cv in r.cv:
            for fold, a in enumerate(cv.fold_aucs, start=3):
                cv_rows.append((p, spec, cv.depth, fold, a))
        for f in r.fits:
            fit_rows.append(
                (f.period, f.spec, f.kind, f.depth, f.fold, f.n_train, f.train_start, f.train_end, f.eval_start, f.eval_end)
            )
    _csv(pd.DataFrame(cv_rows, columns=["period", "spec", "depth", "fold", "auc"]), out / "cv_report.csv", index=False)
    fits = pd.DataFrame(
        fit_rows,
        columns=["period", "spec", "kind", "depth", "fold", "n_train", "train_start", "train_end", "eval_start", "eval_end"],
    )
    fits["fold"] = fits["fold"].astype("Int64")
    _csv(fits, out / "fits.csv", index=False)


def read_predictions(out: Path) -> dict[str, pd.DataFrame]:
    """Per-spec predictions concatenated over periods, from ``predictions/``."""
    by_spec: dict[str, list[pd.DataFrame]] = {}
    for path in sorted((out / "predictions").glob("p*_*.csv")):
        spec = path.stem.split("_", 1)[1]
        df = pd.read_csv(path, dtype={"ticker": str}, float_precision="round_trip")
        df["date"] = pd.to_datetime(df["date"], format="%Y-%m-%d")
        by_spec.setdefault(spec, []).append(df)
    if not by_spec:
        raise FileNotFoundError(f"no prediction files under {out / 'predictions'}")
    return {s: pd.concat(v, ignore_index=True).sort_values(["date", "ticker"], kind="stable") for s, v in by_spec.items()}


def read_models(out: Path) -> dict[str, list[BoostedModel]]:
    by_spec: dict[str, list[BoostedModel]] = {}
    for path in sorted((out / "models").glob("p*_*.json")):
        spec = path.stem.split("_", 1)[1]
        by_spec.setdefault(spec, []).append(BoostedModel.from_json(path.read_text(encoding="utf-8")))
    return by_spec


def member_returns(data: MarketData) -> pd.DataFrame:
    """``date, ticker, ret`` restricted to index members on each day."""
    r = data.returns
    days = list(data.calendar.days)
    tickers = sorted(set(r["ticker"]))
    mm = membership_matrix(data.constituents, days, tickers)
    di = pd.Index(pd.to_datetime(days)).get_indexer(r["date"])
    ti = pd.Index(tickers).get_indexer(r["ticker"])
    return r.loc[mm[di, ti], ["date", "ticker", "ret"]].reset_index(drop=True)


def aggregate_importance(models: list[BoostedModel]) -> dict[str, float]:
    """Mean of per-model rescaled importances, rescaled again to a maximum of 100."""
    names = models[0].variable_names
    total = np.zeros(len(names))
    for m in models:
        imp = m.variable_importance()
        total += np.array([imp[n] for n in names])
    total /= len(models)
    top = total.max()
    scaled = total * (100.0 / top) if top > 0 else total
    return dict(zip(names, scaled.tolist()))


def _subperiod_bounds(dates: pd.DatetimeIndex) -> Mapping[str, tuple[dt.date, dt.date]]:
    lo, hi = backtest.SUBPERIODS["2007-2009"][0], backtest.SUBPERIODS["2016-2017"][1]
    if len(dates) and dates.min() >= pd.Timestamp(lo) and dates.max() <= pd.Timestamp(hi):
        return backtest.SUBPERIODS
    return backtest.year_blocks(pd.Series(0, index=dates))


def _spec_rank(name: str) -> tuple[int, str]:
    canon = [s.name for s in model_specs()]
    spec = ModelSpec.parse(name).name
    return (canon.index(spec), name)


@dataclass
class Report:
    strategy: pd.DataFrame
    auc: pd.DataFrame
    stats: pd.DataFrame
    tests: pd.DataFrame
    subperiods: pd.DataFrame
    importance: pd.DataFrame
    summary: str


def build_report(
    predictions: Mapping[str, pd.DataFrame],
    realized: pd.DataFrame,
    models: Mapping[str, list[BoostedModel]] | None = None,
    excess_kurtosis: bool = True,
) -> tuple[Report, pd.DataFrame]:
    """Backtest every spec and compute all report tables; also returns the trade ledger."""
    predictions = {s: predictions[s] for s in sorted(predictions, key=_spec_rank)}
    index = backtest.index_benchmark(realized)
    index.index = pd.DatetimeIndex(index.index)
    strat_frames, ledgers, auc_rows, columns, test_rows = [], [], [], {}, []
    for spec, preds in predictions.items():
        pfs, skipped = backtest.simulate(preds, realized)
        if skipped:
            logger.warning("%s: %d days skipped with fewer than %d scores", spec, len(skipped), 2 * backtest.K)
        ret = backtest.returns_frame(pfs)
        ret["index"] = index.reindex(ret.index).to_numpy()
        ret.insert(0, "spec", spec)
        strat_frames.append(ret)
        ledgers.append(backtest.ledger_rows(pfs, preds, realized, spec))
        daily, trend, _ = metrics.daily_auc_series(preds)
        try:
            pooled = metrics.auc(preds["score"].to_numpy(), preds["label"].to_numpy())
        except SingleClass:
            pooled = math.nan
        auc_rows.append(
            (
                spec,
                float(daily.mean()) if len(daily) else math.nan,
                pooled,
                trend.slope if trend else math.nan,
                trend.t if trend else math.nan,
            )
        )
        columns[spec] = ret["combined"]
        if len(ret) >= 2:
            test_rows.append(
                (spec, len(ret), metrics.t_test_zero(ret["combined"]), metrics.t_test_paired_vs_index(ret["combined"], ret["index"]))
            )
    strategy = pd.concat(strat_frames) if strat_frames else pd.DataFrame()
    traded = pd.DatetimeIndex(sorted(set(strategy.index))) if len(strategy) else pd.DatetimeIndex([])
    idx_series = index.reindex(traded).dropna()

    stats = pd.DataFrame()
    if len(traded) >= 2:
        labels = {s: f"Model ({s.replace('_', ', ')})" for s in columns}
        table_cols = {labels[s]: v for s, v in columns.items()}
        table_cols["Index"] = idx_series
        stats = metrics.stats_table(table_cols, excess_kurtosis)
    tests = pd.DataFrame(test_rows, columns=["spec", "n_days", "t_mean_zero", "t_vs_index"])

    sub_rows = []
    bounds = _subperiod_bounds(traded)
    for spec, grp in strategy.groupby("spec", sort=False) if len(strategy) else []:
        parts = {c: backtest.subperiods(grp[c], bounds) for c in ("long", "short", "combined", "index")}
        for name, (lo, hi) in bounds.items():
            n = len(parts["combined"][name])
            if not n:
                continue
            sub_rows.append(
                (spec, name, lo, hi, n, *(float(backtest.cumulative(parts[c][name]).iloc[-1]) for c in parts))
            )
    subs = pd.DataFrame(
        sub_rows, columns=["spec", "subperiod", "start", "end", "n_days", "cum_long", "cum_short", "cum_combined", "cum_index"]
    )

    imp_rows = []
    for spec, ms in (models or {}).items():
        if ms:
            agg = aggregate_importance(ms)
            for name, v in sorted(agg.items(), key=lambda kv: (-kv[1], kv[0])):
                imp_rows.append((spec, name, v))
    importance = pd.DataFrame(imp_rows, columns=["spec", "variable", "importance"])

    auc_df = pd.DataFrame(auc_rows, columns=["spec", "mean_daily_auc", "pooled_auc", "trend_slope", "trend_t"])
    report = Report(strategy, auc_df, stats, tests, subs, importance, "")
    report.summary = render_summary(report, excess_kurtosis)
    ledger = pd.concat(ledgers, ignore_index=True) if ledgers else pd.DataFrame()
    return report, ledger


def render_summary(report: Report, excess_kurtosis: bool = True) -> str:
    lines = ["Mean daily AUC", "-" * 14]
    for r in report.auc.itertuples():
        lines.append(f"{r.spec:<12} daily {r.mean_daily_auc:.4f}  pooled {r.pooled_auc:.4f}  trend t {r.trend_t:+.2f}")
    if len(report.tests):
        lines += ["", "Combined daily return t statistics", "-" * 34]
        for r in report.tests.itertuples():
            lines.append(f"{r.spec:<12} n={r.n_days:<5d} mean=0: {r.t_mean_zero:+.2f}  vs index: {r.t_vs_index:+.2f}")
    if len(report.stats):
        kurt = "excess kurtosis" if excess_kurtosis else "raw kurtosis"
        lines += ["", f"Daily return statistics ({kurt})", "-" * 40, report.stats.to_string(float_format=lambda v: f"{v:.4f}")]
    if len(report.subperiods):
        lines += ["", "Cumulative combined return by sub-period", "-" * 40]
        piv = report.subperiods.pivot(index="subperiod", columns="spec", values="cum_combined")
        piv = piv.loc[list(dict.fromkeys(report.subperiods["subperiod"]))]
        lines.append(piv.to_string(float_format=lambda v: f"{v:.4f}"))
    if len(report.importance):
        lines += ["", "Variable importance (max 100), top 5 per spec", "-" * 45]
        for spec, grp in report.importance.groupby("spec", sort=False):
            top = ", ".join(f"{r.variable} {r.importance:.1f}" for r in grp.head(5).itertuples())
            lines.append(f"{spec:<12} {top}")
    return "\n".join(lines) + "\n"


def write_report(report: Report, ledger: pd.DataFrame, out: Path) -> None:
    strat = report.strategy.reset_index()
    if len(strat):
        strat["date"] = _iso(strat["date"])
    _csv(strat, out / "strategy_returns.csv", index=False)
    if len(ledger):
        ledger = ledger.copy()
        ledger["date"] = _iso(ledger["date"])
    _csv(ledger, out / "ledger.csv", index=False)
    _csv(report.auc, out / "auc_report.csv", index=False)
    _csv(report.stats, out / "stats_report.csv")
    _csv(report.tests, out / "t_tests.csv", index=False)
    _csv(report.subperiods, out / "subperiods.csv", index=False)
    _csv(report.importance, out / "importance.csv", index=False)
    (out / "summary.txt").write_text(report.summary, encoding="utf-8")


def report_from_disk(cfg: RunConfig, data: MarketData | None = None) -> Report:
    """Rebuild every report file from ``predictions/`` and ``models/`` plus market data."""
    out = Path(cfg.out_dir)
    data = data or load_inputs(cfg)
    rep, ledger = build_report(read_predictions(out), member_returns(data), read_models(out), cfg.excess_kurtosis)
    write_report(rep, ledger, out)
    write_manifest(cfg, out)
    return rep


def write_manifest(cfg: RunConfig, out: Path) -> dict:
    files = {
        p.relative_to(out).as_posix(): _sha256(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }
    inputs = {}
    for name in INPUT_NAMES:
        p = cfg.path(name)
        if p is not None and p.exists():
            inputs[name] = _sha256(p)
    manifest = {
        "package_version": __version__,
        "inputs": inputs,
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


@dataclass
class RunResult:
    panel: PanelSlice
    results: list[PeriodResult]
    report: Report
    out_dir: Path


def run(cfg: RunConfig, data: MarketData | None = None, panel: PanelSlice | None = None) -> RunResult:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = data or load_inputs(cfg)
    panel = panel if panel is not None else build(cfg, data)
    if not len(panel):
        raise StatArbError("panel is empty for the configured study range")
    periods = make_periods(cfg.study_start, cfg.study_end)
    specs = cfg.model_specs()
    gcfg = cfg.gbm_config()
    logger.info(
        "running %d periods x %d specs, %d trees, shrinkage %g, depths %s",
        len(periods), len(specs), gcfg.n_trees, gcfg.shrinkage, list(cfg.depth_grid),
    )
    results = run_study(panel, periods, specs, gcfg, cfg.depth_grid, cfg.workers)
    bad = leakage_violations([f for r in results for f in r.fits])
    if bad:
        raise StatArbError(f"{len(bad)} fits train on data at or after their evaluation window")
    write_study(results, out)
    preds = {}
    for r in results:
        preds.setdefault(r.spec.name, []).append(r.predictions)
    predictions = {s: pd.concat(v, ignore_index=True) for s, v in preds.items()}
    models = {}
    for r in results:
        models.setdefault(r.spec.name, []).append(r.model)
    rep, ledger = build_report(predictions, member_returns(data), models, cfg.excess_kurtosis)
    write_report(rep, ledger, out)
    write_manifest(cfg, out)
    return RunResult(panel, results, rep, out)

