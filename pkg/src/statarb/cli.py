"""
``statarb`` command line.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline, svi
from .config import PROFILES, load_run_config
from .errors import InvalidConfig, StatArbError
from .features import write_panel
from .ingest import membership_on
from .synthgen import SynthConfig, generate

logger = logging.getLogger("statarb")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

# flag dest -> RunConfig field
_CONFIG_FLAGS = {
    "data_dir": "data_dir",
    "constituents": "constituents",
    "returns": "returns",
    "prices": "prices",
    "svi_daily": "svi_daily",
    "svi_monthly": "svi_monthly",
    "stitched": "stitched",
    "start": "study_start",
    "end": "study_end",
    "out": "out_dir",
    "seed": "seed",
    "profile": "profile",
    "specs": "specs",
    "workers": "workers",
    "n_trees": "n_trees",
    "shrinkage": "shrinkage",
    "depth_grid": "depth_grid",
    "bag_fraction": "bag_fraction",
}


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--data-dir", help="directory holding the input CSVs under their default names")
    p.add_argument("--constituents")
    p.add_argument("--returns")
    p.add_argument("--prices")
    p.add_argument("--svi-daily")
    p.add_argument("--svi-monthly")
    p.add_argument("--stitched", help="pre-stitched ticker,date,svi file")
    p.add_argument("--start", help="study start date (YYYY-MM-DD)")
    p.add_argument("--end", help="study end date (YYYY-MM-DD)")
    p.add_argument("--seed", type=int)


def _run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="output directory")
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--specs", help="comma-separated model specs, e.g. CR,CR_SVI")
    p.add_argument("--workers", type=int)
    p.add_argument("--n-trees", type=int)
    p.add_argument("--shrinkage", type=float)
    p.add_argument("--depth-grid", help="comma-separated depths, e.g. 4,6,8")
    p.add_argument("--bag-fraction", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="statarb", description="Walk-forward statistical arbitrage on returns and search volume.")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", default="data")
    p.add_argument("--tickers", type=int, default=20)
    p.add_argument("--years", type=int, default=14)
    p.add_argument("--start-year", type=int, default=2004)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--signal", type=float, default=0.0, help="signal strength (>= 0)")
    p.add_argument("--signal-vars", default="cr_1", help="comma-separated, e.g. cr_1,dsvi_1")
    p.add_argument("--missing-rate", type=float, default=0.2, help="share of zero SVI days")
    p.add_argument("--swaps", type=int, help="index membership changes")

    p = sub.add_parser("ingest-check", help="validate input files")
    _data_args(p)

    p = sub.add_parser("stitch", help="stitch daily SVI fragments with monthly levels")
    _data_args(p)
    p.add_argument("--output", help="stitched CSV path (default <data-dir>/stitched_svi.csv)")
    p.add_argument("--diagnostics", help="write mean SVI and zero-share diagnostics here")

    p = sub.add_parser("panel", help="build the feature panel")
    _data_args(p)
    p.add_argument("--output", required=True, help="panel CSV path")

    p = sub.add_parser("run", help="walk-forward study, backtest and reports")
    _data_args(p)
    _run_args(p)

    p = sub.add_parser("report", help="rebuild reports from an existing run directory")
    _data_args(p)
    p.add_argument("--out", help="run directory")
    return parser


def _config(args: argparse.Namespace):
    overrides = {}
    for flag, name in _CONFIG_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            overrides[name] = val
    return load_run_config(getattr(args, "config", None), overrides)


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_tickers=args.tickers,
        years=args.years,
        signal_strength=args.signal,
        signal_variables=tuple(v.strip() for v in args.signal_vars.split(",") if v.strip()),
        svi_missing_rate=args.missing_rate,
        seed=args.seed,
        start_year=args.start_year,
        n_swaps=args.swaps,
    )
    paths = generate(cfg).write(args.out)
    print(f"wrote {len(paths)} files to {args.out}")
    return EXIT_OK


def cmd_ingest_check(args) -> int:
    cfg = _config(args)
    data = pipeline.load_inputs(cfg)
    print(f"constituent records: {len(data.constituents)}")
    print(f"tickers: {len(data.tickers)}")
    print(f"return rows: {len(data.returns)}")
    print(f"trading days: {len(data.calendar)} ({data.calendar.days[0]} .. {data.calendar.days[-1]})")
    print(f"dollar volume: {'yes' if data.dollar_volume is not None else 'no (prices file absent)'}")
    stitched = pipeline.load_svi(cfg)
    if stitched is not None:
        print(f"stitched SVI rows: {len(stitched)} for {stitched['ticker'].nunique()} tickers")
    print("ok")
    return EXIT_OK


def cmd_stitch(args) -> int:
    cfg = _config(args)
    daily, monthly = cfg.path("svi_daily"), cfg.path("svi_monthly")
    if daily is None or not daily.exists():
        raise FileNotFoundError(f"daily SVI file not found: {daily}")
    stitched = pipeline.stitch_files(daily, monthly)
    out = Path(args.output) if args.output else (Path(cfg.data_dir) if cfg.data_dir else Path(".")) / "stitched_svi.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svi.dump_stitched(stitched), encoding="utf-8")
    print(f"wrote {out}")
    if args.diagnostics:
        data = pipeline.load_inputs(cfg)
        members = {d: membership_on(data.constituents, d) for d in data.calendar.days}
        diag = svi.diagnostics(svi.stitched_frame(stitched), data.calendar.days, members)
        diag["date"] = [d.isoformat() for d in diag["date"]]
        diag.to_csv(args.diagnostics, index=False, lineterminator="\n", float_format="%.6f")
        print(f"wrote {args.diagnostics}")
    return EXIT_OK


def cmd_panel(args) -> int:
    cfg = _config(args)
    panel = pipeline.build(cfg)
    write_panel(panel, args.output)
    print(f"wrote {len(panel)} rows over {len(panel.days)} days to {args.output}")
    for reason, n in panel.removals.items():
        print(f"removed {reason}: {n}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    result = pipeline.run(cfg)
    print(result.report.summary, end="")
    print(f"outputs in {result.out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _config(args)
    rep = pipeline.report_from_disk(cfg)
    print(rep.summary, end="")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "ingest-check": cmd_ingest_check,
    "stitch": cmd_stitch,
    "panel": cmd_panel,
    "run": cmd_run,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=args.log_level,
        format="%(asctime)s level=%(levelname)s logger=%(name)s msg=%(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except InvalidConfig as exc:
        print(f"statarb {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StatArbError, OSError, ValueError, KeyError) as exc:
        print(f"statarb {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
