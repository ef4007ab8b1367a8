"""Command-line entry point: ``lcpvol <command> [--config FILE] [--set key=value ...]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from lcpvol.calibration import CalibConfig, calibrate, format_critical_values, read_critical_values
from lcpvol.errors import ConfigError, LcpError
from lcpvol.forecasting import backtest, compare_forecasts, var_forecasts
from lcpvol.io import (
    RunConfig,
    apply_settings,
    header_line,
    ingest_csv,
    parse_overrides,
    read_config,
    write_table,
)
from lcpvol.procedure import LcpResult, rolling_estimate
from lcpvol.simulation import QUANTILES, figure_spec, replicate_study

COMMANDS = ("calibrate", "estimate", "forecast", "backtest", "simulate")


def load_config(config_path: str | None, overrides) -> RunConfig:
    cfg = read_config(config_path) if config_path else RunConfig()
    return apply_settings(cfg, parse_overrides(overrides or []))


def _require(value, key: str):
    if not value:
        raise ConfigError(f"this command needs {key}=...")
    return value


def _calib_config(cfg: RunConfig) -> CalibConfig:
    return CalibConfig(r=cfg.r, alpha=cfg.alpha, replicates=cfg.replicates, seed=cfg.seed,
                       scheme=cfg.build_scheme(), z_grid_step=cfg.z_grid_step)


def _critical_values(cfg: RunConfig):
    scheme = cfg.build_scheme()
    crits = read_critical_values(cfg.crits) if cfg.crits else calibrate(_calib_config(cfg))
    crits.check(scheme)
    return scheme, crits


def _series_name(path: str) -> str:
    return Path(path).stem


def cmd_calibrate(cfg: RunConfig) -> None:
    out = _require(cfg.output, "output")
    crits = calibrate(_calib_config(cfg))
    Path(out).write_text(format_critical_values(crits, header_line(cfg)))


def cmd_estimate(cfg: RunConfig) -> None:
    path = _require(cfg.input, "input")[0]
    out = _require(cfg.output, "output")
    series = ingest_csv(path, cfg.kind)
    scheme, crits = _critical_values(cfg)
    points = range(scheme.lengths[0], len(series) + 1)
    rows = []
    for res in rolling_estimate(series, scheme, crits, points):
        if not isinstance(res, LcpResult):
            continue
        # dated by the last return the estimate has seen
        label = series.dates[res.t_end - 1].isoformat()
        cp = "" if res.change_point is None else series.dates[res.change_point].isoformat()
        rows.append((label, res.theta_hat, len(res.selected_interval), res.kappa, cp,
                     int(res.truncated)))
    write_table(out, header_line(cfg),
                ["date", "theta_hat", "length", "kappa", "change_point", "truncated"], rows)


def cmd_forecast(cfg: RunConfig) -> None:
    inputs = _require(cfg.input, "input")
    out = _require(cfg.output, "output")
    scheme, crits = _critical_values(cfg)
    rows = []
    width = 0
    for path in inputs:
        series = ingest_csv(path, cfg.kind)
        comp = compare_forecasts(series, scheme, crits, cfg.horizons, cfg.presample,
                                 cfg.garch_window, cfg.period, cfg.refit_every)
        for h in cfg.horizons:
            rows.append((_series_name(path), h, *comp.ratios[h]))
            width = max(width, len(comp.ratios[h]))
    columns = ["series", "h"] + [f"period_{i}" for i in range(1, width + 1)]
    write_table(out, header_line(cfg), columns, rows)


def cmd_backtest(cfg: RunConfig) -> None:
    inputs = _require(cfg.input, "input")
    out = _require(cfg.output, "output")
    scheme, crits = _critical_values(cfg)
    detail = []
    table = []
    for path in inputs:
        name = _series_name(path)
        series = ingest_csv(path, cfg.kind)
        fc = var_forecasts(series, scheme, crits, cfg.horizons, cfg.levels, cfg.laws,
                           cfg.presample)
        res = backtest(series, fc, cfg.period, cfg.overlapping)
        for s in res.scored:
            f = s.forecast
            detail.append((name, series.dates[f.t].isoformat(), f.horizon, f.quantile_level,
                           f.law, f.sigma2, f.var_value, s.realized, int(s.exception)))
        for level in cfg.levels:
            table.append((level, name, *(100.0 * res.frequency[(law, h, level)]
                                         for law in cfg.laws for h in cfg.horizons)))
    write_table(out, header_line(cfg),
                ["series", "date", "h", "level", "law", "sigma2", "var_value", "realized",
                 "exception"], detail)
    if cfg.table:
        columns = ["level", "series"] + [f"{law}_h{h}" for law in cfg.laws for h in cfg.horizons]
        table.sort(key=lambda row: row[0])
        write_table(cfg.table, header_line(cfg), columns, table)


def cmd_simulate(cfg: RunConfig) -> None:
    out = _require(cfg.output, "output")
    scheme, crits = _critical_values(cfg)
    rows = []
    for law in cfg.sim_laws:
        for mag in cfg.magnitudes:
            spec = figure_spec(mag, law, cfg.sim_replicates, cfg.seed, cfg.segment_length)
            bands = replicate_study(spec, scheme, crits)
            rows.extend((law, mag, *row) for row in bands.rows())
    q = [f"q{p}" for p in QUANTILES]
    columns = ["law", "magnitude", "t", "truth"] + [f"theta_{c}" for c in q] + [f"length_{c}" for c in q]
    write_table(out, header_line(cfg), columns, rows)


HANDLERS = {
    "calibrate": cmd_calibrate,
    "estimate": cmd_estimate,
    "forecast": cmd_forecast,
    "backtest": cmd_backtest,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lcpvol", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE",
                       help="override one configuration key (repeatable)")
    return parser


def _fail(exc: BaseException, kind: str) -> int:
    print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
    return 2 if kind == "config" else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        with np.errstate(all="ignore"):
            HANDLERS[args.command](cfg)
    except LcpError as exc:
        return _fail(exc, exc.kind)
    except (OSError, ValueError) as exc:
        return _fail(exc, type(exc).__name__)
    return 0


if __name__ == "__main__":
    sys.exit(main())
