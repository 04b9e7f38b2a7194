"""Command-line surface and figure-data emitter.

Subcommands: ``price``, ``band``, ``ltv-max``, ``term-structure``,
``simulate``, ``backtest``, ``proxies``, ``figures``. Every run writes
its data files plus a ``manifest.json`` recording the command line,
resolved configuration, seeds, tool version, output list, and wall
clock. Data outputs are byte-identical across reruns with the same
arguments and seed; the manifest is the one file excluded from that
guarantee (it records the runtime). Re-running the argv stored in a
manifest (see :func:`replay_manifest`) reproduces the outputs.

Numeric formatting is fixed: CSV cells use ``%.12g``; JSON uses
Python's shortest round-trip float representation. The default output
directory is ``$TLPSIM_OUT_DIR`` or ``./tlpsim_out``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .backtest import (
    DynamicPolicy,
    StaticPolicy,
    bundled_series_path,
    compare_policies,
    load_series,
    replay,
)
from .errors import DataError, ParameterError, TlpError
from .gap_model import (
    LognormalGap,
    default_prob,
    gap_distribution_from_dict,
    lognormal_zero_log_drift,
)
from .ltv_controller import ControllerConfig
from .market_sim import (
    PRESET_NAMES,
    run_simulation,
    scenario_preset,
    sim_config_from_dict,
    sim_config_to_dict,
)
from .pricing import (
    PricingInputs,
    fair_price,
    max_ltv,
    no_arb_band,
    price_stablecoin,
    term_structure,
)
from .proxies import (
    ProxyKind,
    ProxyObservation,
    adr_premium,
    aggregate_proxies,
    futures_basis,
    label_events,
    overnight_reversal,
)

DEFAULT_OUT_DIR_ENV = "TLPSIM_OUT_DIR"
FIGURE_NAMES = ("term_structure", "ltv_tradeoff", "price_timeseries", "tlp_histogram")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(args) -> Path:
    raw = args.out_dir or os.environ.get(DEFAULT_OUT_DIR_ENV) or "tlpsim_out"
    path = Path(raw)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _read_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _trading_days(config: dict) -> int:
    return int(config.get("trading_days_per_year", 252))


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise ParameterError(f"expected a comma-separated number list, got {text!r}") from None


# -- subcommand implementations ---------------------------------------------


def _cmd_price(args, out: Path) -> tuple[list[str], dict]:
    config = _read_config_file(args.config)
    days_per_year = _trading_days(config)
    tau = args.tau_days / days_per_year
    if args.dist_json:
        dist = gap_distribution_from_dict(_read_config_file(args.dist_json))
    else:
        dist = LognormalGap(mu_annual=args.mu_annual, sigma_annual=args.sigma_annual,
                            tau_years=tau)
    inputs = PricingInputs(close_price=args.close, dist=dist, ltv=args.ltv,
                           epsilon=args.epsilon)
    result = dataclasses.asdict(price_stablecoin(inputs))
    files = []
    if args.format == "json":
        _write_json(out / "price.json", result)
        files.append("price.json")
    else:
        _write_csv(out / "price.csv", list(result), [list(result.values())])
        files.append("price.csv")
    return files, {"inputs": {"close": args.close, "ltv": args.ltv,
                              "epsilon": args.epsilon, "tau_years": tau},
                   "result": result}


def _cmd_band(args, out: Path) -> tuple[list[str], dict]:
    lower, upper = no_arb_band(args.close, args.pi, args.ell)
    result = {"band_lower": lower, "band_upper": upper,
              "fair_price": fair_price(args.close, args.pi, args.ell)}
    if args.format == "json":
        _write_json(out / "band.json", result)
        return ["band.json"], result
    _write_csv(out / "band.csv", list(result), [list(result.values())])
    return ["band.csv"], result


def _cmd_ltv_max(args, out: Path) -> tuple[list[str], dict]:
    config = _read_config_file(args.config)
    tau = args.tau_days / _trading_days(config)
    value = max_ltv(args.epsilon, args.mu_annual, args.sigma_annual, tau)
    result = {"epsilon": args.epsilon, "mu_annual": args.mu_annual,
              "sigma_annual": args.sigma_annual, "tau_years": tau, "max_ltv": value}
    if args.format == "json":
        _write_json(out / "ltv_max.json", result)
        return ["ltv_max.json"], result
    _write_csv(out / "ltv_max.csv", list(result), [list(result.values())])
    return ["ltv_max.csv"], result


def _term_structure_rows(sigmas: list[float], days: list[float],
                         days_per_year: int) -> tuple[list[str], list[list]]:
    matrix = term_structure(sigmas, days, trading_days_per_year=days_per_year)
    header = ["sigma_daily"] + [f"tlp_{_fmt(d)}d" for d in days]
    rows = [[sig] + matrix[i] for i, sig in enumerate(sigmas)]
    return header, rows


def _cmd_term_structure(args, out: Path) -> tuple[list[str], dict]:
    config = _read_config_file(args.config)
    sigmas = _float_list(args.sigma_daily)
    days = _float_list(args.days)
    header, rows = _term_structure_rows(sigmas, days, _trading_days(config))
    _write_csv(out / "term_structure.csv", header, rows)
    files = ["term_structure.csv"]
    if args.format == "json":
        _write_json(out / "term_structure.json",
                    {"sigma_daily": sigmas, "days": days,
                     "tlp": [r[1:] for r in rows]})
        files.append("term_structure.json")
    return files, {"sigma_daily": sigmas, "days": days}


_DAY_FIELDS = ["day_index", "close", "open_next", "ltv_used", "supply_minted",
               "stablecoin_price", "tlp_obs", "defaults_count", "auction_proceeds",
               "fund_balance", "controller_ltv_after"]


def _apply_sim_overrides(config, args):
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.n_days is not None:
        config = dataclasses.replace(config, n_days=args.n_days)
    if args.initial_ltv is not None:
        config = dataclasses.replace(config, initial_ltv=args.initial_ltv)
    if args.policy == "static":
        config = dataclasses.replace(config, controller=None)
    elif config.controller is not None:
        updates = {}
        for flag, key in (("gain_k", "gain_k"), ("tlp_target", "tlp_target"),
                          ("ltv_floor", "ltv_floor"), ("ltv_ceiling", "ltv_ceiling"),
                          ("max_step", "max_step_per_update"),
                          ("smoothing_alpha", "smoothing_alpha")):
            value = getattr(args, flag)
            if value is not None:
                updates[key] = value
        if updates:
            config = dataclasses.replace(
                config, controller=dataclasses.replace(config.controller, **updates))
    return config


def _cmd_simulate(args, out: Path) -> tuple[list[str], dict]:
    if args.preset:
        config = scenario_preset(args.preset)
    elif args.config:
        config = sim_config_from_dict(_read_config_file(args.config))
    else:
        raise ParameterError("simulate needs --preset or --config")
    config = _apply_sim_overrides(config, args)

    records = run_simulation(config)
    rows = [[getattr(r, f) for f in _DAY_FIELDS] for r in records]
    _write_csv(out / "simulate_days.csv", _DAY_FIELDS, rows)
    files = ["simulate_days.csv"]
    if args.format == "json":
        _write_json(out / "simulate_days.json",
                    [dict(zip(_DAY_FIELDS, row)) for row in rows])
        files.append("simulate_days.json")
    return files, {"sim_config": sim_config_to_dict(config)}


def _controller_from_args(args) -> ControllerConfig:
    return ControllerConfig(
        gain_k=args.gain_k if args.gain_k is not None else 1.0,
        tlp_target=args.tlp_target if args.tlp_target is not None else 0.005,
        tlp_band=(0.0, 0.01),
        ltv_floor=args.ltv_floor if args.ltv_floor is not None else 0.5,
        ltv_ceiling=args.ltv_ceiling if args.ltv_ceiling is not None else 0.98,
        max_step_per_update=args.max_step if args.max_step is not None else 0.02,
        smoothing_alpha=args.smoothing_alpha if args.smoothing_alpha is not None else 0.5,
    )


def _cmd_backtest(args, out: Path) -> tuple[list[str], dict]:
    config = _read_config_file(args.config)
    data_path = bundled_series_path() if args.data == "bundled" else Path(args.data)
    records = load_series(data_path)
    static_ltvs = _float_list(args.static_ltvs) if args.static_ltvs else []
    controller = _controller_from_args(args)
    window = args.window

    table = compare_policies(records, static_ltvs, controller,
                             vol_estimator_window=window, fee_rate=args.fee_rate)
    dynamic_report = replay(records, DynamicPolicy(controller),
                            vol_estimator_window=window, fee_rate=args.fee_rate,
                            trading_days_per_year=_trading_days(config))

    _write_csv(out / "backtest_comparison.csv",
               ["policy", "defaults", "mean_supply", "mean_tlp"],
               [[row["policy"], row["defaults"], row["mean_supply"], row["mean_tlp"]]
                for row in table])
    _write_csv(out / "backtest_histogram.csv", ["bin_low", "bin_high", "count"],
               [list(b) for b in dynamic_report.histogram_bins])
    report_payload = {
        "n_nights": dynamic_report.n_nights,
        "mean_tlp": dynamic_report.mean_tlp,
        "median_tlp": dynamic_report.median_tlp,
        "p95_tlp": dynamic_report.p95_tlp,
        "p99_tlp": dynamic_report.p99_tlp,
        "default_count_dynamic": dynamic_report.default_count_dynamic,
        "default_count_static": {str(k): v for row in table
                                 if row["policy"].startswith("static")
                                 for k, v in [(row["policy"].split("_", 1)[1],
                                               row["defaults"])]},
        "histogram_bin_count": len(dynamic_report.histogram_bins),
    }
    _write_json(out / "backtest_report.json", report_payload)
    files = ["backtest_comparison.csv", "backtest_histogram.csv", "backtest_report.json"]
    return files, {"data": str(data_path), "window": window,
                   "static_ltvs": static_ltvs, "report": report_payload}


def _load_event_dates(path: str | None) -> set[str]:
    if path is None:
        return set()
    with open(path, encoding="utf-8") as fh:
        return {line.strip() for line in fh if line.strip()}


def _cmd_proxies(args, out: Path) -> tuple[list[str], dict]:
    observations: list[ProxyObservation] = []
    value_rows: list[list] = []
    with open(args.data, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                if args.kind == "adr":
                    value = adr_premium(float(row["adr_usd"]), float(row["fx"]),
                                        float(row["local_close"]))
                    kind = ProxyKind.ADR_PREMIUM
                    extra: list = []
                elif args.kind == "futures":
                    value = futures_basis(float(row["futures"]), float(row["carry"]),
                                          float(row["cash_close"]))
                    kind = ProxyKind.FUTURES_BASIS
                    extra = []
                else:
                    overnight, intraday, flag = overnight_reversal(
                        float(row["prev_close"]), float(row["open"]),
                        float(row["close"]), reversal_threshold=args.reversal_threshold)
                    value = overnight
                    kind = ProxyKind.OVERNIGHT_REVERSAL
                    extra = [intraday, flag]
            except (KeyError, ValueError) as exc:
                raise DataError(f"{args.data}:{lineno}: {exc}") from None
            observations.append(ProxyObservation(
                instrument=row.get("instrument", args.kind),
                timestamp=row["date"],
                proxy_kind=kind,
                value=value,
                closure_hours=args.closure_hours,
                vol_bucket=args.vol_bucket,
            ))
            value_rows.append([row["date"], value] + extra)

    if not observations:
        raise DataError(f"{args.data}: no data rows")
    event_dates = _load_event_dates(args.events)
    bucket_by = args.bucket_by
    if event_dates:
        observations = label_events(observations, event_dates)
        bucket_by = "vol_bucket"

    value_header = {"adr": ["date", "value"], "futures": ["date", "value"],
                    "reversal": ["date", "overnight_ret", "intraday_ret", "reversal"]}
    _write_csv(out / "proxies_values.csv", value_header[args.kind], value_rows)
    agg = aggregate_proxies(observations, bucket_by=bucket_by)
    _write_csv(out / "proxies_aggregate.csv", ["bucket", "mean", "median", "count"],
               [[row["bucket"], row["mean"], row["median"], row["count"]] for row in agg])
    return (["proxies_values.csv", "proxies_aggregate.csv"],
            {"kind": args.kind, "rows": len(value_rows), "bucket_by": bucket_by})


def _cmd_figures(args, out: Path) -> tuple[list[str], dict]:
    config = _read_config_file(args.config)
    days_per_year = _trading_days(config)
    which = args.which
    if which == "term_structure":
        sigmas = _float_list(args.sigma_daily)
        days = _float_list(args.days)
        header, rows = _term_structure_rows(sigmas, days, days_per_year)
        _write_csv(out / "fig_term_structure.csv", header, rows)
        return ["fig_term_structure.csv"], {"sigma_daily": sigmas, "days": days}

    if which == "ltv_tradeoff":
        grid = _float_list(args.ltv_grid)
        tau = args.tau_days / days_per_year
        dist = lognormal_zero_log_drift(args.sigma_annual, tau)
        if not 0.0 <= args.buffer < 1.0:
            raise ParameterError(f"buffer must be in [0, 1), got {args.buffer}")
        rows = [[ltv, ltv / (1.0 - args.buffer), default_prob(dist, ltv)]
                for ltv in grid]
        _write_csv(out / "fig_ltv_tradeoff.csv",
                   ["ltv", "capital_efficiency", "default_prob"], rows)
        return ["fig_ltv_tradeoff.csv"], {"ltv_grid": grid, "sigma_annual": args.sigma_annual,
                                          "tau_years": tau, "buffer": args.buffer}

    if which == "price_timeseries":
        sim = scenario_preset("news_crash_week")
        if args.seed is not None:
            sim = dataclasses.replace(sim, seed=args.seed)
        records = run_simulation(sim)
        rows = [[r.day_index, r.stablecoin_price, r.tlp_obs, r.ltv_used,
                 r.controller_ltv_after] for r in records]
        _write_csv(out / "fig_price_timeseries.csv",
                   ["day_index", "stablecoin_price", "tlp_obs", "ltv_used",
                    "controller_ltv_after"], rows)
        return ["fig_price_timeseries.csv"], {"preset": "news_crash_week",
                                              "seed": sim.seed}

    # tlp_histogram
    records = load_series(bundled_series_path())
    report = replay(records, StaticPolicy(args.ltv), vol_estimator_window=args.window,
                    trading_days_per_year=days_per_year)
    _write_csv(out / "fig_tlp_histogram.csv", ["bin_low", "bin_high", "count"],
               [list(b) for b in report.histogram_bins])
    stats = {"n_nights": report.n_nights, "mean_tlp": report.mean_tlp,
             "median_tlp": report.median_tlp, "p95_tlp": report.p95_tlp,
             "p99_tlp": report.p99_tlp}
    _write_json(out / "fig_tlp_histogram_stats.json", stats)
    return ["fig_tlp_histogram.csv", "fig_tlp_histogram_stats.json"], stats


# -- argument parsing ---------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tlpsim",
        description="Time-bound stablecoin pricing, risk control, and simulation")
    parser.add_argument("--version", action="version", version=f"tlpsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--out-dir", default=None,
                       help=f"output directory (default ${DEFAULT_OUT_DIR_ENV} or ./tlpsim_out)")
        p.add_argument("--config", default=None,
                       help="JSON config file (e.g. trading_days_per_year)")

    p = sub.add_parser("price", help="price one closure horizon")
    common(p)
    p.add_argument("--close", type=float, required=True)
    p.add_argument("--sigma-annual", type=float, default=0.3)
    p.add_argument("--tau-days", type=float, default=1.0)
    p.add_argument("--mu-annual", type=float, default=0.0)
    p.add_argument("--ltv", type=float, default=0.95)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--dist-json", default=None,
                   help="tagged gap-distribution record (overrides the lognormal flags)")

    p = sub.add_parser("band", help="no-arbitrage band from pi and ell")
    common(p)
    p.add_argument("--close", type=float, required=True)
    p.add_argument("--pi", type=float, required=True)
    p.add_argument("--ell", type=float, required=True)

    p = sub.add_parser("ltv-max", help="largest LTV meeting a default budget")
    common(p)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--mu-annual", type=float, default=0.0)
    p.add_argument("--sigma-annual", type=float, default=0.3)
    p.add_argument("--tau-days", type=float, default=1.0)

    p = sub.add_parser("term-structure", help="premium matrix over vol and closure days")
    common(p)
    p.add_argument("--sigma-daily", default="0.02,0.04")
    p.add_argument("--days", default="1,2,3,4")

    p = sub.add_parser("simulate", help="run the agent-based overnight market")
    common(p)
    p.add_argument("--preset", choices=PRESET_NAMES, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-days", type=int, default=None)
    p.add_argument("--initial-ltv", type=float, default=None)
    p.add_argument("--policy", choices=("dynamic", "static"), default="dynamic")
    p.add_argument("--gain-k", type=float, default=None)
    p.add_argument("--tlp-target", type=float, default=None)
    p.add_argument("--ltv-floor", type=float, default=None)
    p.add_argument("--ltv-ceiling", type=float, default=None)
    p.add_argument("--max-step", type=float, default=None)
    p.add_argument("--smoothing-alpha", type=float, default=None)

    p = sub.add_parser("backtest", help="replay historical close/open gaps")
    common(p)
    p.add_argument("--data", default="bundled",
                   help="CSV path (date,close,next_open) or 'bundled'")
    p.add_argument("--static-ltvs", default="0.8,0.9,0.95")
    p.add_argument("--window", type=int, default=60)
    p.add_argument("--fee-rate", type=float, default=0.0)
    p.add_argument("--gain-k", type=float, default=None)
    p.add_argument("--tlp-target", type=float, default=None)
    p.add_argument("--ltv-floor", type=float, default=None)
    p.add_argument("--ltv-ceiling", type=float, default=None)
    p.add_argument("--max-step", type=float, default=None)
    p.add_argument("--smoothing-alpha", type=float, default=None)

    p = sub.add_parser("proxies", help="empirical premium proxies from CSV data")
    common(p)
    p.add_argument("--kind", choices=("adr", "futures", "reversal"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--closure-hours", type=float, default=12.0)
    p.add_argument("--vol-bucket", default="all")
    p.add_argument("--events", default=None, help="file of ISO event dates, one per line")
    p.add_argument("--bucket-by", choices=("closure_hours", "vol_bucket"),
                   default="closure_hours")
    p.add_argument("--reversal-threshold", type=float, default=0.02)

    p = sub.add_parser("figures", help="emit data behind the standard figures")
    common(p)
    p.add_argument("--which", choices=FIGURE_NAMES, required=True)
    p.add_argument("--sigma-daily", default="0.02,0.04")
    p.add_argument("--days", default="1,2,3,4")
    p.add_argument("--sigma-annual", type=float, default=0.3)
    p.add_argument("--tau-days", type=float, default=1.0)
    p.add_argument("--buffer", type=float, default=0.0)
    p.add_argument("--ltv-grid", default="0.75,0.8,0.85,0.9,0.95,1.0")
    p.add_argument("--ltv", type=float, default=0.95)
    p.add_argument("--window", type=int, default=60)
    p.add_argument("--seed", type=int, default=None)

    return parser


_DISPATCH = {
    "price": _cmd_price,
    "band": _cmd_band,
    "ltv-max": _cmd_ltv_max,
    "term-structure": _cmd_term_structure,
    "simulate": _cmd_simulate,
    "backtest": _cmd_backtest,
    "proxies": _cmd_proxies,
    "figures": _cmd_figures,
}


def _collect_seeds(snapshot: dict) -> list[int]:
    seeds: list[int] = []

    def walk(node) -> None:
        if isinstance(node, dict):
            for key, value in node.items():
                if key == "seed" and isinstance(value, int):
                    seeds.append(value)
                else:
                    walk(value)
        elif isinstance(node, list):
            for item in node:
                walk(item)

    walk(snapshot)
    return seeds


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = _build_parser()
    args = parser.parse_args(argv)
    out = _out_dir(args)

    started = time.monotonic()
    try:
        files, snapshot = _DISPATCH[args.command](args, out)
    except TlpError as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)},
                  sys.stderr, sort_keys=True)
        sys.stderr.write("\n")
        return 1
    except OSError as exc:
        json.dump({"error": "OSError", "message": str(exc)}, sys.stderr, sort_keys=True)
        sys.stderr.write("\n")
        return 1

    manifest = {
        "command": args.command,
        "argv": argv,
        "config": snapshot,
        "seeds": _collect_seeds(snapshot),
        "tool_version": __version__,
        "outputs": files,
        "runtime_seconds": time.monotonic() - started,
    }
    _write_json(out / "manifest.json", manifest)
    for name in files:
        print(out / name)
    return 0


def replay_manifest(manifest_path, out_dir) -> int:
    """Re-run the command recorded in a manifest into a new directory."""
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    argv = list(manifest["argv"])
    if "--out-dir" in argv:
        i = argv.index("--out-dir")
        del argv[i:i + 2]
    return main(argv + ["--out-dir", str(out_dir)])


if __name__ == "__main__":
    sys.exit(main())
