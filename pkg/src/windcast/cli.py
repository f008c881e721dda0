"""``windcast`` command line: data synthesis, model fitting, sampling,
metrics, bidding and the two batch experiments.

Exit codes: 0 success, 1 usage error (bad flags or config), 2 runtime error.
Diagnostics go to standard error; results go to files or standard output.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import copula as copula_mod
from . import data
from . import flow as flow_mod
from . import harness, market, metrics
from .errors import InvalidConfig, MissingFile, WindcastError

log = logging.getLogger("windcast")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"no such file: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise InvalidConfig(f"{p}: expected a JSON object")
    return raw


def _synth_config(path) -> data.SynthConfig:
    cfg = data.SynthConfig.from_dict(_read_json(path)) if path else data.SynthConfig()
    cfg.validate()
    return cfg


def _synth_bundle(cfg: data.SynthConfig):
    ds = data.synthesize(cfg)
    return ds, data.synthesize_prices(ds.dates, seed=cfg.seed + 1)


def _load_source(args, need_prices: bool = False):
    """Dataset (split by ``--test-year``) and prices from ``--data-dir`` or ``--synth``."""
    if args.synth is not None:
        ds, prices = _synth_bundle(_synth_config(args.synth))
    else:
        ds, prices = data.load_dataset(args.data_dir), None
    if need_prices:
        if getattr(args, "prices", None):
            prices = data.load_prices_csv(args.prices)
        elif prices is None:
            prices = data.load_prices_csv(Path(args.data_dir) / data.PRICE_FILE)
    return data.split_by_year(ds, args.test_year), prices


def _add_source(p, prices: bool = False):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data-dir", help="directory with capacity.csv and forecast.csv")
    src.add_argument("--synth", metavar="CONFIG", help="synthesize data from a SynthConfig JSON file")
    p.add_argument("--test-year", type=int, required=True, help="calendar year held out for testing")
    if prices:
        p.add_argument("--prices", help="prices CSV (default: <data-dir>/prices.csv)")


def _market_params(path) -> market.MarketParams:
    if not path:
        return market.MarketParams()
    raw = _read_json(path)
    return market.MarketParams.from_dict(raw.get("market", raw))


def _load_model(path):
    raw = _read_json(path)
    kind = raw.get("kind")
    if kind == "flow":
        return "flow", flow_mod.FlowModel.from_dict(raw), raw.get("metadata") or {}
    if kind == "copula":
        return "copula", copula_mod.CopulaModel.from_dict(raw), raw.get("metadata") or {}
    raise InvalidConfig(f"{path}: unknown model kind {kind!r}")


def _date(text) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise UsageError(f"invalid date {text!r}, expected YYYY-MM-DD") from None


def _emit_json(obj, out) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _realization(source: str, date: dt.date) -> np.ndarray:
    """Capacity trajectory for ``date`` from a data directory or a capacity CSV."""
    p = Path(source)
    rows = data.load_capacity_csv(p / data.CAPACITY_FILE if p.is_dir() else p)
    values = {s: v for s, v in rows if s.date() == date}
    if len(values) != data.STEPS_PER_DAY:
        raise WindcastError(f"no complete realization for {date.isoformat()} in {source}")
    return np.array([values[k] for k in sorted(values)])


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _synth_config(args.config)
    if args.seed is not None:
        cfg = data.SynthConfig.from_dict({**cfg.__dict__, "seed": args.seed})
    ds, prices = _synth_bundle(cfg)
    data.write_dataset(ds, args.out, prices)
    log.info("wrote %d days to %s", len(ds), args.out)
    return EXIT_OK


def cmd_train_flow(args) -> int:
    ds, _ = _load_source(args)
    model = flow_mod.init_flow(ds, seed=args.seed)
    log.info("latent dimension %d", model.latent_dim)

    def report(epoch, nll):
        print(f"epoch {epoch} nll {nll:.6f}", file=sys.stderr)

    model, trace = flow_mod.train(model, ds, epochs=args.epochs, batch_size=args.batch_size,
                                  seed=args.seed, lr=args.lr, callback=report)
    model.metadata = {
        "data_dir": str(Path(args.data_dir).resolve()) if args.data_dir else None,
        "test_year": args.test_year,
        "seed": args.seed,
        "epochs_run": len(trace),
        "final_nll": trace[-1] if trace else None,
    }
    model.save(args.out)
    return EXIT_OK


def cmd_fit_copula(args) -> int:
    ds, _ = _load_source(args)
    model = copula_mod.fit(ds)
    out = model.to_dict()
    out["metadata"] = {
        "data_dir": str(Path(args.data_dir).resolve()) if args.data_dir else None,
        "test_year": args.test_year,
    }
    Path(args.out).write_text(json.dumps(out))
    return EXIT_OK


def cmd_sample(args) -> int:
    date = _date(args.date)
    meta = {}
    model = None
    method = args.method
    if args.model:
        kind, model, meta = _load_model(args.model)
        if method and method != kind:
            raise UsageError(f"--method {method} does not match model kind {kind}")
        method = kind
    if method is None:
        raise UsageError("give --model or --method historical")
    if method in ("flow", "copula") and model is None:
        raise UsageError(f"--method {method} needs --model")
    data_dir = args.data_dir or meta.get("data_dir")
    if not data_dir:
        raise UsageError("no --data-dir given and the model does not record one")
    ds = data.load_dataset(data_dir)
    if method == "historical":
        test_year = args.test_year if args.test_year is not None else date.year
        train = data.split_by_year(ds, test_year)
        scen = data.sample_historical(train, args.n, args.seed)
    else:
        forecast = ds.day(date).forecast
        sampler = flow_mod.sample if method == "flow" else copula_mod.sample
        scen = sampler(model, forecast, args.n, args.seed)
    scen = data.ScenarioSet(scen.scenarios, scen.source, scen.condition, date)
    if args.out:
        data.write_scenarios_csv(scen, args.out)
    else:
        data.write_scenarios_csv(scen, "/dev/stdout")
    return EXIT_OK


DEFAULT_QQ_LEVELS = np.round(np.linspace(0.01, 0.99, 99), 2)
DEFAULT_TRAJ_LEVELS = (0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0)


def _levels(text, default):
    if not text:
        return np.asarray(default, dtype=float)
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise UsageError(f"invalid --levels {text!r}") from None


def cmd_metrics(args) -> int:
    out = args.out or "/dev/stdout"
    scen = data.read_scenarios_csv(args.scenarios) if args.scenarios else None
    partition = None
    if args.data_dir:
        ds = data.load_dataset(args.data_dir)
        if args.test_year is not None:
            ds = data.split_by_year(ds, args.test_year)
            partition = ds.capacity_matrix(args.partition)
        else:
            partition = ds.capacity_matrix()
    which = args.which
    if which in ("kde", "psd") and scen is None and partition is None:
        raise UsageError(f"--which {which} needs --scenarios or --data-dir")
    if which == "kde":
        values = scen.scenarios if scen is not None else partition
        grid, dens = metrics.kde_grid(values)
        metrics.write_kde_csv(out, grid, dens)
    elif which == "psd":
        rows = scen.scenarios if scen is not None else partition
        ests = [metrics.welch_psd(r, args.segment_length, args.overlap) for r in rows]
        mean = metrics.PsdEstimate(ests[0].frequencies, np.mean([e.power for e in ests], axis=0),
                                   ests[0].n_segments)
        metrics.write_psd_csv(out, mean)
    elif which == "qq":
        if scen is None or partition is None:
            raise UsageError("--which qq needs --scenarios and --data-dir")
        levels = _levels(args.levels, DEFAULT_QQ_LEVELS)
        metrics.write_qq_csv(out, levels, metrics.qq_points(scen.scenarios, partition, levels))
    elif which == "es":
        if scen is None or not args.data_dir:
            raise UsageError("--which es needs --scenarios and --data-dir")
        date = _date(args.date) if args.date else scen.date
        if date is None:
            raise UsageError("scenario file has no date; pass --date")
        real = data.load_dataset(args.data_dir).day(date).capacity
        metrics.write_es_csv(out, [(date.isoformat(), scen.source, metrics.energy_score(real, scen))])
    elif which == "quantiles":
        if partition is None:
            raise UsageError("--which quantiles needs --data-dir")
        levels = _levels(args.levels, DEFAULT_TRAJ_LEVELS)
        metrics.write_quantiles_csv(out, levels, metrics.quantile_trajectories(partition, levels))
    return EXIT_OK


def cmd_bid(args) -> int:
    scen = data.read_scenarios_csv(args.scenarios)
    date = _date(args.date) if args.date else scen.date
    if date is None:
        raise UsageError("scenario file has no date; pass --date")
    prices = data.load_prices_csv(args.prices)
    if date not in prices:
        raise WindcastError(f"no prices for {date.isoformat()} in {args.prices}")
    params = _market_params(args.config)
    inst = market.MarketInstance.from_scenarios(prices[date], scen, params)
    sol = market.solve_wp(inst)
    text = market.solution_json(sol, prices[date], date, params) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    bid = _read_json(args.bid)
    for key in ("bids", "prices"):
        if key not in bid:
            raise InvalidConfig(f"{args.bid}: missing {key!r}")
    date = _date(args.date) if args.date else (_date(bid["date"]) if "date" in bid else None)
    if date is None:
        raise UsageError("pass --date")
    if args.config:
        params = _market_params(args.config)
    else:
        params = market.MarketParams.from_dict(bid.get("market", {}))
    real = _realization(args.realization, date) * params.bid_max
    prices = np.asarray(bid["prices"], dtype=float)
    actual = market.actual_profit(bid["bids"], real, prices, params)
    perfect = market.perfect_foresight_profit(real, prices, params)
    gap, _ = market.pipg(actual, perfect, percent=False)
    try:
        pct = market.pipg(actual, perfect)[1]
    except market.ZeroPerfectProfit:
        pct = None
    _emit_json({"date": date.isoformat(), "actual_profit_eur": actual,
                "perfect_profit_eur": perfect, "pipg_eur": gap, "pipg_pct": pct}, args.out)
    return EXIT_OK


def _experiment_setup(args):
    raw = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        raw["master_seed"] = args.seed
    if args.threads is not None:
        raw["threads"] = args.threads
    cfg = harness.ExperimentConfig.from_dict(raw)
    ds, prices = _load_source(args, need_prices=True)
    models = {}
    if args.flow:
        models["flow"] = flow_mod.FlowModel.load(args.flow)
    if args.copula:
        models["copula"] = copula_mod.CopulaModel.load(args.copula)
    for m in cfg.methods:
        if m in ("flow", "copula") and m not in models:
            raise UsageError(f"method {m} needs --{m} MODEL")
    return cfg, ds, prices, models


def cmd_stability(args) -> int:
    cfg, ds, prices, models = _experiment_setup(args)
    result = harness.run_stability(cfg, ds, models, prices)
    harness.write_stability(result, cfg, ds, args.out)
    for e in result.errors:
        log.warning("cell failed: %s", e)
    return EXIT_OK


def cmd_profits(args) -> int:
    cfg, ds, prices, models = _experiment_setup(args)
    report = harness.run_profits(cfg, ds, models, prices)
    harness.write_profits(report, cfg, ds, args.out)
    for e in report.errors:
        log.warning("cell failed: %s", e)
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="windcast", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic capacity/forecast/prices dataset")
    p.add_argument("--config", help="SynthConfig JSON (defaults used when omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-flow", help="train the conditional normalizing flow")
    _add_source(p)
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--batch-size", type=_positive_int, default=None, help="default: full batch")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    p.set_defaults(func=cmd_train_flow)

    p = sub.add_parser("fit-copula", help="fit the quantile-regression Gaussian copula")
    _add_source(p)
    p.add_argument("--out", required=True, help="model JSON path")
    p.set_defaults(func=cmd_fit_copula)

    p = sub.add_parser("sample", help="draw scenarios for one day")
    p.add_argument("--method", choices=("flow", "copula", "historical"),
                   help="default: the kind recorded in --model")
    p.add_argument("--model", help="flow or copula model JSON")
    p.add_argument("--data-dir", help="dataset directory (default: recorded in the model)")
    p.add_argument("--test-year", type=int, help="historical: year excluded from the pool (default: year of --date)")
    p.add_argument("--date", required=True, help="day to condition on, YYYY-MM-DD")
    p.add_argument("--n", type=_positive_int, required=True, help="number of scenarios")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="scenario CSV (default: stdout)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("metrics", help="scenario-quality metrics as CSV")
    p.add_argument("--which", required=True, choices=("kde", "qq", "psd", "es", "quantiles"))
    p.add_argument("--scenarios", help="scenario CSV")
    p.add_argument("--data-dir", help="dataset directory")
    p.add_argument("--test-year", type=int, help="split the dataset and use --partition")
    p.add_argument("--partition", choices=("train", "test"), default="test")
    p.add_argument("--date", help="es: realization date (default: scenario file date)")
    p.add_argument("--levels", help="comma-separated quantile levels")
    p.add_argument("--segment-length", type=_positive_int, default=metrics.WELCH_SEGMENT)
    p.add_argument("--overlap", type=float, default=metrics.WELCH_OVERLAP)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bid", help="solve the day-ahead bidding problem")
    p.add_argument("--scenarios", required=True, help="scenario CSV (capacity factors)")
    p.add_argument("--prices", required=True, help="prices CSV")
    p.add_argument("--date", help="default: the scenario file date")
    p.add_argument("--config", help="MarketParams JSON")
    p.add_argument("--out", help="bid JSON (default: stdout)")
    p.set_defaults(func=cmd_bid)

    p = sub.add_parser("evaluate", help="realized profit and PIPG of a bid")
    p.add_argument("--bid", required=True, help="bid JSON from 'windcast bid'")
    p.add_argument("--realization", required=True, help="dataset directory or capacity CSV")
    p.add_argument("--date", help="default: the date stored in the bid")
    p.add_argument("--config", help="MarketParams JSON (default: parameters stored in the bid)")
    p.add_argument("--out", help="JSON path (default: stdout)")
    p.set_defaults(func=cmd_evaluate)

    for name, func, text in (("stability", cmd_stability, "objective stability experiment"),
                             ("profits", cmd_profits, "profit / PIPG experiment")):
        p = sub.add_parser(name, help=text)
        _add_source(p, prices=True)
        p.add_argument("--config", help="ExperimentConfig JSON")
        p.add_argument("--flow", help="flow model JSON")
        p.add_argument("--copula", help="copula model JSON")
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument("--threads", type=_positive_int, help="worker threads (or WINDCAST_THREADS)")
        p.add_argument("--out", required=True, help="report directory")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:   # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, InvalidConfig) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (WindcastError, OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
