"""Stability and profit experiments over test days, methods and scenario counts.

Every cell (day x method x size x instance) draws its scenarios with its own
child seed, so cells are independent and can run in any order or in
parallel; results are reduced in a fixed sorted order.

Child seeds
-----------
``child_seed(master, day_index, method_id, size, instance)`` folds the
components into a 64-bit state with the splitmix64 finalizer::

    h = mix(master)
    for c in (day_index, method_id, size, instance):
        h = mix(h ^ (c + GAMMA))

where ``mix(x)`` adds ``GAMMA = 0x9E3779B97F4A7C15`` and applies the
splitmix64 output function (shifts 30/27/31 with the multipliers
``0xBF58476D1CE4E5B9`` and ``0x94D049BB133111EB``), all modulo 2**64.
Method ids: historical 1, flow 2, copula 3, oracle 4.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import copula as copula_mod
from . import flow as flow_mod
from .data import Dataset, DayRecord, ScenarioSet, sample_historical
from .errors import InvalidConfig, WindcastError, ZeroPerfectProfit
from .market import (MarketInstance, MarketParams, actual_profit, perfect_foresight_profit,
                     pipg, solve_wp)
from .metrics import StabilityReport, StabilityStats, stability_stats

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
METHOD_IDS = {"historical": 1, "flow": 2, "copula": 3, "oracle": 4}
METHODS = ("historical", "flow", "copula")


def mix64(x: int) -> int:
    z = (x + GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def child_seed(master: int, day_index: int, method_id: int, size: int, instance: int) -> int:
    h = mix64(master & MASK64)
    for c in (day_index, method_id, size, instance):
        h = mix64(h ^ ((c + GAMMA) & MASK64))
    return h


@dataclass
class ExperimentConfig:
    methods: Tuple[str, ...] = METHODS
    scenario_counts: Tuple[int, ...] = (3, 5, 10, 20, 50)
    instances_per_day: int = 50
    profit_scenario_count: int = 100
    master_seed: int = 0
    market: MarketParams = field(default_factory=MarketParams)
    days: Optional[Tuple[str, ...]] = None   # ISO dates; default = whole test partition
    threads: Optional[int] = None

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.scenario_counts = tuple(int(s) for s in self.scenario_counts)
        if self.days is not None:
            self.days = tuple(str(d) for d in self.days)
        if isinstance(self.market, dict):
            self.market = MarketParams.from_dict(self.market)
        self.validate()

    def validate(self) -> None:
        if not self.methods:
            raise InvalidConfig("at least one method is required")
        bad = [m for m in self.methods if m not in METHOD_IDS]
        if bad:
            raise InvalidConfig(f"unknown methods {bad}")
        if not self.scenario_counts or min(self.scenario_counts) < 1:
            raise InvalidConfig("scenario counts must be >= 1")
        if self.instances_per_day < 1 or self.profit_scenario_count < 1:
            raise InvalidConfig("instance and scenario counts must be >= 1")
        if not 0 <= self.master_seed <= MASK64:
            raise InvalidConfig("master_seed must be a 64-bit unsigned integer")
        if self.threads is not None and self.threads < 1:
            raise InvalidConfig("threads must be >= 1")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise InvalidConfig(f"unknown experiment settings: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["methods"] = list(self.methods)
        out["scenario_counts"] = list(self.scenario_counts)
        out["days"] = list(self.days) if self.days is not None else None
        return out


def resolve_threads(requested: Optional[int] = None) -> int:
    if requested:
        return int(requested)
    env = os.environ.get("WINDCAST_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise InvalidConfig(f"WINDCAST_THREADS must be an integer, got {env!r}")
        if value < 1:
            raise InvalidConfig("WINDCAST_THREADS must be >= 1")
        return value
    return 1


def generate(method: str, models: dict, dataset: Dataset, day: DayRecord, n: int, seed: int) -> ScenarioSet:
    """Capacity-factor scenarios for ``day`` from one generator."""
    if method == "historical":
        return sample_historical(dataset, n, seed)
    if method == "flow":
        return flow_mod.sample(models["flow"], day.forecast, n, seed)
    if method == "copula":
        return copula_mod.sample(models["copula"], day.forecast, n, seed)
    if method == "oracle":
        return ScenarioSet(day.capacity, "oracle", date=day.date)
    raise InvalidConfig(f"unknown method {method!r}")


def _test_days(config: ExperimentConfig, dataset: Dataset) -> List[Tuple[int, DayRecord]]:
    """``(index, day)`` pairs; the index is the position in the test partition."""
    test = dataset.test()
    if not test:
        raise InvalidConfig("the test partition is empty")
    indexed = list(enumerate(test))
    if config.days is None:
        return indexed
    wanted = set(config.days)
    picked = [(i, d) for i, d in indexed if d.date.isoformat() in wanted]
    missing = wanted - {d.date.isoformat() for _, d in picked}
    if missing:
        raise InvalidConfig(f"days not in the test partition: {sorted(missing)}")
    return picked


def _check_models(config: ExperimentConfig, models: dict) -> None:
    for m in config.methods:
        if m in ("flow", "copula") and m not in models:
            raise InvalidConfig(f"method {m!r} needs a fitted model")


def _run_cells(cells, fn, threads: int):
    """Evaluate ``fn`` on every cell; exceptions become per-cell error strings."""
    def safe(cell):
        try:
            return cell, fn(cell), None
        except (WindcastError, ValueError, FloatingPointError) as exc:
            return cell, None, f"{type(exc).__name__}: {exc}"

    if threads <= 1:
        out = [safe(c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(safe, cells))
    return sorted(out, key=lambda r: r[0])


@dataclass
class StabilityResult:
    reports: Dict[str, StabilityReport]
    objectives: Dict[Tuple[str, int], Dict[str, List[float]]]
    errors: List[dict]


def run_stability(config: ExperimentConfig, dataset: Dataset, models: dict, prices: dict) -> StabilityResult:
    """Solve ``instances_per_day`` bidding problems per (day, method, size)."""
    _check_models(config, models)
    days = _test_days(config, dataset)
    cells = [(idx, m, size, k)
             for idx, _ in days
             for m in config.methods
             for size in config.scenario_counts
             for k in range(config.instances_per_day)]
    by_index = dict(days)

    def solve_cell(cell):
        idx, method, size, k = cell
        day = by_index[idx]
        seed = child_seed(config.master_seed, idx, METHOD_IDS[method], size, k)
        scen = generate(method, models, dataset, day, size, seed)
        inst = MarketInstance.from_scenarios(_prices_for(prices, day.date), scen, config.market)
        return solve_wp(inst).expected_objective

    results = _run_cells(cells, solve_cell, resolve_threads(config.threads))
    objectives: Dict[Tuple[str, int], Dict[str, List[float]]] = {}
    errors = []
    failed = set()
    for (idx, method, size, k), value, err in results:
        date = by_index[idx].date.isoformat()
        if err is not None:
            errors.append({"date": date, "method": method, "size": size, "instance": k, "error": err})
            failed.add((method, size, date))
            continue
        objectives.setdefault((method, size), {}).setdefault(date, []).append(value)
    reports = {}
    for method in config.methods:
        rep = StabilityReport(method)
        for size in config.scenario_counts:
            per_day = [v for d, v in sorted(objectives.get((method, size), {}).items())
                       if (method, size, d) not in failed]
            if per_day and len(per_day[0]) >= 2:
                rep.cells[size] = stability_stats(per_day)
        reports[method] = rep
    return StabilityResult(reports, objectives, errors)


def _prices_for(prices: dict, date: dt.date) -> np.ndarray:
    try:
        return np.asarray(prices[date], dtype=float)
    except KeyError:
        raise InvalidConfig(f"no prices for {date.isoformat()}") from None


@dataclass
class MethodProfit:
    avg_pipg_eur: float
    avg_pipg_pct: float
    max_pipg_eur: float
    n_days: int
    n_pct_days: int


@dataclass
class ProfitReport:
    methods: Dict[str, MethodProfit]
    sweep: Dict[Tuple[str, int], Tuple[float, float]]   # (avg expected, avg actual)
    days: List[dict]
    errors: List[dict]


def run_profits(config: ExperimentConfig, dataset: Dataset, models: dict, prices: dict) -> ProfitReport:
    """Per day and method: bid with ``profit_scenario_count`` scenarios, then
    evaluate against the realization; also sweep ``scenario_counts``."""
    _check_models(config, models)
    days = _test_days(config, dataset)
    by_index = dict(days)
    sizes = sorted(set(config.scenario_counts) | {config.profit_scenario_count})
    cells = [(idx, m, size) for idx, _ in days for m in config.methods for size in sizes]

    def perfect_cell(idx):
        day = by_index[idx]
        return perfect_foresight_profit(day.capacity * config.market.bid_max,
                                        _prices_for(prices, day.date), config.market)

    def bid_cell(cell):
        idx, method, size = cell
        day = by_index[idx]
        seed = child_seed(config.master_seed, idx, METHOD_IDS[method], size, 0)
        scen = generate(method, models, dataset, day, size, seed)
        price = _prices_for(prices, day.date)
        sol = solve_wp(MarketInstance.from_scenarios(price, scen, config.market))
        actual = actual_profit(sol.bids, day.capacity * config.market.bid_max, price, config.market)
        return sol.expected_objective, actual

    threads = resolve_threads(config.threads)
    perfect = {idx: (v, e) for idx, v, e in _run_cells([i for i, _ in days], perfect_cell, threads)}
    results = _run_cells(cells, bid_cell, threads)

    errors, rows = [], []
    sweep_vals: Dict[Tuple[str, int], List[Tuple[float, float]]] = {}
    for idx, (_, err) in sorted(perfect.items()):
        if err is not None:
            errors.append({"date": by_index[idx].date.isoformat(), "method": "perfect",
                           "size": 1, "error": err})
    for (idx, method, size), value, err in results:
        date = by_index[idx].date.isoformat()
        if err is not None:
            errors.append({"date": date, "method": method, "size": size, "error": err})
            continue
        expected, actual = value
        if size in config.scenario_counts:
            sweep_vals.setdefault((method, size), []).append((expected, actual))
        pf, pf_err = perfect[idx]
        if size != config.profit_scenario_count or pf_err is not None:
            continue
        gap, _ = pipg(actual, pf, percent=False)
        try:
            _, pct = pipg(actual, pf)
        except ZeroPerfectProfit:
            pct = None
        rows.append({"date": date, "method": method, "expected": expected, "actual": actual,
                     "perfect": pf, "pipg_eur": gap, "pipg_pct": pct})

    methods = {}
    for method in config.methods:
        mine = [r for r in rows if r["method"] == method]
        if not mine:
            continue
        gaps = np.array([r["pipg_eur"] for r in mine])
        pcts = np.array([r["pipg_pct"] for r in mine if r["pipg_pct"] is not None])
        methods[method] = MethodProfit(float(gaps.mean()),
                                       float(pcts.mean()) if pcts.size else math.nan,
                                       float(gaps.min()), len(mine), int(pcts.size))
    sweep = {key: (float(np.mean([v[0] for v in vals])), float(np.mean([v[1] for v in vals])))
             for key, vals in sorted(sweep_vals.items())}
    return ProfitReport(methods, sweep, rows, errors)


# --------------------------------------------------------------------------
# Report files
# --------------------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _manifest(config: ExperimentConfig, dataset: Dataset, kind: str, errors: int) -> dict:
    return {
        "experiment": kind,
        "config": config.to_dict(),
        "seed_derivation": "child = mix(master, day_index, method_id, size, instance), splitmix64",
        "method_ids": METHOD_IDS,
        "test_days": [d.date.isoformat() for d in dataset.test()],
        "errored_cells": errors,
    }


def write_stability(result: StabilityResult, config: ExperimentConfig, dataset: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for size in config.scenario_counts:
        for method in config.methods:
            cell = result.reports[method].cells.get(size)
            rows.append([size, method, cell.std if cell else None, cell.spread if cell else None,
                         cell.n_days if cell else 0])
    _write_csv(out / "stability.csv", ["size", "method", "std_eur", "spread_eur", "n_days"], rows)
    raw = []
    for (method, size), per_day in sorted(result.objectives.items()):
        for date, vals in sorted(per_day.items()):
            raw.extend([date, method, size, k, v] for k, v in enumerate(vals))
    _write_csv(out / "stability_objectives.csv", ["date", "method", "size", "instance", "objective"], raw)
    _write_csv(out / "errors.csv", ["date", "method", "size", "instance", "error"],
               ([e["date"], e["method"], e["size"], e.get("instance", ""), e["error"]] for e in result.errors))
    (out / "manifest.json").write_text(
        json.dumps(_manifest(config, dataset, "stability", len(result.errors)), indent=2) + "\n")


def write_profits(report: ProfitReport, config: ExperimentConfig, dataset: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "pipg.csv",
               ["method", "avg_pipg_eur", "avg_pipg_pct", "max_pipg_eur", "n_days"],
               ([m, r.avg_pipg_eur, r.avg_pipg_pct, r.max_pipg_eur, r.n_days]
                for m, r in report.methods.items()))
    _write_csv(out / "expected_vs_actual.csv", ["size", "method", "avg_expected_eur", "avg_actual_eur"],
               ([size, m, e, a] for (m, size), (e, a) in
                sorted(report.sweep.items(), key=lambda kv: (kv[0][1], kv[0][0]))))
    _write_csv(out / "profit_days.csv",
               ["date", "method", "expected_eur", "actual_eur", "perfect_eur", "pipg_eur", "pipg_pct"],
               ([r["date"], r["method"], r["expected"], r["actual"], r["perfect"], r["pipg_eur"],
                 r["pipg_pct"]] for r in report.days))
    _write_csv(out / "errors.csv", ["date", "method", "size", "error"],
               ([e["date"], e["method"], e["size"], e["error"]] for e in report.errors))
    (out / "manifest.json").write_text(
        json.dumps(_manifest(config, dataset, "profits", len(report.errors)), indent=2) + "\n")


__all__ = [
    "ExperimentConfig", "StabilityResult", "ProfitReport", "MethodProfit", "StabilityStats",
    "child_seed", "mix64", "generate", "run_stability", "run_profits",
    "write_stability", "write_profits", "resolve_threads",
]
