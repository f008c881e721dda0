"""Ingestion, alignment and synthesis of wind capacity-factor / forecast data.

A day is the unit everything downstream works with: 96 quarter-hourly
capacity factors plus the 24 hourly wind-speed forecasts that condition the
scenario generators.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from collections import defaultdict
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    CadenceError,
    DegenerateSplit,
    EmptyIntersection,
    EmptyTrainSet,
    InvalidConfig,
    MissingFile,
    NegativeSpeed,
    ParseError,
)

STEPS_PER_DAY = 96
HOURS_PER_DAY = 24
QUARTER = dt.timedelta(minutes=15)

CAPACITY_HEADER = ("timestamp", "capacity_factor")
FORECAST_HEADER = ("timestamp", "wind_speed_mps")
PRICE_HEADER = ("timestamp", "price_eur_mwh")

CAPACITY_FILE = "capacity.csv"
FORECAST_FILE = "forecast.csv"
PRICE_FILE = "prices.csv"


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DayRecord:
    date: dt.date
    capacity: np.ndarray
    forecast: np.ndarray

    def __post_init__(self):
        cap = _frozen(self.capacity)
        fc = _frozen(self.forecast)
        if cap.shape != (STEPS_PER_DAY,) or fc.shape != (HOURS_PER_DAY,):
            raise ValueError(
                f"{self.date}: expected 96 capacity / 24 forecast values, "
                f"got {cap.shape} / {fc.shape}"
            )
        if np.isnan(cap).any() or np.isnan(fc).any():
            raise ValueError(f"{self.date}: NaN in day record")
        if (fc < 0).any():
            raise ValueError(f"{self.date}: negative forecast speed")
        object.__setattr__(self, "capacity", cap)
        object.__setattr__(self, "forecast", fc)


@dataclass(frozen=True)
class Dataset:
    """Ordered day records with a train/test tag per day.

    ``dropped`` keeps the (date, reason) pairs of days removed during
    alignment so the drop report can be written later.
    """

    days: tuple
    split: tuple = ()
    dropped: tuple = ()

    def __post_init__(self):
        days = tuple(self.days)
        split = tuple(self.split) if self.split else ("train",) * len(days)
        if len(split) != len(days):
            raise ValueError("one split tag per day required")
        if any(tag not in ("train", "test") for tag in split):
            raise ValueError("split tags must be 'train' or 'test'")
        for a, b in zip(days, days[1:]):
            if not a.date < b.date:
                raise ValueError(f"dates not strictly increasing at {b.date}")
        object.__setattr__(self, "days", days)
        object.__setattr__(self, "split", split)
        object.__setattr__(self, "dropped", tuple(self.dropped))

    def __len__(self):
        return len(self.days)

    @property
    def dates(self) -> list:
        return [d.date for d in self.days]

    def partition(self, tag: str) -> list:
        return [d for d, s in zip(self.days, self.split) if s == tag]

    def train(self) -> list:
        return self.partition("train")

    def test(self) -> list:
        return self.partition("test")

    def day(self, date: dt.date) -> DayRecord:
        for d in self.days:
            if d.date == date:
                return d
        raise KeyError(str(date))

    def capacity_matrix(self, tag: Optional[str] = None) -> np.ndarray:
        days = self.days if tag is None else self.partition(tag)
        return np.array([d.capacity for d in days]).reshape(len(days), STEPS_PER_DAY)

    def forecast_matrix(self, tag: Optional[str] = None) -> np.ndarray:
        days = self.days if tag is None else self.partition(tag)
        return np.array([d.forecast for d in days]).reshape(len(days), HOURS_PER_DAY)


@dataclass(frozen=True)
class ScenarioSet:
    scenarios: np.ndarray
    source: str
    condition: Optional[np.ndarray] = None
    date: Optional[dt.date] = None

    def __post_init__(self):
        sc = np.array(self.scenarios, dtype=float)
        if sc.ndim == 1:
            sc = sc[None, :]
        if sc.ndim != 2 or sc.shape[0] < 1:
            raise ValueError("a scenario set needs at least one row")
        sc.setflags(write=False)
        object.__setattr__(self, "scenarios", sc)
        if self.condition is not None:
            object.__setattr__(self, "condition", _frozen(self.condition))

    def __len__(self):
        return self.scenarios.shape[0]


@dataclass(frozen=True)
class SynthConfig:
    n_days: int = 730
    ar_coefficient: float = 0.95
    noise_scale: float = 1.2
    power_curve_steepness: float = 0.6
    power_curve_midpoint: float = 9.0
    forecast_error_scale: float = 0.8
    seed: int = 0
    mean_speed: float = 8.0
    capacity_noise_scale: float = 0.02
    start_date: str = "2018-01-01"

    def validate(self) -> None:
        if int(self.n_days) < 2:
            raise InvalidConfig("n_days must be >= 2")
        if not 0.0 < self.ar_coefficient < 1.0:
            raise InvalidConfig("ar_coefficient must lie in (0, 1)")
        for name in ("noise_scale", "power_curve_steepness", "power_curve_midpoint"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be > 0")
        for name in ("forecast_error_scale", "capacity_noise_scale", "mean_speed"):
            if not getattr(self, name) >= 0:
                raise InvalidConfig(f"{name} must be >= 0")
        try:
            dt.date.fromisoformat(self.start_date)
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(f"bad start_date {self.start_date!r}") from exc

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise InvalidConfig(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**raw)


# --------------------------------------------------------------------------
# CSV ingestion
# --------------------------------------------------------------------------


def _parse_timestamp(text: str) -> dt.datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1]
    stamp = dt.datetime.fromisoformat(text)
    if stamp.tzinfo is not None:
        stamp = stamp.astimezone(dt.timezone.utc).replace(tzinfo=None)
    return stamp


def _read_rows(path, header: Sequence[str]) -> list:
    """Return ``(line_no, timestamp, value)`` for each data row.

    Line numbers count data rows only, starting at 1; the header is optional.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such file: {path}")
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        line_no = 0
        for raw in reader:
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if line_no == 0 and not rows and raw[0].strip().lower() == header[0]:
                if tuple(c.strip() for c in raw) != tuple(header):
                    raise ParseError(0, f"expected header {','.join(header)}")
                continue
            line_no += 1
            if len(raw) != 2:
                raise ParseError(line_no, "expected two columns")
            try:
                stamp = _parse_timestamp(raw[0])
                value = float(raw[1])
            except ValueError as exc:
                raise ParseError(line_no, str(exc)) from exc
            if math.isnan(value):
                raise ParseError(line_no, "NaN value")
            rows.append((line_no, stamp, value))
    return rows


def load_capacity_csv(path) -> list:
    """Parse a ``timestamp,capacity_factor`` file at 15-minute cadence."""
    rows = _read_rows(path, CAPACITY_HEADER)
    out = []
    prev = None
    for line_no, stamp, value in rows:
        if value < 0:
            raise ParseError(line_no, "negative capacity factor")
        if prev is not None and prev.date() == stamp.date() and stamp - prev != QUARTER:
            raise CadenceError(
                f"line {line_no}: {stamp.isoformat()} follows {prev.isoformat()}, "
                "expected 15-minute spacing"
            )
        prev = stamp
        out.append((stamp, value))
    return out


def load_forecast_csv(path) -> list:
    """Parse a ``timestamp,wind_speed_mps`` file at hourly cadence."""
    out = []
    for line_no, stamp, value in _read_rows(path, FORECAST_HEADER):
        if value < 0:
            raise NegativeSpeed(line_no)
        out.append((stamp, value))
    return out


def load_prices_csv(path) -> dict:
    """Day-ahead prices grouped per date; every date must have 24 hourly rows."""
    grouped = defaultdict(dict)
    for line_no, stamp, value in _read_rows(path, PRICE_HEADER):
        if stamp.minute or stamp.second:
            raise ParseError(line_no, "prices must be hourly")
        grouped[stamp.date()][stamp.hour] = value
    prices = {}
    for date, hours in sorted(grouped.items()):
        if sorted(hours) != list(range(HOURS_PER_DAY)):
            raise ParseError(0, f"{date}: expected 24 hourly prices")
        prices[date] = np.array([hours[h] for h in range(HOURS_PER_DAY)])
    return prices


def align_days(capacity_rows: Iterable, forecast_rows: Iterable) -> Dataset:
    """Group parsed rows into complete days; incomplete days are dropped."""
    cap = defaultdict(dict)
    for stamp, value in capacity_rows:
        cap[stamp.date()][(stamp.hour * 60 + stamp.minute) // 15] = value
    fc = defaultdict(dict)
    for stamp, value in forecast_rows:
        if stamp.minute == 0 and stamp.second == 0:
            fc[stamp.date()][stamp.hour] = value

    days, dropped = [], []
    for date in sorted(set(cap) | set(fc)):
        c, f = cap.get(date, {}), fc.get(date, {})
        if len(c) != STEPS_PER_DAY:
            dropped.append((date, f"capacity has {len(c)} of 96 quarter-hours"))
        elif len(f) != HOURS_PER_DAY:
            dropped.append((date, f"forecast has {len(f)} of 24 hours"))
        else:
            days.append(
                DayRecord(
                    date,
                    [c[k] for k in range(STEPS_PER_DAY)],
                    [f[h] for h in range(HOURS_PER_DAY)],
                )
            )
    if not days:
        raise EmptyIntersection("no date has complete capacity and forecast data")
    return Dataset(tuple(days), dropped=tuple(dropped))


def load_dataset(data_dir) -> Dataset:
    data_dir = Path(data_dir)
    return align_days(
        load_capacity_csv(data_dir / CAPACITY_FILE),
        load_forecast_csv(data_dir / FORECAST_FILE),
    )


def split_by_year(dataset: Dataset, test_year: int) -> Dataset:
    if not len(dataset):
        raise DegenerateSplit("empty dataset")
    split = tuple("test" if d.date.year == test_year else "train" for d in dataset.days)
    if "test" not in split or "train" not in split:
        raise DegenerateSplit(f"test_year={test_year} leaves an empty partition")
    return Dataset(dataset.days, split, dataset.dropped)


def sample_historical(dataset: Dataset, n: int, seed: int) -> ScenarioSet:
    """Draw ``n`` training-day trajectories uniformly with replacement."""
    train = dataset.capacity_matrix("train")
    if train.shape[0] == 0:
        raise EmptyTrainSet("no training days to draw from")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, train.shape[0], size=n)
    return ScenarioSet(train[idx], "historical")


# --------------------------------------------------------------------------
# Writers
# --------------------------------------------------------------------------


def _stamp(date: dt.date, minutes: int) -> str:
    return (dt.datetime.combine(date, dt.time()) + dt.timedelta(minutes=minutes)).strftime(
        "%Y-%m-%dT%H:%M"
    )


def write_capacity_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CAPACITY_HEADER)
        for d in dataset.days:
            for k, v in enumerate(d.capacity):
                w.writerow((_stamp(d.date, 15 * k), repr(float(v))))


def write_forecast_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FORECAST_HEADER)
        for d in dataset.days:
            for h, v in enumerate(d.forecast):
                w.writerow((_stamp(d.date, 60 * h), repr(float(v))))


def write_prices_csv(prices: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PRICE_HEADER)
        for date in sorted(prices):
            for h, v in enumerate(prices[date]):
                w.writerow((_stamp(date, 60 * h), repr(float(v))))


def write_drop_report(dataset: Dataset, path) -> None:
    with open(path, "w") as fh:
        for date, reason in dataset.dropped:
            fh.write(json.dumps({"date": date.isoformat(), "reason": reason}) + "\n")


SCENARIO_PREFIX = ("date", "source", "scenario")


def write_scenarios_csv(scenarios: ScenarioSet, path) -> None:
    """Wide layout: one scenario per row, columns ``step_0 .. step_95``."""
    width = scenarios.scenarios.shape[1]
    date = scenarios.date.isoformat() if scenarios.date is not None else ""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCENARIO_PREFIX + tuple(f"step_{k}" for k in range(width)))
        for i, row in enumerate(scenarios.scenarios):
            w.writerow([date, scenarios.source, i] + [repr(float(v)) for v in row])


def read_scenarios_csv(path) -> ScenarioSet:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header[:3]) != SCENARIO_PREFIX:
            raise ParseError(0, "expected header date,source,scenario,step_0,...")
        rows, dates, sources = [], set(), set()
        for line_no, raw in enumerate(reader, start=1):
            if not raw:
                continue
            if len(raw) != len(header):
                raise ParseError(line_no, f"expected {len(header)} columns")
            dates.add(raw[0])
            sources.add(raw[1])
            try:
                rows.append([float(v) for v in raw[3:]])
            except ValueError as exc:
                raise ParseError(line_no, str(exc)) from exc
    if not rows:
        raise ParseError(0, "no scenarios in file")
    if len(dates) != 1 or len(sources) != 1:
        raise ParseError(0, "a scenario file holds one date and one source")
    date = dates.pop()
    return ScenarioSet(np.array(rows), sources.pop(),
                       date=dt.date.fromisoformat(date) if date else None)


# --------------------------------------------------------------------------
# Synthetic data
# --------------------------------------------------------------------------


def logistic_power_curve(speed, steepness: float, midpoint: float):
    return 1.0 / (1.0 + np.exp(-steepness * (np.asarray(speed) - midpoint)))


def synthesize(config: SynthConfig) -> Dataset:
    """Generate a dataset whose forecasts genuinely inform the capacity factors.

    Hourly latent wind speed is a reflected AR(1) around ``mean_speed``; the
    capacity factor is a logistic power curve of the quarter-hourly
    interpolated speed plus smooth AR(1) noise, clamped to [0, 1]. The
    forecast is the latent hourly speed plus Gaussian error.
    """
    config.validate()
    n_days = int(config.n_days)
    rng = np.random.default_rng(config.seed)
    phi, sigma, mu = config.ar_coefficient, config.noise_scale, config.mean_speed

    n_hours = n_days * HOURS_PER_DAY + 1  # one extra point closes the last day
    latent = np.empty(n_hours)
    w = mu + sigma / math.sqrt(1.0 - phi**2) * rng.standard_normal()
    for i, eps in enumerate(rng.standard_normal(n_hours)):
        if i:
            w = mu + phi * (w - mu) + sigma * eps
        w = abs(w)
        latent[i] = w

    positions = np.arange(n_days * STEPS_PER_DAY) / 4.0
    speed_q = np.interp(positions, np.arange(n_hours), latent)
    capacity = logistic_power_curve(
        speed_q, config.power_curve_steepness, config.power_curve_midpoint
    )
    if config.capacity_noise_scale > 0:
        rho = 0.9
        innov = rng.standard_normal(capacity.size) * config.capacity_noise_scale * math.sqrt(
            1 - rho**2
        )
        noise = np.empty_like(innov)
        acc = config.capacity_noise_scale * rng.standard_normal()
        for i, e in enumerate(innov):
            acc = rho * acc + e
            noise[i] = acc
        capacity = capacity + noise
    capacity = np.clip(capacity, 0.0, 1.0)

    hourly = latent[:-1]
    if config.forecast_error_scale > 0:
        forecast = hourly + config.forecast_error_scale * rng.standard_normal(hourly.size)
        forecast = np.maximum(forecast, 0.0)
    else:
        forecast = hourly.copy()

    start = dt.date.fromisoformat(config.start_date)
    days = tuple(
        DayRecord(
            start + dt.timedelta(days=i),
            capacity[i * STEPS_PER_DAY:(i + 1) * STEPS_PER_DAY],
            forecast[i * HOURS_PER_DAY:(i + 1) * HOURS_PER_DAY],
        )
        for i in range(n_days)
    )
    return Dataset(days)


def synthesize_prices(dates: Sequence[dt.date], seed: int, base: float = 45.0) -> dict:
    """Hourly day-ahead prices with a double-peaked daily profile.

    Level shifts per day and hourly noise make the price vector vary between
    days; a small fraction of hours may go negative.
    """
    rng = np.random.default_rng(seed)
    hours = np.arange(HOURS_PER_DAY)
    profile = 12.0 * np.exp(-0.5 * ((hours - 8) / 2.0) ** 2) + 15.0 * np.exp(
        -0.5 * ((hours - 19) / 2.5) ** 2
    ) - 8.0 * np.exp(-0.5 * ((hours - 3) / 2.0) ** 2)
    prices = {}
    for date in dates:
        level = base + 10.0 * rng.standard_normal()
        prices[date] = np.round(level + profile + 5.0 * rng.standard_normal(HOURS_PER_DAY), 2)
    return prices


def write_dataset(dataset: Dataset, out_dir, prices: Optional[dict] = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_capacity_csv(dataset, out_dir / CAPACITY_FILE)
    write_forecast_csv(dataset, out_dir / FORECAST_FILE)
    if prices is not None:
        write_prices_csv(prices, out_dir / PRICE_FILE)
