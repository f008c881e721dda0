"""Day-ahead bidding of a wind producer with a small battery.

First stage: 24 hourly bids. Second stage, per production scenario:
quarter-hourly battery charging/discharging and the hourly shortfall between
the bid energy and the delivered energy, penalised at ``omega * |price|``.

Two equivalent LP formulations are built. ``build_wp`` is the quarter-hour
model as stated. ``build_wp_hourly`` aggregates the battery to hourly energy
flows: within an hour only the net battery energy reaches the shortfall row,
and spreading each hour's flows evenly over its quarters keeps the
state-of-charge path linear between hour ends, so both models have the same
optimal value and the hourly one is a third of the size. It is the default.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .data import ScenarioSet
from .errors import InvalidConfig, InvalidInstance, LpInfeasible, ZeroPerfectProfit
from .lp import LinearProgram, fix_variables, solve

FEAS_TOL = 1e-7


@dataclass(frozen=True)
class MarketParams:
    delta_h: float = 1.0        # trading interval [h]
    delta_q: float = 0.25       # production interval [h]
    efficiency: float = 0.91    # (dis-)charging efficiency
    penalty: float = 1.5        # omega
    n_hours: int = 24
    bid_max: float = 100.0      # MW, also installed capacity
    rate_max: float = 12.5      # MW
    soc_max: float = 25.0       # MWh
    soc_0: float = 12.5         # MWh

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "penalty":
                if v < 0:
                    raise InvalidConfig("penalty must be >= 0")
            elif not v > 0:
                raise InvalidConfig(f"{f.name} must be > 0")
        if not 0 < self.efficiency <= 1:
            raise InvalidConfig("efficiency must lie in (0, 1]")
        if self.soc_0 > self.soc_max:
            raise InvalidConfig("soc_0 exceeds soc_max")
        if abs(self.quarters * self.delta_q - self.delta_h) > 1e-12:
            raise InvalidConfig("delta_h must be an integer multiple of delta_q")

    @property
    def quarters(self) -> int:
        return int(round(self.delta_h / self.delta_q))

    @property
    def n_steps(self) -> int:
        return self.n_hours * self.quarters

    @classmethod
    def from_dict(cls, raw: dict) -> "MarketParams":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise InvalidConfig(f"unknown market parameters: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MarketInstance:
    prices: np.ndarray
    production: np.ndarray   # (n_scenarios, n_steps) in MW
    params: MarketParams = MarketParams()

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        prod = np.asarray(self.production, dtype=float)
        if prod.ndim == 1:
            prod = prod[None, :]
        p = self.params
        if prices.shape != (p.n_hours,):
            raise InvalidInstance(f"expected {p.n_hours} prices, got {prices.shape}")
        if prod.ndim != 2 or prod.shape[0] < 1 or prod.shape[1] != p.n_steps:
            raise InvalidInstance(f"production must be N_S x {p.n_steps}, got {prod.shape}")
        if not (np.isfinite(prices).all() and np.isfinite(prod).all()):
            raise InvalidInstance("non-finite prices or production")
        if (prod < -1e-9).any() or (prod > p.bid_max + 1e-9).any():
            raise InvalidInstance("production outside [0, bid_max]")
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "production", np.clip(prod, 0.0, p.bid_max))

    @property
    def n_scenarios(self) -> int:
        return self.production.shape[0]

    @classmethod
    def from_scenarios(cls, prices, scenarios, params: MarketParams = MarketParams()):
        """Capacity-factor scenarios (a ScenarioSet or array) scaled by ``bid_max``."""
        cf = scenarios.scenarios if isinstance(scenarios, ScenarioSet) else np.asarray(scenarios)
        return cls(prices, np.clip(cf, 0.0, 1.0) * params.bid_max, params)

    def hourly_energy(self) -> np.ndarray:
        p = self.params
        return self.production.reshape(self.n_scenarios, p.n_hours, p.quarters).sum(axis=2) * p.delta_q


@dataclass
class BiddingSolution:
    bids: np.ndarray
    expected_objective: float
    shortfall: np.ndarray    # (N_S, 24) MWh
    p_in: np.ndarray         # (N_S, 96) MW
    p_out: np.ndarray        # (N_S, 96) MW
    soc: np.ndarray          # (N_S, 96) MWh, end of each quarter-hour

    def to_dict(self) -> dict:
        return {
            "bids": self.bids.tolist(),
            "expected_objective": self.expected_objective,
            "shortfall": self.shortfall.tolist(),
        }


class _Layout:
    """Column offsets shared by both formulations."""

    def __init__(self, n_scen: int, block: int, n_hours: int):
        self.n_hours = n_hours
        self.block = block
        self.n_vars = n_hours + n_scen * block

    def base(self, s: int) -> int:
        return self.n_hours + s * self.block


def _objective(inst: MarketInstance, layout: _Layout, short_off: int) -> np.ndarray:
    p = inst.params
    c = np.zeros(layout.n_vars)
    c[:p.n_hours] = inst.prices * p.delta_h
    pen = -p.penalty * np.abs(inst.prices) / inst.n_scenarios
    for s in range(inst.n_scenarios):
        o = layout.base(s) + short_off
        c[o:o + p.n_hours] = pen
    return c


def build_wp(instance: MarketInstance) -> LinearProgram:
    """Quarter-hour deterministic equivalent.

    Columns: 24 bids, then per scenario ``P_in[96], P_out[96], SOC[96],
    shortfall[24]``. Shortfall rows read
    ``shortfall >= delta_h * bid - delta_q * sum_q(P + P_out - P_in)``.
    """
    p = instance.params
    T, Q, K = p.n_hours, p.quarters, p.n_steps
    S = instance.n_scenarios
    lay = _Layout(S, 3 * K + T, T)
    c = _objective(instance, lay, 3 * K)
    lo = np.zeros(lay.n_vars)
    hi = np.full(lay.n_vars, math.inf)
    hi[:T] = p.bid_max

    rows, cols, vals, rhs, rel = [], [], [], [], []
    r = 0
    energy = instance.hourly_energy()
    eta, dq = p.efficiency, p.delta_q
    for s in range(S):
        o = lay.base(s)
        pin, pout, soc, short = o, o + K, o + 2 * K, o + 3 * K
        hi[pin:pin + K] = p.rate_max
        hi[pout:pout + K] = p.rate_max
        hi[soc:soc + K] = p.soc_max
        for k in range(K):
            rows += [r, r, r]
            cols += [soc + k, pin + k, pout + k]
            vals += [1.0, -eta * dq, dq / eta]
            if k:
                rows.append(r), cols.append(soc + k - 1), vals.append(-1.0)
            rhs.append(0.0 if k else p.soc_0)
            rel.append("=")
            r += 1
        rows.append(r), cols.append(soc + K - 1), vals.append(1.0)
        rhs.append(p.soc_0), rel.append("=")
        r += 1
        for t in range(T):
            rows += [r, r]
            cols += [short + t, t]
            vals += [1.0, -p.delta_h]
            for q in range(Q):
                k = t * Q + q
                rows += [r, r]
                cols += [pout + k, pin + k]
                vals += [dq, -dq]
            rhs.append(-energy[s, t]), rel.append(">=")
            r += 1
    A = sp.csr_matrix((vals, (rows, cols)), shape=(r, lay.n_vars))
    return LinearProgram(c, A, tuple(rel), np.array(rhs), lo, hi, "max")


def build_wp_hourly(instance: MarketInstance) -> LinearProgram:
    """Hourly-aggregated equivalent of :func:`build_wp`.

    Columns: 24 bids, then per scenario ``E_in[24], E_out[24], SOC[24],
    shortfall[24]`` with hourly battery energies ``E <= rate_max * delta_h``.
    """
    p = instance.params
    T = p.n_hours
    S = instance.n_scenarios
    lay = _Layout(S, 4 * T, T)
    c = _objective(instance, lay, 3 * T)
    lo = np.zeros(lay.n_vars)
    hi = np.full(lay.n_vars, math.inf)
    hi[:T] = p.bid_max
    energy = instance.hourly_energy()
    eta = p.efficiency

    # per scenario: T balance rows, 1 terminal row, T shortfall rows
    per_rows = 2 * T + 1
    n_rows = S * per_rows
    rows, cols, vals = [], [], []
    rhs = np.zeros(n_rows)
    rel = []
    t_idx = np.arange(T)
    for s in range(S):
        o = lay.base(s)
        ein, eout, soc, short = o, o + T, o + 2 * T, o + 3 * T
        hi[ein:ein + 2 * T] = p.rate_max * p.delta_h
        hi[soc:soc + T] = p.soc_max
        r0 = s * per_rows
        bal = r0 + t_idx
        rows += [bal, bal, bal, bal[1:]]
        cols += [soc + t_idx, ein + t_idx, eout + t_idx, soc + t_idx[:-1]]
        vals += [np.ones(T), np.full(T, -eta), np.full(T, 1.0 / eta), -np.ones(T - 1)]
        rhs[r0] = p.soc_0
        term = r0 + T
        rows.append(np.array([term])), cols.append(np.array([soc + T - 1])), vals.append(np.ones(1))
        rhs[term] = p.soc_0
        sh = r0 + T + 1 + t_idx
        rows += [sh, sh, sh, sh]
        cols += [short + t_idx, t_idx, eout + t_idx, ein + t_idx]
        vals += [np.ones(T), np.full(T, -p.delta_h), np.ones(T), -np.ones(T)]
        rhs[sh] = -energy[s]
        rel += ["="] * (T + 1) + [">="] * T
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_rows, lay.n_vars))
    return LinearProgram(c, A, tuple(rel), rhs, lo, hi, "max")


def _unpack_hourly(instance: MarketInstance, x: np.ndarray, objective: float) -> BiddingSolution:
    p = instance.params
    T, Q, S = p.n_hours, p.quarters, instance.n_scenarios
    bids = x[:T].copy()
    blocks = x[T:].reshape(S, 4, T)
    ein, eout, soc_end, short = blocks[:, 0], blocks[:, 1], blocks[:, 2], blocks[:, 3]
    rate_in = np.repeat(ein / p.delta_h, Q, axis=1)
    rate_out = np.repeat(eout / p.delta_h, Q, axis=1)
    soc_start = np.concatenate([np.full((S, 1), p.soc_0), soc_end[:, :-1]], axis=1)
    frac = (np.arange(Q) + 1) / Q
    soc = soc_start[:, :, None] + (soc_end - soc_start)[:, :, None] * frac
    return BiddingSolution(bids, objective, short.copy(), rate_in, rate_out, soc.reshape(S, T * Q))


def _unpack_quarter(instance: MarketInstance, x: np.ndarray, objective: float) -> BiddingSolution:
    p = instance.params
    T, K, S = p.n_hours, p.n_steps, instance.n_scenarios
    blocks = x[T:].reshape(S, 3 * K + T)
    return BiddingSolution(x[:T].copy(), objective, blocks[:, 3 * K:].copy(),
                           blocks[:, :K].copy(), blocks[:, K:2 * K].copy(),
                           blocks[:, 2 * K:3 * K].copy())


def _solve_lp(lp: LinearProgram, method: str):
    sol = solve(lp, method=method)
    if not sol.optimal:
        raise LpInfeasible(f"bidding LP returned status {sol.status}")
    return sol


def solve_wp(instance: MarketInstance, formulation: str = "hourly",
             method: str = "highs") -> BiddingSolution:
    """Optimal bids and recourse; ``expected_objective`` is the expected profit."""
    if formulation == "hourly":
        sol = _solve_lp(build_wp_hourly(instance), method)
        return _unpack_hourly(instance, sol.x, sol.objective)
    if formulation == "quarter":
        sol = _solve_lp(build_wp(instance), method)
        return _unpack_quarter(instance, sol.x, sol.objective)
    raise ValueError(f"unknown formulation {formulation!r}")


def actual_profit(bids, realization, prices, params: MarketParams = MarketParams(),
                  method: str = "highs") -> float:
    """Profit of fixed bids once the realized production (MW, 96 values) is known.

    The battery schedule is re-optimized against the realization.
    """
    inst = MarketInstance(prices, np.asarray(realization, dtype=float)[None, :], params)
    lp = build_wp_hourly(inst)
    bids = np.asarray(bids, dtype=float)
    if bids.shape != (params.n_hours,):
        raise InvalidInstance(f"expected {params.n_hours} bids")
    fixed = fix_variables(lp, list(enumerate(bids)))
    return _solve_lp(fixed, method).objective


def perfect_foresight_profit(realization, prices, params: MarketParams = MarketParams(),
                             method: str = "highs") -> float:
    inst = MarketInstance(prices, np.asarray(realization, dtype=float)[None, :], params)
    return solve_wp(inst, method=method).expected_objective


def pipg(actual: float, perfect: float, percent: bool = True) -> Tuple[float, Optional[float]]:
    """Perfect-information profit gap as ``(EUR, percent of |perfect|)``."""
    gap = actual - perfect
    if not percent:
        return gap, None
    if perfect == 0:
        raise ZeroPerfectProfit("perfect-foresight profit is zero")
    return gap, gap / abs(perfect) * 100.0


def recompute_objective(instance: MarketInstance, solution: BiddingSolution) -> float:
    """Objective implied by bids and battery flows, with shortfall recomputed."""
    p = instance.params
    Q = p.quarters
    S = instance.n_scenarios
    net = (instance.production + solution.p_out - solution.p_in).reshape(S, p.n_hours, Q)
    delivered = net.sum(axis=2) * p.delta_q
    short = np.maximum(p.delta_h * solution.bids[None, :] - delivered, 0.0)
    revenue = float(np.sum(instance.prices * solution.bids) * p.delta_h)
    penalty = float(np.sum(p.penalty * np.abs(instance.prices) * short.mean(axis=0)))
    return revenue - penalty


def audit(instance: MarketInstance, solution: BiddingSolution) -> float:
    """Largest violation of any bidding-problem constraint by ``solution``."""
    p = instance.params
    S, Q = instance.n_scenarios, p.quarters
    viol = [
        np.max(-solution.bids, initial=0.0),
        np.max(solution.bids - p.bid_max, initial=0.0),
        np.max(-solution.shortfall, initial=0.0),
    ]
    for arr, top in ((solution.p_in, p.rate_max), (solution.p_out, p.rate_max), (solution.soc, p.soc_max)):
        viol += [np.max(-arr, initial=0.0), np.max(arr - top, initial=0.0)]
    prev = np.concatenate([np.full((S, 1), p.soc_0), solution.soc[:, :-1]], axis=1)
    balance = solution.soc - prev - p.efficiency * p.delta_q * solution.p_in \
        + p.delta_q / p.efficiency * solution.p_out
    viol.append(np.abs(balance).max())
    viol.append(np.abs(solution.soc[:, -1] - p.soc_0).max())
    delivered = (instance.production + solution.p_out - solution.p_in).reshape(S, p.n_hours, Q).sum(
        axis=2) * p.delta_q
    need = p.delta_h * solution.bids[None, :] - delivered
    viol.append(np.max(need - solution.shortfall, initial=0.0))
    return float(max(viol))


def solution_json(solution: BiddingSolution, prices, date=None, params: Optional[MarketParams] = None) -> str:
    out = solution.to_dict()
    out["prices"] = np.asarray(prices, dtype=float).tolist()
    if date is not None:
        out["date"] = str(date)
    if params is not None:
        out["market"] = params.to_dict()
    return json.dumps(out, indent=2)
