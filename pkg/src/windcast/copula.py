"""Conditional Gaussian-copula scenario generator.

Marginals: for every quarter-hour, linear quantile regressions of the
capacity factor on the matching hourly forecast at 21 levels. The inverse
CDF linearly interpolates those 21 quantiles. Temporal dependence: a Gaussian
correlation matrix estimated from normal scores of the training data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .data import Dataset, ScenarioSet
from .errors import InsufficientData, LpInfeasible
from .lp import INF, LinearProgram, solve

LEVELS = np.linspace(0.0, 1.0, 21)
MIN_TRAIN_DAYS = 25
UNIFORM_CLIP = 1e-6
JITTER = 1e-8


def hour_of_step(t: int) -> int:
    """Zero-based forecast hour used for zero-based quarter-hour ``t``."""
    return t // 4


def fit_pinball(points, q: float, method: str = "highs"):
    """Linear quantile regression ``capacity ~ slope * forecast + intercept``.

    Minimises the pinball loss as an LP. With HiGHS the small dual problem
    (two equality rows, box-bounded weights) is solved and the coefficients
    are read off its row multipliers; the simplex route solves the primal.
    When the regressor is constant the slope is pinned to zero.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] < 2:
        raise InsufficientData("need at least two points")
    if not 0.0 < q < 1.0:
        raise ValueError("quantile level must lie strictly in (0, 1)")
    f, c = pts[:, 0], pts[:, 1]
    n = f.size
    with_slope = np.ptp(f) > 0
    design = np.column_stack([np.ones(n), f]) if with_slope else np.ones((n, 1))
    k = design.shape[1]

    if method == "highs":
        # max c.d  s.t.  design^T d = 0,  q - 1 <= d <= q
        dual_lp = LinearProgram(c, design.T, ("=",) * k, np.zeros(k),
                                np.full(n, q - 1.0), np.full(n, q), "max")
        sol = solve(dual_lp, method="highs")
        if not sol.optimal:
            raise LpInfeasible(f"quantile regression LP returned {sol.status}")
        coef = sol.duals
    else:
        # min q.u+ + (1-q).u-  s.t.  design.beta + u+ - u- = c
        eye = np.eye(n)
        A = np.hstack([design, eye, -eye])
        cost = np.concatenate([np.zeros(k), np.full(n, q), np.full(n, 1.0 - q)])
        lo = np.concatenate([np.full(k, -INF), np.zeros(2 * n)])
        sol = solve(LinearProgram(cost, A, ("=",) * n, c, lo, INF, "min"), method=method)
        if not sol.optimal:
            raise LpInfeasible(f"quantile regression LP returned {sol.status}")
        coef = sol.x[:k]
    if with_slope:
        return float(coef[1]), float(coef[0])
    return 0.0, float(coef[0])


def pinball_loss(points, q: float, slope: float, intercept: float) -> float:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    r = pts[:, 1] - (slope * pts[:, 0] + intercept)
    return float(np.sum(np.maximum(q * r, (q - 1.0) * r)))


@dataclass(frozen=True)
class QuantileFan:
    levels: np.ndarray
    slopes: np.ndarray       # (96, 21)
    intercepts: np.ndarray   # (96, 21)

    def nodes(self, forecast) -> np.ndarray:
        """Sorted conditional quantiles per quarter-hour, clipped to [0, 1]."""
        forecast = np.asarray(forecast, dtype=float)
        hours = np.arange(self.slopes.shape[0]) // 4
        raw = self.intercepts + self.slopes * forecast[hours][:, None]
        return np.clip(np.sort(raw, axis=1), 0.0, 1.0)


@dataclass(frozen=True)
class CopulaModel:
    fan: QuantileFan
    correlation: np.ndarray
    cholesky_factor: np.ndarray
    jitter: float = JITTER

    def to_dict(self) -> dict:
        return {
            "kind": "copula",
            "levels": self.fan.levels.tolist(),
            "slopes": self.fan.slopes.tolist(),
            "intercepts": self.fan.intercepts.tolist(),
            "correlation": self.correlation.tolist(),
            "jitter": self.jitter,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "CopulaModel":
        if raw.get("kind", "copula") != "copula":
            raise ValueError(f"not a copula model: kind={raw.get('kind')!r}")
        fan = QuantileFan(np.array(raw["levels"], dtype=float),
                          np.array(raw["slopes"], dtype=float),
                          np.array(raw["intercepts"], dtype=float))
        corr = np.array(raw["correlation"], dtype=float)
        return from_parts(fan, corr, float(raw.get("jitter", JITTER)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "CopulaModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def from_parts(fan: QuantileFan, correlation, jitter: float = JITTER) -> CopulaModel:
    corr = np.array(correlation, dtype=float)
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    eye = np.eye(corr.shape[0])
    while True:
        try:
            chol = np.linalg.cholesky(corr + jitter * eye)
            break
        except np.linalg.LinAlgError:
            if jitter > 1e-3:
                raise
            jitter *= 10.0
    return CopulaModel(fan, corr, chol, jitter)


def conditional_cdf(model: CopulaModel, t: int, forecast, value):
    """Piecewise-linear CDF at quarter-hour ``t`` (zero-based) given the forecast."""
    nodes = model.fan.nodes(forecast)[t]
    return np.interp(value, nodes, model.fan.levels, left=0.0, right=1.0)


def inverse_cdf(model: CopulaModel, t: int, forecast, u):
    nodes = model.fan.nodes(forecast)[t]
    return np.interp(u, model.fan.levels, nodes)


def fit_fan(capacity: np.ndarray, forecast: np.ndarray, levels: Sequence[float] = LEVELS,
            method: str = "highs") -> QuantileFan:
    n_steps = capacity.shape[1]
    levels = np.asarray(levels, dtype=float)
    slopes = np.zeros((n_steps, levels.size))
    intercepts = np.zeros((n_steps, levels.size))
    for t in range(n_steps):
        f = forecast[:, hour_of_step(t)]
        c = capacity[:, t]
        pts = np.column_stack([f, c])
        for j, q in enumerate(levels):
            if q <= 0.0:
                intercepts[t, j] = c.min()
            elif q >= 1.0:
                intercepts[t, j] = c.max()
            else:
                slopes[t, j], intercepts[t, j] = fit_pinball(pts, q, method=method)
    return QuantileFan(levels, slopes, intercepts)


def normal_scores(fan: QuantileFan, capacity: np.ndarray, forecast: np.ndarray) -> np.ndarray:
    scores = np.empty_like(capacity, dtype=float)
    for i, (cap, fc) in enumerate(zip(capacity, forecast)):
        nodes = fan.nodes(fc)
        u = np.array([np.interp(cap[t], nodes[t], fan.levels, left=0.0, right=1.0)
                      for t in range(capacity.shape[1])])
        scores[i] = ndtri(np.clip(u, UNIFORM_CLIP, 1.0 - UNIFORM_CLIP))
    return scores


def fit(dataset: Dataset, method: str = "highs") -> CopulaModel:
    capacity = dataset.capacity_matrix("train")
    forecast = dataset.forecast_matrix("train")
    if capacity.shape[0] < MIN_TRAIN_DAYS:
        raise InsufficientData(f"copula fit needs >= {MIN_TRAIN_DAYS} training days")
    return fit_arrays(capacity, forecast, method=method)


def fit_arrays(capacity, forecast, method: str = "highs") -> CopulaModel:
    capacity = np.asarray(capacity, dtype=float)
    forecast = np.asarray(forecast, dtype=float)
    # canonical row order: LP solutions and sums then do not depend on day order
    order = np.lexsort(np.column_stack([capacity, forecast]).T[::-1])
    capacity, forecast = capacity[order], forecast[order]
    fan = fit_fan(capacity, forecast, method=method)
    scores = normal_scores(fan, capacity, forecast)
    sd = scores.std(axis=0)
    centered = scores - scores.mean(axis=0)
    cov = centered.T @ centered / scores.shape[0]
    denom = np.outer(sd, sd)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 0, cov / denom, 0.0)
    corr = np.clip(corr, -1.0, 1.0)
    return from_parts(fan, corr)


def sample_array(model: CopulaModel, y, n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    dim = model.cholesky_factor.shape[0]
    z = rng.standard_normal((n, dim)) @ model.cholesky_factor.T
    u = ndtr(z)
    nodes = model.fan.nodes(y)
    out = np.empty_like(u)
    for t in range(dim):
        out[:, t] = np.interp(u[:, t], model.fan.levels, nodes[t])
    return out


def sample(model: CopulaModel, y, n: int, seed: int) -> ScenarioSet:
    return ScenarioSet(sample_array(model, y, n, seed), "copula",
                       condition=np.asarray(y, dtype=float))
