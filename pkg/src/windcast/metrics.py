"""Scenario-quality metrics: KDE, Q-Q points, Welch PSD, energy score,
per-timestep quantile curves and stability statistics.

Everything here is a pure function of its inputs. ``write_*`` helpers emit
CSV for external plotting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, Iterable, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .data import ScenarioSet
from .errors import DegenerateData, DimensionMismatch, TooFewInstances, TooShort

KDE_GRID_POINTS = 512
WELCH_SEGMENT = 32
WELCH_OVERLAP = 0.5


def silverman_bandwidth(values) -> float:
    """``0.9 * min(std, IQR / 1.34) * n**(-1/5)``.

    The sample standard deviation (ddof=1) is used; when the IQR is zero but
    the spread is not, the standard deviation alone sets the scale.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size < 2:
        raise DegenerateData("KDE needs at least two samples")
    sd = x.std(ddof=1)
    if sd == 0.0:
        raise DegenerateData("all samples are equal")
    q75, q25 = np.percentile(x, [75, 25])
    iqr = (q75 - q25) / 1.34
    scale = min(sd, iqr) if iqr > 0 else sd
    return 0.9 * scale * x.size ** (-0.2)


def kde_pdf(values, eval_points, bandwidth: float = None) -> np.ndarray:
    """Gaussian kernel density estimate evaluated at ``eval_points``."""
    x = np.asarray(values, dtype=float).ravel()
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    pts = np.asarray(eval_points, dtype=float)
    z = (pts.reshape(-1, 1) - x[None, :]) / h
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (x.size * h * np.sqrt(2.0 * np.pi))
    return dens.reshape(pts.shape)


def kde_grid(values, n_points: int = KDE_GRID_POINTS):
    """KDE on an evenly spaced grid over ``[min - 3h, max + 3h]``."""
    x = np.asarray(values, dtype=float).ravel()
    h = silverman_bandwidth(x)
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, n_points)
    return grid, kde_pdf(x, grid, h)


def qq_points(sample_a, sample_b, levels) -> np.ndarray:
    """Rows ``(quantile_a, quantile_b)`` at each level (linear interpolation)."""
    a = np.asarray(sample_a, dtype=float).ravel()
    b = np.asarray(sample_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("Q-Q samples must be nonempty")
    levels = np.asarray(levels, dtype=float)
    return np.column_stack([np.quantile(a, levels), np.quantile(b, levels)])


@dataclass(frozen=True)
class PsdEstimate:
    frequencies: np.ndarray   # cycles per time step, 0 .. 0.5
    power: np.ndarray
    n_segments: int = 0


def hann(n: int, periodic: bool = True) -> np.ndarray:
    m = n if periodic else n - 1
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / m)


def welch_psd(series, segment_length: int = WELCH_SEGMENT, overlap_fraction: float = WELCH_OVERLAP,
              window: str = "hann") -> PsdEstimate:
    """One-sided Welch power spectral density (density scaling, unit sample rate).

    ``sum(power) * df`` approximates the mean square of the series, where
    ``df = 1 / segment_length``. ``window`` is ``"hann"`` (default) or
    ``"boxcar"``.
    """
    x = np.asarray(series, dtype=float).ravel()
    L = int(segment_length)
    if L < 2 or L & (L - 1):
        raise ValueError("segment_length must be a power of two >= 2")
    if x.size < L:
        raise TooShort(f"series of length {x.size} shorter than segment {L}")
    if not 0.0 <= overlap_fraction < 1.0:
        raise ValueError("overlap_fraction must lie in [0, 1)")
    if window == "hann":
        w = hann(L)
    elif window == "boxcar":
        w = np.ones(L)
    else:
        raise ValueError(f"unknown window {window!r}")
    step = max(1, L - int(round(overlap_fraction * L)))
    starts = range(0, x.size - L + 1, step)
    segs = np.stack([x[s:s + L] * w for s in starts])
    spec = np.abs(np.fft.rfft(segs, axis=1)) ** 2
    power = spec.mean(axis=0) / np.sum(w * w)
    power[1:-1] *= 2.0   # fold negative frequencies; DC and Nyquist appear once
    return PsdEstimate(np.fft.rfftfreq(L), power, len(segs))


def _as_matrix(scenarios) -> np.ndarray:
    arr = scenarios.scenarios if isinstance(scenarios, ScenarioSet) else scenarios
    arr = np.asarray(arr, dtype=float)
    return arr[None, :] if arr.ndim == 1 else arr


def energy_score(realization, scenarios) -> float:
    x = np.asarray(realization, dtype=float).ravel()
    S = _as_matrix(scenarios)
    if S.shape[0] < 1:
        raise DimensionMismatch("energy score needs at least one scenario")
    if S.shape[1] != x.size:
        raise DimensionMismatch(f"scenario length {S.shape[1]} != realization length {x.size}")
    n = S.shape[0]
    first = np.linalg.norm(S - x, axis=1).sum() / n
    second = pdist(S).sum() / (n * n) if n > 1 else 0.0  # pdist lists each pair once
    return float(first - second)


def quantile_trajectories(matrix, levels) -> np.ndarray:
    """Empirical quantiles across days for every timestep; shape ``(levels, steps)``."""
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2 or M.shape[0] == 0:
        raise ValueError("expected a nonempty (days, steps) matrix")
    return np.quantile(M, np.asarray(levels, dtype=float), axis=0)


@dataclass(frozen=True)
class StabilityStats:
    std: float
    spread: float
    n_days: int


@dataclass
class StabilityReport:
    """Per scenario-count average StD and max-min spread for one method."""
    method: str
    cells: Dict[int, StabilityStats] = field(default_factory=dict)

    def sizes(self):
        return sorted(self.cells)


def stability_stats(objectives: Sequence[Iterable[float]]) -> StabilityStats:
    """Average over days of the per-day sample StD and max-min spread."""
    stds, spreads = [], []
    for day in objectives:
        vals = np.asarray(list(day), dtype=float)
        if vals.size < 2:
            raise TooFewInstances("need at least two instances per day")
        scale = np.abs(vals).max()  # rescale so tiny values do not underflow
        stds.append(scale * (vals / scale).std(ddof=1) if scale > 0 else 0.0)
        spreads.append(vals.max() - vals.min())
    if not stds:
        raise TooFewInstances("no days given")
    return StabilityStats(float(np.mean(stds)), float(np.mean(spreads)), len(stds))


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_psd_csv(path, est: PsdEstimate) -> None:
    _write_rows(path, ["frequency", "power"], zip(est.frequencies, est.power))


def write_qq_csv(path, levels, points) -> None:
    _write_rows(path, ["level", "quantile_a", "quantile_b"],
                ((lv, a, b) for lv, (a, b) in zip(levels, points)))


def write_kde_csv(path, grid, density) -> None:
    _write_rows(path, ["value", "density"], zip(grid, density))


def write_quantiles_csv(path, levels, curves) -> None:
    header = ["step"] + [f"q{lv:g}" for lv in levels]
    _write_rows(path, header, ([t] + list(curves[:, t]) for t in range(curves.shape[1])))


def write_es_csv(path, rows) -> None:
    """``rows``: iterable of ``(date, source, energy_score)``."""
    _write_rows(path, ["date", "source", "energy_score"], rows)
