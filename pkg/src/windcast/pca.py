"""Principal component analysis with component count picked by explained variance."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, RankDeficient

DEFAULT_EVR_TARGET = 0.9995


def jacobi_eigh(sym: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues sorted in
    descending order and eigenvectors as columns.
    """
    a = np.array(sym, dtype=float, copy=True)
    n = a.shape[0]
    if a.shape != (n, n):
        raise DimensionMismatch("matrix must be square")
    v = np.eye(n)
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300 or abs(apq) < tol * 1e-3 * scale:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    eig = np.diag(a).copy()
    order = np.argsort(-eig, kind="stable")
    return eig[order], v[:, order]


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    singular_values: np.ndarray
    explained_variance_ratio: np.ndarray
    total_variance: float = 0.0

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def n_features(self) -> int:
        return self.components.shape[1]

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "singular_values": self.singular_values.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
            "total_variance": self.total_variance,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "PcaModel":
        comps = np.array(raw["components"], dtype=float)
        if comps.ndim == 1:
            comps = comps.reshape(0, len(raw["mean"]))
        return cls(
            np.array(raw["mean"], dtype=float),
            comps,
            np.array(raw["singular_values"], dtype=float),
            np.array(raw["explained_variance_ratio"], dtype=float),
            float(raw.get("total_variance", 0.0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def fit(X, evr_target: float = DEFAULT_EVR_TARGET) -> PcaModel:
    """Fit PCA on the rows of ``X``.

    Keeps the smallest number of components whose cumulative explained
    variance ratio reaches ``evr_target``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DimensionMismatch("need an N x D matrix with N >= 2")
    if not np.isfinite(X).all():
        raise ValueError("non-finite entries in X")
    if not 0.0 < evr_target <= 1.0:
        raise ValueError("evr_target must lie in (0, 1]")
    n = X.shape[0]
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (n - 1)
    cov = 0.5 * (cov + cov.T)
    eig, vecs = jacobi_eigh(cov)
    eig = np.clip(eig, 0.0, None)
    total = eig.sum()
    if total <= 0.0:
        raise RankDeficient("X has zero total variance")
    ratio = eig / total
    cum = np.cumsum(ratio)
    k = int(np.searchsorted(cum, evr_target - 1e-12) + 1)
    k = min(max(k, 1), eig.size)

    comps = vecs[:, :k].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(
        mean=mean,
        components=comps,
        singular_values=np.sqrt(eig[:k] * (n - 1)),
        explained_variance_ratio=ratio[:k],
        total_variance=float(total),
    )


def transform(model: PcaModel, x) -> np.ndarray:
    """Project one vector (or rows of a matrix) onto the retained components."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.n_features:
        raise DimensionMismatch(f"expected {model.n_features} features, got {x.shape[-1]}")
    return (x - model.mean) @ model.components.T


def inverse_transform(model: PcaModel, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != model.n_components:
        raise DimensionMismatch(f"expected {model.n_components} coordinates, got {u.shape[-1]}")
    return model.mean + u @ model.components
