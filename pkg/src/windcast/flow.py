"""Conditional RealNVP flow operating in PCA coordinates.

The forward map T takes a standard-normal latent ``z`` and the standardized
forecast ``y`` to PCA coordinates ``u``; each coupling layer keeps one half of
the vector fixed and scales/shifts the other half with conditioner networks
fed by the fixed half and ``y``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import pca as pca_mod
from .data import Dataset, ScenarioSet
from .errors import DimensionMismatch, DivergedLoss, InsufficientData, NonFiniteOutput
from .neural import AdamState, Mlp, adam_update, backward, forward, init_mlp

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_S_CLAMP = 5.0
DEFAULT_HIDDEN = (9, 9)
DEFAULT_LAYERS = 4


@dataclass
class CouplingLayer:
    parity: int
    latent_dim: int
    s_net: Mlp
    t_net: Mlp
    s_clamp: float = DEFAULT_S_CLAMP

    def __post_init__(self):
        n_trans = len(self.trans_idx)
        if self.s_net.layer_sizes[-1] != n_trans or self.t_net.layer_sizes[-1] != n_trans:
            raise DimensionMismatch("conditioner outputs must match the transformed half")
        if self.s_net.layer_sizes[0] != self.t_net.layer_sizes[0]:
            raise DimensionMismatch("s and t conditioners must share their input")

    @property
    def split(self) -> int:
        return self.latent_dim // 2

    @property
    def pass_idx(self) -> np.ndarray:
        d, k = self.split, self.latent_dim
        return np.arange(d) if self.parity == 0 else np.arange(d, k)

    @property
    def trans_idx(self) -> np.ndarray:
        d, k = self.split, self.latent_dim
        return np.arange(d, k) if self.parity == 0 else np.arange(d)

    @property
    def cond_dim(self) -> int:
        return self.s_net.layer_sizes[0] - len(self.pass_idx)

    def clamp(self, raw):
        """Bound the log-scale to ``[-s_clamp, s_clamp]``."""
        return np.clip(raw, -self.s_clamp, self.s_clamp)

    def conditioners(self, fixed, y):
        h = np.concatenate([fixed, y], axis=1)
        raw, s_cache = forward(self.s_net, h)
        t, t_cache = forward(self.t_net, h)
        return raw, self.clamp(raw), t, s_cache, t_cache

    def to_dict(self) -> dict:
        return {
            "parity": self.parity,
            "latent_dim": self.latent_dim,
            "s_clamp": self.s_clamp,
            "s_net": self.s_net.to_dict(),
            "t_net": self.t_net.to_dict(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "CouplingLayer":
        return cls(int(raw["parity"]), int(raw["latent_dim"]), Mlp.from_dict(raw["s_net"]),
                   Mlp.from_dict(raw["t_net"]), float(raw["s_clamp"]))


def _as_batch(u, y):
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    single = u.ndim == 1
    if single:
        u = u[None, :]
    if y.ndim == 1:
        y = np.broadcast_to(y, (u.shape[0], y.shape[0]))
    return u, y, single


def layer_forward(layer: CouplingLayer, u, y):
    """Apply one coupling layer (latent side to data side).

    ``y`` must already be standardized. Returns ``(v, log_det)``.
    """
    u, y, single = _as_batch(u, y)
    if u.shape[1] != layer.latent_dim or y.shape[1] != layer.cond_dim:
        raise DimensionMismatch("latent or conditional input has the wrong width")
    p, q = layer.pass_idx, layer.trans_idx
    _, s, t, _, _ = layer.conditioners(u[:, p], y)
    v = u.copy()
    v[:, q] = u[:, q] * np.exp(s) + t
    if not np.isfinite(v).all():
        raise NonFiniteOutput("coupling layer produced non-finite values")
    log_det = s.sum(axis=1)
    return (v[0], float(log_det[0])) if single else (v, log_det)


def layer_inverse(layer: CouplingLayer, v, y):
    """Exact inverse of :func:`layer_forward`; its log-det is the negated one."""
    v, y, single = _as_batch(v, y)
    if v.shape[1] != layer.latent_dim or y.shape[1] != layer.cond_dim:
        raise DimensionMismatch("latent or conditional input has the wrong width")
    p, q = layer.pass_idx, layer.trans_idx
    _, s, t, _, _ = layer.conditioners(v[:, p], y)
    u = v.copy()
    u[:, q] = (v[:, q] - t) * np.exp(-s)
    if not np.isfinite(u).all():
        raise NonFiniteOutput("coupling layer inverse produced non-finite values")
    log_det = -s.sum(axis=1)
    return (u[0], float(log_det[0])) if single else (u, log_det)


@dataclass
class FlowModel:
    layers: List[CouplingLayer]
    pca: pca_mod.PcaModel
    forecast_mean: np.ndarray
    forecast_std: np.ndarray
    metadata: Optional[dict] = None

    def __post_init__(self):
        self.forecast_mean = np.asarray(self.forecast_mean, dtype=float)
        self.forecast_std = np.asarray(self.forecast_std, dtype=float)
        if (self.forecast_std <= 0).any():
            raise ValueError("forecast_std entries must be > 0")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.parity == b.parity:
                raise ValueError("coupling layer masks must alternate")
        for layer in self.layers:
            if layer.latent_dim != self.latent_dim:
                raise DimensionMismatch("layer latent size differs from the PCA size")

    @property
    def latent_dim(self) -> int:
        return self.pca.n_components

    @property
    def cond_dim(self) -> int:
        return self.forecast_mean.shape[0]

    @property
    def s_clamp(self) -> float:
        return self.layers[0].s_clamp if self.layers else DEFAULT_S_CLAMP

    def standardize(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.cond_dim:
            raise DimensionMismatch(f"expected {self.cond_dim} conditional inputs, got {y.shape[-1]}")
        return (y - self.forecast_mean) / self.forecast_std

    def copy(self) -> "FlowModel":
        return FlowModel.from_dict(self.to_dict())

    def to_dict(self) -> dict:
        return {
            "kind": "flow",
            "latent_dim": self.latent_dim,
            "s_clamp": self.s_clamp,
            "pca": self.pca.to_dict(),
            "forecast_mean": self.forecast_mean.tolist(),
            "forecast_std": self.forecast_std.tolist(),
            "layers": [layer.to_dict() for layer in self.layers],
            "metadata": self.metadata or {},
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "FlowModel":
        if raw.get("kind", "flow") != "flow":
            raise ValueError(f"not a flow model: kind={raw.get('kind')!r}")
        return cls(
            [CouplingLayer.from_dict(l) for l in raw["layers"]],
            pca_mod.PcaModel.from_dict(raw["pca"]),
            np.array(raw["forecast_mean"], dtype=float),
            np.array(raw["forecast_std"], dtype=float),
            dict(raw.get("metadata") or {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "FlowModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_layers(latent_dim: int, cond_dim: int, rng: np.random.Generator,
                 n_layers: int = DEFAULT_LAYERS, hidden: Sequence[int] = DEFAULT_HIDDEN,
                 s_clamp: float = DEFAULT_S_CLAMP) -> List[CouplingLayer]:
    """Coupling layers whose output layers start at zero (identity flow)."""
    layers = []
    d = latent_dim // 2
    for i in range(n_layers):
        parity = i % 2
        n_pass = d if parity == 0 else latent_dim - d
        sizes = [n_pass + cond_dim, *hidden, latent_dim - n_pass]
        layers.append(CouplingLayer(parity, latent_dim, init_mlp(sizes, rng, zero_last=True),
                                    init_mlp(sizes, rng, zero_last=True), s_clamp))
    return layers


def init_flow_from_arrays(X, Y, seed: int = 0, evr_target: float = pca_mod.DEFAULT_EVR_TARGET,
                          n_layers: int = DEFAULT_LAYERS, hidden: Sequence[int] = DEFAULT_HIDDEN,
                          s_clamp: float = DEFAULT_S_CLAMP) -> FlowModel:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape[0] < 2 or Y.shape[0] != X.shape[0]:
        raise InsufficientData("need at least two paired training rows")
    pca_model = pca_mod.fit(X, evr_target)
    std = Y.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    rng = np.random.default_rng(seed)
    layers = build_layers(pca_model.n_components, Y.shape[1], rng, n_layers, hidden, s_clamp)
    return FlowModel(layers, pca_model, Y.mean(axis=0), std)


def init_flow(dataset: Dataset, seed: int = 0, **kwargs) -> FlowModel:
    """Identity-initialized flow with PCA and forecast scaling fitted on the train split."""
    return init_flow_from_arrays(dataset.capacity_matrix("train"),
                                 dataset.forecast_matrix("train"), seed=seed, **kwargs)


def latent_forward(model: FlowModel, z, y_std):
    """Run all layers from latent to PCA coordinates; returns ``(u, log_det)``."""
    u = np.asarray(z, dtype=float)
    total = np.zeros(u.shape[0]) if u.ndim == 2 else 0.0
    for layer in model.layers:
        u, ld = layer_forward(layer, u, y_std)
        total = total + ld
    return u, total


def latent_inverse(model: FlowModel, u, y_std):
    """Run all layers backwards from PCA coordinates to the latent."""
    z = np.asarray(u, dtype=float)
    total = np.zeros(z.shape[0]) if z.ndim == 2 else 0.0
    for layer in reversed(model.layers):
        z, ld = layer_inverse(layer, z, y_std)
        total = total + ld
    return z, total


def std_normal_logpdf(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return -0.5 * np.sum(z * z, axis=-1) - 0.5 * z.shape[-1] * LOG_2PI


def log_prob_latent(model: FlowModel, u, y_std):
    z, ld = latent_inverse(model, u, y_std)
    return std_normal_logpdf(z) + ld


def log_prob(model: FlowModel, x, y):
    """Conditional log-density of ``x`` given forecast ``y``, in PCA coordinates."""
    u = pca_mod.transform(model.pca, x)
    return log_prob_latent(model, u, model.standardize(y))


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


def flow_parameters(model: FlowModel) -> List[np.ndarray]:
    params = []
    for layer in model.layers:
        params.extend(layer.s_net.parameters())
        params.extend(layer.t_net.parameters())
    return params


def set_flow_parameters(model: FlowModel, params: Sequence[np.ndarray]) -> None:
    i = 0
    for layer in model.layers:
        for net in (layer.s_net, layer.t_net):
            n = len(net.parameters())
            net.set_parameters(params[i:i + n])
            i += n


def nll_and_grads(model: FlowModel, U, Y_std):
    """Mean negative log-likelihood over a batch and its parameter gradients.

    ``U`` holds PCA coordinates and ``Y_std`` standardized forecasts, one row
    per sample. Gradients follow the ordering of :func:`flow_parameters`.
    """
    U = np.asarray(U, dtype=float)
    Y_std = np.asarray(Y_std, dtype=float)
    n = U.shape[0]
    records = []
    v = U
    sum_s = np.zeros(n)
    for layer in reversed(model.layers):
        p, q = layer.pass_idx, layer.trans_idx
        raw, s, t, s_cache, t_cache = layer.conditioners(v[:, p], Y_std)
        e = np.exp(-s)
        b = (v[:, q] - t) * e
        u = v.copy()
        u[:, q] = b
        sum_s += s.sum(axis=1)
        records.append((layer, raw, e, b, s_cache, t_cache))
        v = u
    z = v
    nll = 0.5 * np.sum(z * z, axis=1) + 0.5 * z.shape[1] * LOG_2PI + sum_s
    loss = float(nll.mean())

    g = z / n
    layer_grads = {}
    for layer, raw, e, b, s_cache, t_cache in reversed(records):
        p, q = layer.pass_idx, layer.trans_idx
        g_b = g[:, q]
        g_t = -g_b * e
        g_s = -g_b * b + 1.0 / n
        g_raw = np.where(np.abs(raw) < layer.s_clamp, g_s, 0.0)
        s_grads, h_s = backward(layer.s_net, s_cache, g_raw)
        t_grads, h_t = backward(layer.t_net, t_cache, g_t)
        g_v = np.empty_like(g)
        g_v[:, p] = g[:, p] + (h_s + h_t)[:, :len(p)]
        g_v[:, q] = g_b * e
        layer_grads[id(layer)] = s_grads + t_grads
        g = g_v
    grads = []
    for layer in model.layers:
        grads.extend(layer_grads[id(layer)])
    return loss, grads


def train_arrays(model: FlowModel, U, Y_std, epochs: int = 1000, batch_size: Optional[int] = None,
                 seed: int = 0, lr: float = 1e-3, patience: int = 100, min_delta: float = 1e-5,
                 callback=None):
    """Adam on the mean NLL. Returns ``(trained_copy, per_epoch_mean_nll)``."""
    model = model.copy()
    U = np.asarray(U, dtype=float)
    Y_std = np.asarray(Y_std, dtype=float)
    n = U.shape[0]
    if n < 2:
        raise InsufficientData("need at least two training samples")
    batch = n if not batch_size or batch_size >= n else int(batch_size)
    rng = np.random.default_rng(seed)
    state = AdamState(lr=lr)
    params = flow_parameters(model)
    trace: List[float] = []
    best, stale = math.inf, 0
    for epoch in range(epochs):
        order = rng.permutation(n) if batch < n else np.arange(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, grads = nll_and_grads(model, U[idx], Y_std[idx])
            if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads):
                raise DivergedLoss(f"non-finite NLL at epoch {epoch}")
            total += loss * len(idx)
            params = adam_update(params, grads, state)
            set_flow_parameters(model, params)
        epoch_loss = total / n
        trace.append(epoch_loss)
        if callback is not None:
            callback(epoch, epoch_loss)
        if epoch_loss < best - min_delta:
            best, stale = epoch_loss, 0
        else:
            stale += 1
            if stale >= patience:
                log.info("early stop at epoch %d (nll %.5f)", epoch, epoch_loss)
                break
    return model, trace


def train(model: FlowModel, dataset: Dataset, epochs: int = 1000, batch_size: Optional[int] = None,
          seed: int = 0, **kwargs):
    """Fit the flow to the train partition of ``dataset``."""
    X = dataset.capacity_matrix("train")
    if X.shape[0] < 2:
        raise InsufficientData("need at least two training days")
    U = pca_mod.transform(model.pca, X)
    Y = model.standardize(dataset.forecast_matrix("train"))
    return train_arrays(model, U, Y, epochs=epochs, batch_size=batch_size, seed=seed, **kwargs)


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------


def sample_array(model: FlowModel, y, n: int, seed: int, clamp: bool = True,
                 reject: bool = False, max_rounds: int = 100) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    y_std = model.standardize(y)

    def draw(m):
        z = rng.standard_normal((m, model.latent_dim))
        u, _ = latent_forward(model, z, y_std)
        return pca_mod.inverse_transform(model.pca, u)

    if not reject:
        x = draw(n)
        return np.clip(x, 0.0, 1.0) if clamp else x
    kept = []
    count = 0
    for _ in range(max_rounds):
        x = draw(n)
        ok = x[((x >= 0.0) & (x <= 1.0)).all(axis=1)]
        kept.append(ok)
        count += ok.shape[0]
        if count >= n:
            return np.concatenate(kept)[:n]
    raise NonFiniteOutput(f"rejection sampling accepted only {count} of {n} scenarios")


def sample(model: FlowModel, y, n: int, seed: int, clamp: bool = True,
           reject: bool = False) -> ScenarioSet:
    """Draw ``n`` scenarios for the forecast ``y``.

    ``clamp`` clips values into [0, 1]; ``reject`` instead redraws scenarios
    that leave the interval, keeping exactly ``n`` rows.
    """
    x = sample_array(model, y, n, seed, clamp=clamp, reject=reject)
    return ScenarioSet(x, "flow", condition=np.asarray(y, dtype=float))
