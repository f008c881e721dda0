"""Small dense tanh networks with hand-written backprop and an Adam optimizer.

Parameters are exposed as a flat list ``[W0, b0, W1, b1, ...]`` with weight
matrices shaped ``(fan_out, fan_in)``; gradients use the same ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .errors import DimensionMismatch, ShapeMismatch, StaleCache


@dataclass
class Mlp:
    layer_sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    version: int = 0

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeMismatch("one weight matrix and bias per layer transition")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if w.shape != shape or b.shape != (shape[0],):
                raise ShapeMismatch(f"layer {i}: expected {shape}, got {w.shape}/{b.shape}")

    def parameters(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        self.weights = [np.array(p, dtype=float) for p in params[0::2]]
        self.biases = [np.array(p, dtype=float) for p in params[1::2]]
        self.version += 1

    def copy(self) -> "Mlp":
        return Mlp(list(self.layer_sizes), [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases])

    def to_dict(self) -> dict:
        return {
            "layer_sizes": self.layer_sizes,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Mlp":
        sizes = [int(s) for s in raw["layer_sizes"]]
        weights = [np.array(w, dtype=float).reshape(sizes[i + 1], sizes[i])
                   for i, w in enumerate(raw["weights"])]
        biases = [np.array(b, dtype=float).reshape(sizes[i + 1]) for i, b in enumerate(raw["biases"])]
        return cls(sizes, weights, biases)


def init_mlp(layer_sizes: Sequence[int], rng: np.random.Generator, zero_last: bool = False) -> Mlp:
    """Glorot-uniform weights, zero biases; optionally a zero output layer."""
    weights, biases = [], []
    n = len(layer_sizes) - 1
    for i in range(n):
        fan_in, fan_out = layer_sizes[i], layer_sizes[i + 1]
        if zero_last and i == n - 1:
            w = np.zeros((fan_out, fan_in))
        else:
            a = np.sqrt(6.0 / (fan_in + fan_out)) if fan_in + fan_out else 0.0
            w = rng.uniform(-a, a, size=(fan_out, fan_in))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return Mlp(list(layer_sizes), weights, biases)


def forward(mlp: Mlp, x):
    """Evaluate the network on a vector or a batch of row vectors.

    Returns ``(output, cache)``; hidden layers use tanh, the last is linear.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[-1] != mlp.layer_sizes[0]:
        raise DimensionMismatch(f"expected input width {mlp.layer_sizes[0]}, got {h.shape[-1]}")
    inputs, pre = [], []
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        inputs.append(h)
        a = h @ w.T + b
        pre.append(a)
        h = np.tanh(a) if i < last else a
    cache = {"inputs": inputs, "pre": pre, "single": single, "version": mlp.version}
    return (h[0] if single else h), cache


def backward(mlp: Mlp, cache: dict, grad_out):
    """Gradients of ``sum(grad_out * output)`` w.r.t. parameters and input.

    Parameter gradients are summed over the batch.
    """
    if cache.get("version") != mlp.version:
        raise StaleCache("parameters changed since the forward pass")
    g = np.asarray(grad_out, dtype=float)
    if cache["single"]:
        g = g[None, :]
    if g.shape != cache["pre"][-1].shape:
        raise DimensionMismatch("output gradient does not match cached output")
    n = len(mlp.weights)
    grads: List[np.ndarray] = [None] * (2 * n)
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            g = g * (1.0 - np.tanh(cache["pre"][i]) ** 2)
        grads[2 * i] = g.T @ cache["inputs"][i]
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ mlp.weights[i]
    return grads, (g[0] if cache["single"] else g)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_update(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> List[np.ndarray]:
    """One bias-corrected Adam step over a flat parameter list."""
    if len(params) != len(grads):
        raise ShapeMismatch("gradient list length differs from parameter list")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ShapeMismatch(f"gradient shape {np.shape(g)} != parameter shape {np.shape(p)}")
    if not state.m:
        state.m = [np.zeros_like(p, dtype=float) for p in params]
        state.v = [np.zeros_like(p, dtype=float) for p in params]
    elif len(state.m) != len(params) or any(m.shape != np.shape(p) for m, p in zip(state.m, params)):
        raise ShapeMismatch("optimizer moments do not match parameters")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        out.append(p - state.lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps))
    return out


def adam_step(mlp: Mlp, grads: Sequence[np.ndarray], state: AdamState):
    mlp.set_parameters(adam_update(mlp.parameters(), grads, state))
    return mlp, state
