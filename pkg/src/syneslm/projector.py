"""MLP that maps a precomputed visual feature onto one LM embedding vector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, NonFiniteInput

SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))


def gelu(u):
    return 0.5 * u * (1.0 + np.tanh(SQRT_2_OVER_PI * (u + 0.044715 * u * u * u)))


def gelu_grad(u):
    t = np.tanh(SQRT_2_OVER_PI * (u + 0.044715 * u * u * u))
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * u * u)


_ACTIVATIONS = {"gelu": (gelu, gelu_grad), "none": (lambda u: u, lambda u: np.ones_like(u))}


@dataclass
class ProjectorParams:
    """Layer list of (weight, bias); activation applies between layers, not after the last."""

    layers: list
    activation: str = "gelu"

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    @classmethod
    def init(cls, in_dim, out_dim, hidden=None, depth=2, seed=0, std=0.02, dtype=np.float32):
        rng = np.random.default_rng(seed)
        hidden = hidden or out_dim
        dims = [in_dim] + [hidden] * (depth - 1) + [out_dim]
        layers = [
            ((rng.standard_normal((a, b)) * std).astype(dtype), np.zeros(b, dtype=dtype))
            for a, b in zip(dims, dims[1:])
        ]
        return cls(layers)

    def named(self, prefix="proj") -> dict:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"{prefix}.{i}.w"] = w
            out[f"{prefix}.{i}.b"] = b
        return out

    @classmethod
    def from_named(cls, params: dict, prefix="proj", activation="gelu") -> "ProjectorParams":
        layers = []
        i = 0
        while f"{prefix}.{i}.w" in params:
            layers.append((params[f"{prefix}.{i}.w"], params[f"{prefix}.{i}.b"]))
            i += 1
        return cls(layers, activation)


def _check(params: ProjectorParams, feature) -> np.ndarray:
    x = np.asarray(feature)
    if x.shape[-1] != params.in_dim:
        raise DimMismatch(f"feature dim {x.shape[-1]} != projector in_dim {params.in_dim}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("visual feature contains NaN or inf")
    return x.astype(params.layers[0][0].dtype, copy=False)


def project_with_cache(params: ProjectorParams, feature):
    """Forward pass over a feature vector or a (n, in_dim) batch."""
    act, _ = _ACTIVATIONS[params.activation]
    h = _check(params, feature)
    cache = []
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        pre = h @ w + b
        cache.append((h, pre))
        h = act(pre) if i < last else pre
    return h, cache


def project(params: ProjectorParams, feature) -> np.ndarray:
    return project_with_cache(params, feature)[0]


def project_backward(params: ProjectorParams, cache, upstream):
    """Backprop ``upstream`` (dL/d output) through the projector.

    Returns (list of (dW, db), d input).
    """
    _, act_grad = _ACTIVATIONS[params.activation]
    g = np.asarray(upstream, dtype=params.layers[0][0].dtype)
    grads = [None] * len(params.layers)
    last = len(params.layers) - 1
    for i in range(last, -1, -1):
        w, _ = params.layers[i]
        h, pre = cache[i]
        if i < last:
            g = g * act_grad(pre)
        if g.ndim == 1:
            grads[i] = (np.outer(h, g), g.copy())
        else:
            grads[i] = (h.T @ g, g.sum(axis=0))
        g = g @ w.T
    return grads, g


def project_grad(params: ProjectorParams, feature, upstream):
    out, cache = project_with_cache(params, feature)
    if np.shape(upstream) != out.shape:
        raise DimMismatch(f"upstream shape {np.shape(upstream)} != output shape {out.shape}")
    return project_backward(params, cache, upstream)
