"""Small dense-network building blocks shared by the denoiser and reward model."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import TapeTensor

__all__ = [
    "init_dense",
    "dense",
    "sinusoidal_embedding",
    "one_hot",
    "l2_norm",
    "cosine",
    "global_norm",
]


def init_dense(rng: np.random.Generator, params: dict[str, TapeTensor],
               name: str, n_in: int, n_out: int, scale: float | None = None) -> None:
    """Register weight `name_W` and bias `name_b` with fan-in scaled init."""
    if scale is None:
        scale = 1.0 / np.sqrt(n_in)
    params[f"{name}_W"] = ad.parameter(rng.normal(0.0, scale, size=(n_in, n_out)))
    params[f"{name}_b"] = ad.parameter(np.zeros(n_out))


def dense(params: dict[str, TapeTensor], name: str, x: TapeTensor,
          weight: TapeTensor | None = None) -> TapeTensor:
    """x @ W + b; `weight` overrides the stored W (used for adapted layers)."""
    w = params[f"{name}_W"] if weight is None else weight
    return ad.matmul(x, w) + params[f"{name}_b"]


def sinusoidal_embedding(t: int | float, dim: int, max_period: float = 10_000.0) -> np.ndarray:
    """Fixed sin/cos position code for a scalar timestep; dim must be even."""
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    angles = t * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


def one_hot(index: int, size: int) -> np.ndarray:
    v = np.zeros(size)
    v[index] = 1.0
    return v


def l2_norm(x: TapeTensor, eps: float = 0.0) -> TapeTensor:
    """Euclidean norm of a vector tensor as a scalar tensor."""
    return ad.sqrt(ad.reduce_sum(x * x) + eps)


def cosine(a: TapeTensor, b: TapeTensor, min_norm: float = 1e-12) -> TapeTensor:
    """Cosine similarity of two vectors; rejects (near-)zero inputs."""
    na = float(np.linalg.norm(a.values))
    nb = float(np.linalg.norm(b.values))
    if na < min_norm or nb < min_norm:
        raise ValueError("cosine: zero-norm input")
    return ad.reduce_sum(a * b) / (l2_norm(a) * l2_norm(b))


def global_norm(grads: dict[int, np.ndarray], params: dict[str, TapeTensor]) -> float:
    """L2 norm over the gradients of the given parameter set."""
    total = 0.0
    for p in params.values():
        g = grads.get(p.uid)
        if g is not None:
            total += float(np.sum(g * g))
    return float(np.sqrt(total))
