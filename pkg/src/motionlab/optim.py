"""First-order adaptive-moment optimizer with warmup/cosine/clipping knobs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import TapeTensor

__all__ = ["OptimizerConfig", "Adam"]


@dataclass
class OptimizerConfig:
    """Update-rule knobs; cosine_total=None disables the cosine schedule."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 1.0
    warmup: int = 0
    cosine_total: int | None = None


class Adam:
    """Adaptive-moment updates over a named parameter dict.

    Parameters are replaced with fresh leaf tensors on every step (values
    stay immutable); moment state is keyed by parameter name so it
    survives the replacement.
    """

    def __init__(self, params: dict[str, TapeTensor], cfg: OptimizerConfig | None = None):
        self.params = params
        self.cfg = cfg or OptimizerConfig()
        self.t = 0
        self._m = {k: np.zeros_like(p.values) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.values) for k, p in params.items()}

    def current_lr(self) -> float:
        cfg = self.cfg
        lr = cfg.lr
        step = self.t + 1
        if cfg.warmup > 0 and step <= cfg.warmup:
            lr *= step / cfg.warmup
        if cfg.cosine_total:
            frac = min(1.0, step / cfg.cosine_total)
            lr *= 0.5 * (1.0 + np.cos(np.pi * frac))
        return lr

    def step(self, grads: dict[int, np.ndarray]) -> float:
        """Apply one update from a uid-keyed gradient map; returns the
        pre-clip global gradient norm of this parameter set."""
        cfg = self.cfg
        gnorm = 0.0
        per_param: dict[str, np.ndarray] = {}
        for name, p in self.params.items():
            g = grads.get(p.uid)
            if g is None:
                continue
            per_param[name] = g
            gnorm += float(np.sum(g * g))
        gnorm = float(np.sqrt(gnorm))

        scale = 1.0
        if cfg.clip_norm is not None and gnorm > cfg.clip_norm > 0:
            scale = cfg.clip_norm / gnorm

        lr = self.current_lr()
        self.t += 1
        b1, b2 = cfg.beta1, cfg.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, g in per_param.items():
            g = g * scale
            m = self._m[name] = b1 * self._m[name] + (1.0 - b1) * g
            v = self._v[name] = b2 * self._v[name] + (1.0 - b2) * g * g
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            self.params[name] = ad.parameter(self.params[name].values - update)
        return gnorm
