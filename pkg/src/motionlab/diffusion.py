"""Toy denoising-diffusion model over flat motion arrays.

Timestep conventions used throughout the package:

* Schedule arrays are 0-indexed: ``beta[i]``, ``alpha[i]``,
  ``alpha_bar[i]`` for noise levels ``i in [0, T)``, with
  ``alpha_bar[0] == alpha[0]``.
* ``forward_noise`` and ``predict_clean`` take a level index
  ``i in [0, T)``.
* ``reverse_step`` takes the step number ``t in [1, T]`` and consumes
  schedule entry ``t - 1``; a full sampling pass applies it for
  ``t = T .. 1`` and yields the state list ``x_T .. x_0``.

The denoiser is conditioned on the level index via a fixed sinusoidal
code and on the discrete label via a learned table, so the same query
convention serves pre-training, sampling, and one-step prediction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import TapeTensor
from .optim import Adam, OptimizerConfig

__all__ = [
    "NoiseSchedule",
    "Denoiser",
    "Trajectory",
    "forward_noise",
    "reverse_step",
    "reverse_step_sg",
    "predict_clean",
    "sample",
    "pretrain_denoiser",
]


@dataclass
class NoiseSchedule:
    """Per-level beta/alpha/alpha_bar arrays defining the diffusion process."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.beta.shape != (self.T,):
            raise ValueError(f"beta must have shape ({self.T},), got {self.beta.shape}")
        if np.any(self.beta <= 0.0) or np.any(self.beta >= 1.0):
            raise ValueError("beta entries must lie strictly in (0, 1)")
        self.alpha = 1.0 - self.beta
        self.alpha_bar = np.cumprod(self.alpha)
        if np.any(np.diff(self.alpha_bar) >= 0.0):
            raise ValueError("alpha_bar must be strictly decreasing")

    @classmethod
    def linear(cls, T: int = 50, beta_start: float = 1e-4, beta_end: float = 2e-2) -> "NoiseSchedule":
        return cls(T=T, beta=np.linspace(beta_start, beta_end, T))


class Denoiser:
    """Two-layer tanh net predicting the injected noise for a flat motion.

    Input per row: flattened motion, sinusoidal level code, learned label
    embedding.  Output matches the motion shape.
    """

    def __init__(self, motion_shape: tuple[int, int], n_labels: int,
                 hidden: int = 64, time_dim: int = 16, cond_dim: int = 16,
                 seed: int = 0):
        self.motion_shape = tuple(motion_shape)
        self.n_flat = int(np.prod(motion_shape))
        self.n_labels = n_labels
        self.hidden = hidden
        self.time_dim = time_dim
        self.cond_dim = cond_dim
        rng = np.random.default_rng(seed)
        p: dict[str, TapeTensor] = {}
        nn.init_dense(rng, p, "w1", self.n_flat + time_dim + cond_dim, hidden)
        nn.init_dense(rng, p, "w2", hidden, self.n_flat)
        p["cond"] = ad.parameter(rng.normal(0.0, 0.1, size=(n_labels, cond_dim)))
        self.params = p

    def forward_rows(self, x_rows: TapeTensor, levels: np.ndarray,
                     labels: np.ndarray) -> TapeTensor:
        """Noise prediction for a batch of flattened motions (B, n_flat)."""
        batch = x_rows.shape[0]
        temb = np.stack([nn.sinusoidal_embedding(int(l), self.time_dim) for l in levels])
        hot = np.zeros((batch, self.n_labels))
        hot[np.arange(batch), np.asarray(labels, dtype=int)] = 1.0
        cemb = ad.matmul(ad.constant(hot), self.params["cond"])
        h = ad.concat([x_rows, ad.constant(temb), cemb], axis=1)
        a1 = ad.tanh(nn.dense(self.params, "w1", h))
        return nn.dense(self.params, "w2", a1)

    def predict(self, x: TapeTensor, level: int, label: int) -> TapeTensor:
        """Noise prediction for one motion shaped `motion_shape`."""
        if x.shape != self.motion_shape:
            raise ad.ShapeError(f"motion shape {x.shape} != {self.motion_shape}")
        row = ad.reshape(x, (1, self.n_flat))
        out = self.forward_rows(row, np.array([level]), np.array([label]))
        return ad.reshape(out, self.motion_shape)

    def copy(self, trainable: bool = True) -> "Denoiser":
        """Deep parameter copy; trainable=False freezes the clone."""
        twin = Denoiser.__new__(Denoiser)
        twin.motion_shape = self.motion_shape
        twin.n_flat = self.n_flat
        twin.n_labels = self.n_labels
        twin.hidden = self.hidden
        twin.time_dim = self.time_dim
        twin.cond_dim = self.cond_dim
        wrap = ad.parameter if trainable else ad.constant
        twin.params = {k: wrap(v.values.copy()) for k, v in self.params.items()}
        return twin

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.values for k, v in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            raise ValueError("checkpoint keys do not match this denoiser")
        for k, arr in arrays.items():
            if arr.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape}")
            self.params[k] = ad.parameter(arr.copy())


@dataclass
class Trajectory:
    """States x_T .. x_0 of one sampling pass (length T+1)."""

    states: list[np.ndarray]
    condition: int
    seed: int

    @property
    def x0(self) -> np.ndarray:
        return self.states[-1]

    def state_at_level(self, level: int) -> np.ndarray:
        """State x_level, with levels counted down from T to 0."""
        return self.states[len(self.states) - 1 - level]


def forward_noise(x0: np.ndarray, t: int, eps: np.ndarray,
                  schedule: NoiseSchedule) -> np.ndarray:
    """sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps at level t in [0, T)."""
    if not 0 <= t < schedule.T:
        raise ValueError(f"level {t} outside [0, {schedule.T})")
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} != motion shape {x0.shape}")
    abar = schedule.alpha_bar[t]
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def reverse_step(x_t: TapeTensor, t: int, c: int, schedule: NoiseSchedule,
                 denoiser: Denoiser, *, sg: bool = False, sde: bool = False,
                 rng: np.random.Generator | None = None) -> TapeTensor:
    """One deterministic posterior-mean step x_t -> x_{t-1} for t in [1, T].

    With sg=True the incoming state is detached first, so the output
    depends on the parameters only through this step's own noise
    prediction.  The optional sde flag adds sqrt(beta_t)*z noise on top
    of the deterministic step.
    """
    if not 1 <= t <= schedule.T:
        raise ValueError(f"step {t} outside [1, {schedule.T}]")
    i = t - 1
    x_in = ad.stop_gradient(x_t) if sg else x_t
    eps_hat = denoiser.predict(x_in, i, c)
    coef = schedule.beta[i] / np.sqrt(1.0 - schedule.alpha_bar[i])
    out = (x_in - coef * eps_hat) * (1.0 / np.sqrt(schedule.alpha[i]))
    if sde:
        if rng is None:
            raise ValueError("sde step needs an rng")
        z = rng.standard_normal(x_t.shape)
        out = out + ad.constant(np.sqrt(schedule.beta[i]) * z)
    return out


def reverse_step_sg(x_t: TapeTensor, t: int, c: int, schedule: NoiseSchedule,
                    denoiser: Denoiser, **kwargs) -> TapeTensor:
    """Stop-gradient variant: values identical to `reverse_step`, gradient
    restricted to the current step's direct term."""
    return reverse_step(x_t, t, c, schedule, denoiser, sg=True, **kwargs)


def predict_clean(x_t: TapeTensor, t: int, c: int, schedule: NoiseSchedule,
                  denoiser: Denoiser) -> TapeTensor:
    """One-step clean estimate (x_t - sqrt(1-abar_t)*eps_hat) / sqrt(abar_t)."""
    if not 0 <= t < schedule.T:
        raise ValueError(f"level {t} outside [0, {schedule.T})")
    abar = schedule.alpha_bar[t]
    if abar < 1e-8:
        raise ValueError(f"alpha_bar[{t}]={abar:.3e} below division guard")
    eps_hat = denoiser.predict(x_t, t, c)
    return (x_t - np.sqrt(1.0 - abar) * eps_hat) * (1.0 / np.sqrt(abar))


def sample(denoiser: Denoiser, schedule: NoiseSchedule, c: int, seed: int,
           *, sg: bool = False, sde: bool = False) -> Trajectory:
    """Full reverse pass from seeded standard-normal x_T; returns values only."""
    rng = np.random.default_rng(seed)
    x = ad.constant(rng.standard_normal(denoiser.motion_shape))
    states = [x.values]
    for t in range(schedule.T, 0, -1):
        x = reverse_step(x, t, c, schedule, denoiser, sg=sg, sde=sde,
                         rng=rng if sde else None)
        states.append(x.values)
    return Trajectory(states=states, condition=c, seed=seed)


def pretrain_denoiser(denoiser: Denoiser, motions: np.ndarray, labels: np.ndarray,
                      schedule: NoiseSchedule, steps: int = 800, batch_size: int = 16,
                      opt: OptimizerConfig | None = None, seed: int = 0) -> list[float]:
    """Standard noise-prediction mean-squared-error pre-training.

    `motions` is (N, n_flat); returns the per-step loss history.
    """
    rng = np.random.default_rng(seed)
    adam = Adam(denoiser.params, opt or OptimizerConfig(lr=3e-3, clip_norm=None))
    tape = ad.Tape()
    n = motions.shape[0]
    losses = []
    for _ in range(steps):
        idx = rng.integers(0, n, size=min(batch_size, n))
        x0 = motions[idx]
        lv = rng.integers(0, schedule.T, size=len(idx))
        eps = rng.standard_normal(x0.shape)
        ab = schedule.alpha_bar[lv][:, None]
        xt = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
        tape.reset()
        with ad.recording(tape):
            eps_hat = denoiser.forward_rows(ad.constant(xt), lv, labels[idx])
            err = eps_hat - ad.constant(eps)
            loss = ad.reduce_mean(err * err)
        grads = ad.backward(loss)
        adam.step(grads)
        losses.append(loss.item())
    return losses
