"""Fine-tuning engines: full-trajectory reward backprop versus step-wise
stop-gradient updates.

The trajectory engine samples a fully tape-linked reverse pass, scores
the final motion, and backpropagates once through all T steps — peak
tape nodes grow linearly with T.  The step-wise engine samples with the
stop-gradient reverse step and applies one optimizer update per visited
step inside a curriculum window, resetting the tape in between, so its
peak node count does not depend on T.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import TapeTensor
from .diffusion import Denoiser, NoiseSchedule, predict_clean, reverse_step
from .optim import Adam, OptimizerConfig
from .reward import RewardModel, reward_scores

__all__ = [
    "AggregatorConfig",
    "CurriculumConfig",
    "TraceRow",
    "EngineRun",
    "combine_scores",
    "aggregate_reward",
    "noise_aware_reward",
    "updates_per_trajectory",
    "run_trajectory_engine",
    "run_easytune_engine",
    "make_reward_probe",
]

MODES = ("ode_predict", "perceive")


@dataclass
class AggregatorConfig:
    """Weights on (semantic, preference, authenticity, similarity)."""

    w1: float = 1.0
    w2: float = 0.002
    w3: float = 0.002
    w4: float = 1.0


@dataclass
class CurriculumConfig:
    """Sliding window of k steps swept from high to low noise.

    The window start follows the training progress p: it moves linearly
    from T-k down to 0 while p <= rho, then stays at 0.
    """

    rho: float = 0.4
    k: int = 10
    T: int = 50

    def __post_init__(self) -> None:
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"sweep ratio must be in (0, 1], got {self.rho}")
        if not 1 <= self.k <= self.T:
            raise ValueError(f"window width {self.k} outside [1, {self.T}]")

    def window_start(self, p: float) -> int:
        if p > self.rho:
            return 0
        span = self.T - self.k
        return span - int(math.floor(p / self.rho * span + 0.5))

    def window(self, p: float) -> range:
        s = self.window_start(p)
        return range(s, s + self.k)


@dataclass
class TraceRow:
    update: int
    t: int  # evaluated noise level, -1 for the trajectory engine
    reward: float
    grad_norm: float
    coeff_norm: float
    peak_nodes: int
    millis: float


@dataclass
class EngineRun:
    """Per-update trace of one fine-tuning run."""

    kind: str
    T: int
    rows: list[TraceRow] = field(default_factory=list)
    # (update, millis, probe reward) sampled every probe_every updates
    probes: list[tuple[int, float, float]] = field(default_factory=list)
    # level -> ||dR/dx_level|| from the final update (trajectory engine)
    step_grad_norms: dict[int, float] = field(default_factory=dict)

    @property
    def peak_nodes(self) -> int:
        return max(r.peak_nodes for r in self.rows)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["update", "t", "reward", "grad_norm",
                             "coeff_norm", "peak_nodes", "millis"])
            for r in self.rows:
                writer.writerow([r.update, r.t, f"{r.reward:.17g}",
                                 f"{r.grad_norm:.17g}", f"{r.coeff_norm:.17g}",
                                 r.peak_nodes, f"{r.millis:.3f}"])


def combine_scores(scores: dict[str, TapeTensor], similarity,
                   cfg: AggregatorConfig) -> TapeTensor:
    """Weighted sum of the four reward channels.

    Zero-weight channels are dropped entirely, so their parameters
    receive exactly zero gradient.
    """
    terms = []
    for w, key in ((cfg.w1, "semantic"), (cfg.w2, "preference"), (cfg.w3, "authenticity")):
        if w != 0.0:
            terms.append(w * scores[key])
    if cfg.w4 != 0.0 and similarity is not None:
        terms.append(cfg.w4 * ad.as_tensor(similarity))
    if not terms:
        return ad.constant(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def aggregate_reward(model: RewardModel, x, rep: str, t: int, c: int,
                     ref_x, cfg: AggregatorConfig | None = None) -> TapeTensor:
    """Unified reward at noise level t; `ref_x` is the frozen-model state
    at the same level, scored as negative mean squared distance."""
    cfg = cfg or AggregatorConfig()
    scores = reward_scores(model, x, rep, t, c)
    similarity = None
    if ref_x is not None and cfg.w4 != 0.0:
        diff = ad.as_tensor(x) - ad.constant(np.asarray(ref_x))
        similarity = -ad.reduce_mean(diff * diff)
    return combine_scores(scores, similarity, cfg)


def noise_aware_reward(model: RewardModel, x_t, t: int, c: int, mode: str,
                       schedule: NoiseSchedule, denoiser: Denoiser,
                       rep: str = "joint", cfg: AggregatorConfig | None = None,
                       ref_x=None) -> TapeTensor:
    """Reward of a noised state, via one-step clean prediction
    (ode_predict) or direct noise-conditioned scoring (perceive)."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    x_t = ad.as_tensor(x_t)
    if mode == "ode_predict":
        x_eval = predict_clean(x_t, t, c, schedule, denoiser)
        return aggregate_reward(model, x_eval, rep, 0, c, ref_x, cfg)
    return aggregate_reward(model, x_t, rep, t, c, ref_x, cfg)


def updates_per_trajectory(kind: str, T: int, cur: CurriculumConfig | None = None) -> int:
    if kind == "trajectory":
        return 1
    if kind == "easytune":
        if cur is None:
            raise ValueError("easytune needs a curriculum config")
        return min(cur.k, T)
    raise ValueError(f"unknown engine kind {kind!r}")


def _rollout_frozen(frozen: Denoiser, schedule: NoiseSchedule, c: int,
                    x_start: np.ndarray) -> list[np.ndarray]:
    """Reference states of the frozen model indexed by level (0..T)."""
    x = ad.constant(x_start)
    by_level = [None] * (schedule.T + 1)
    by_level[schedule.T] = x.values
    for t in range(schedule.T, 0, -1):
        x = reverse_step(x, t, c, schedule, frozen)
        by_level[t - 1] = x.values
    return by_level


class _Clock:
    """Wall clock that can exclude probe overhead from run timings."""

    def __init__(self) -> None:
        self.start = time.perf_counter()
        self.excluded = 0.0

    def millis(self) -> float:
        return (time.perf_counter() - self.start - self.excluded) * 1000.0

    def run_excluded(self, fn):
        t0 = time.perf_counter()
        out = fn()
        self.excluded += time.perf_counter() - t0
        return out


def _freeze_model(model: RewardModel):
    flags = {k: v.requires_grad for k, v in model.params.items()}
    model.set_trainable(False)

    def restore():
        for k, v in model.params.items():
            v.requires_grad = flags.get(k, True)

    return restore


def run_trajectory_engine(denoiser: Denoiser, model: RewardModel, prompts: list[int],
                          updates: int, seed: int, *, schedule: NoiseSchedule,
                          agg: AggregatorConfig | None = None,
                          opt: OptimizerConfig | None = None, rep: str = "joint",
                          probe=None, probe_every: int = 0) -> EngineRun:
    """Full-trajectory differentiable-reward baseline.

    Each update samples a tape-linked trajectory, scores the final
    motion, backpropagates through all T steps, and applies one
    optimizer step.  The trace records the peak node count and the
    backward gradient norm at every intermediate state.
    """
    agg = agg or AggregatorConfig()
    frozen = denoiser.copy(trainable=False)
    adam = Adam(denoiser.params, opt or OptimizerConfig())
    run = EngineRun(kind="trajectory", T=schedule.T)
    restore = _freeze_model(model)
    tape = ad.Tape()
    clock = _Clock()
    try:
        if probe is not None and probe_every > 0:
            run.probes.append((-1, clock.millis(),
                               clock.run_excluded(lambda: probe(denoiser))))
        for u in range(updates):
            label = prompts[u % len(prompts)]
            rng = np.random.default_rng([seed, u])
            x_start = rng.standard_normal(denoiser.motion_shape)
            ref = _rollout_frozen(frozen, schedule, label, x_start)
            tape.reset()
            with ad.recording(tape):
                x = ad.constant(x_start)
                states = [x]
                for t in range(schedule.T, 0, -1):
                    x = reverse_step(x, t, label, schedule, denoiser)
                    states.append(x)
                r = aggregate_reward(model, x, rep, 0, label, ref[0], agg)
                loss = -r
            peak = tape.peak_node_count
            grads = ad.backward(loss)
            step_norms = {}
            for i, s in enumerate(states):
                g = grads.get(s.uid)
                if g is not None:
                    step_norms[schedule.T - i] = float(np.linalg.norm(g))
            gnorm = adam.step(grads)
            run.rows.append(TraceRow(
                update=u, t=-1, reward=r.item(), grad_norm=gnorm,
                coeff_norm=step_norms.get(schedule.T - 1, 0.0),
                peak_nodes=peak, millis=clock.millis()))
            run.step_grad_norms = step_norms
            if probe is not None and probe_every > 0 and (u + 1) % probe_every == 0:
                run.probes.append((u, clock.millis(),
                                   clock.run_excluded(lambda: probe(denoiser))))
    finally:
        restore()
    return run


def run_easytune_engine(denoiser: Denoiser, model: RewardModel, prompts: list[int],
                        updates: int, seed: int, *, schedule: NoiseSchedule,
                        cur: CurriculumConfig | None = None,
                        agg: AggregatorConfig | None = None,
                        opt: OptimizerConfig | None = None,
                        mode: str = "perceive", rep: str = "joint",
                        resample: bool = False, probe=None,
                        probe_every: int = 0) -> EngineRun:
    """Step-wise stop-gradient fine-tuning with curriculum scheduling.

    Sampling proceeds with the stop-gradient reverse step.  Whenever the
    produced state's level falls inside the curriculum window, the
    single-step graph is scored with the noise-aware reward, backprop'd,
    and an optimizer update applied; the tape is reset per step, so the
    peak node count is independent of T.  One trajectory serves all k
    window updates unless `resample` is set.
    """
    agg = agg or AggregatorConfig()
    cur = cur or CurriculumConfig(T=schedule.T)
    if cur.T != schedule.T:
        raise ValueError(f"curriculum T={cur.T} != schedule T={schedule.T}")
    frozen = denoiser.copy(trainable=False)
    adam = Adam(denoiser.params, opt or OptimizerConfig())
    run = EngineRun(kind="easytune", T=schedule.T)
    restore = _freeze_model(model)
    tape = ad.Tape()
    clock = _Clock()
    per_traj = updates_per_trajectory("easytune", schedule.T, cur)
    outer_total = max(1, math.ceil(updates / per_traj))
    done = 0
    try:
        if probe is not None and probe_every > 0:
            run.probes.append((-1, clock.millis(),
                               clock.run_excluded(lambda: probe(denoiser))))
        for it in range(outer_total):
            if done >= updates:
                break
            p = it / outer_total
            window = cur.window(p)
            label = prompts[it % len(prompts)]
            rng = np.random.default_rng([seed, it])
            x_start = rng.standard_normal(denoiser.motion_shape)
            ref = _rollout_frozen(frozen, schedule, label, x_start)
            x_vals = x_start
            for t in range(schedule.T, 0, -1):
                level = t - 1
                if level in window and done < updates:
                    if resample:
                        rng_r = np.random.default_rng([seed, it, done])
                        x_vals = _resample_to(denoiser, schedule, label,
                                              rng_r.standard_normal(denoiser.motion_shape), t)
                    tape.reset()
                    with ad.recording(tape):
                        x_next = reverse_step(ad.constant(x_vals), t, label,
                                              schedule, denoiser, sg=True)
                        r = noise_aware_reward(model, x_next, level, label, mode,
                                               schedule, denoiser, rep, agg, ref[level])
                        loss = -r
                    peak = tape.peak_node_count
                    grads = ad.backward(loss)
                    gnorm = adam.step(grads)
                    run.rows.append(TraceRow(
                        update=done, t=level, reward=r.item(), grad_norm=gnorm,
                        coeff_norm=1.0, peak_nodes=peak, millis=clock.millis()))
                    done += 1
                    x_vals = x_next.values
                    if probe is not None and probe_every > 0 and done % probe_every == 0:
                        run.probes.append((done - 1, clock.millis(),
                                           clock.run_excluded(lambda: probe(denoiser))))
                else:
                    x_next = reverse_step(ad.constant(x_vals), t, label,
                                          schedule, denoiser, sg=True)
                    x_vals = x_next.values
    finally:
        restore()
    return run


def _resample_to(denoiser: Denoiser, schedule: NoiseSchedule, label: int,
                 x_start: np.ndarray, t_stop: int) -> np.ndarray:
    """Roll a fresh trajectory down to step t_stop (exclusive), values only."""
    x = ad.constant(x_start)
    for t in range(schedule.T, t_stop, -1):
        x = reverse_step(x, t, label, schedule, denoiser, sg=True)
    return x.values


def make_reward_probe(model: RewardModel, schedule: NoiseSchedule,
                      frozen: Denoiser, labels: list[int], seeds: list[int],
                      agg: AggregatorConfig | None = None, rep: str = "joint"):
    """Evaluation callable: mean aggregated reward of clean samples over a
    fixed (label, seed) grid, against precomputed frozen references."""
    from .diffusion import sample  # local import to avoid cycle at module load

    agg = agg or AggregatorConfig()
    refs = {(c, s): sample(frozen, schedule, c, s).x0 for c in labels for s in seeds}

    def probe(denoiser: Denoiser) -> float:
        vals = []
        for c in labels:
            for s in seeds:
                x0 = sample(denoiser, schedule, c, s).x0
                r = aggregate_reward(model, ad.constant(x0), rep, 0, c, refs[(c, s)], agg)
                vals.append(r.item())
        return float(np.mean(vals))

    return probe
