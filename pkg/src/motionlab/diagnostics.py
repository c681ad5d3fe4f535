"""Figure-data exports: per-step gradient norms, noised-motion
similarity in the reward latent, and node-count memory comparisons."""

from __future__ import annotations

import csv

import numpy as np

from . import engines
from .diffusion import Denoiser, NoiseSchedule, forward_noise
from .engines import EngineRun
from .reward import RewardModel
from .synth import MotionSample

__all__ = [
    "export_grad_norm_curve",
    "similarity_curve",
    "export_similarity_curve",
    "measure_engine_peaks",
    "export_memory_comparison",
    "export_memory_trajectory",
    "export_diagnostics",
]


def export_grad_norm_curve(run: EngineRun, path) -> None:
    """(t, grad norm) rows from the final-update backward sweep."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "grad_norm"])
        for t in sorted(run.step_grad_norms):
            writer.writerow([t, f"{run.step_grad_norms[t]:.17g}"])


def similarity_curve(model: RewardModel, corpus: list[MotionSample],
                     schedule: NoiseSchedule, seed: int = 0, rep: str = "joint",
                     draws: int = 3) -> list[tuple[int, float]]:
    """Mean cosine between the embeddings of the level-t noised motion and
    the clean motion, averaged over the corpus.

    Level 0 compares the clean motion with itself (similarity exactly 1);
    higher levels average `draws` independent noise draws per sample.
    """
    rng = np.random.default_rng(seed)
    clean = []
    for s in corpus:
        q, _ = model.encode_motion(s.view(rep), rep, t=0)
        clean.append(q.mu.values / np.linalg.norm(q.mu.values))
    points = [(0, 1.0)]
    for t in range(1, schedule.T):
        sims = []
        for s, e0 in zip(corpus, clean):
            view = s.view(rep)
            for _ in range(draws):
                noised = forward_noise(view, t, rng.standard_normal(view.shape), schedule)
                q, _ = model.encode_motion(noised, rep, t=t)
                e = q.mu.values / np.linalg.norm(q.mu.values)
                sims.append(float(e @ e0))
        points.append((t, float(np.mean(sims))))
    return points


def export_similarity_curve(model: RewardModel, corpus: list[MotionSample],
                            schedule: NoiseSchedule, path, seed: int = 0,
                            rep: str = "joint") -> None:
    points = similarity_curve(model, corpus, schedule, seed, rep)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "cosine"])
        for t, sim in points:
            writer.writerow([t, f"{sim:.17g}"])


def measure_engine_peaks(model: RewardModel, denoiser_factory, labels: list[int],
                         Ts: tuple[int, ...] = (10, 20, 40),
                         kinds: tuple[str, ...] = ("trajectory", "easytune"),
                         updates: int = 2, seed: int = 0,
                         rep: str = "joint") -> list[tuple[str, int, int]]:
    """Peak tape nodes of short runs per (engine, T); `denoiser_factory(T)`
    must return a fresh denoiser for each schedule length."""
    rows = []
    for kind in kinds:
        for T in Ts:
            schedule = NoiseSchedule.linear(T=T)
            den = denoiser_factory(T)
            if kind == "trajectory":
                run = engines.run_trajectory_engine(
                    den, model, labels, updates, seed, schedule=schedule, rep=rep)
            else:
                cur = engines.CurriculumConfig(T=T, k=min(10, T))
                run = engines.run_easytune_engine(
                    den, model, labels, updates, seed, schedule=schedule,
                    cur=cur, rep=rep)
            rows.append((kind, T, run.peak_nodes))
    return rows


def export_memory_comparison(rows: list[tuple[str, int, int]], path) -> None:
    """One row per (engine, T): the node-count stand-in for peak memory."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["engine", "T", "peak_nodes"])
        for kind, T, peak in rows:
            writer.writerow([kind, T, peak])


def export_memory_trajectory(run: EngineRun, path) -> None:
    """(update, live nodes) over the run; per-update tape peak."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["update", "live_nodes"])
        for r in run.rows:
            writer.writerow([r.update, r.peak_nodes])


def export_diagnostics(run: EngineRun, out_dir, *, model: RewardModel | None = None,
                       corpus: list[MotionSample] | None = None,
                       schedule: NoiseSchedule | None = None,
                       denoiser_factory=None, labels: list[int] | None = None,
                       seed: int = 0, rep: str = "joint") -> list[str]:
    """Write every diagnostic the provided inputs allow; returns the
    file names written under `out_dir`."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if run.step_grad_norms:
        export_grad_norm_curve(run, out / "grad_norms.csv")
        written.append("grad_norms.csv")
    export_memory_trajectory(run, out / "memory_trajectory.csv")
    written.append("memory_trajectory.csv")
    if model is not None and corpus is not None and schedule is not None:
        export_similarity_curve(model, corpus, schedule,
                                out / "similarity_curve.csv", seed=seed, rep=rep)
        written.append("similarity_curve.csv")
    if model is not None and denoiser_factory is not None and labels is not None:
        rows = measure_engine_peaks(model, denoiser_factory, labels, rep=rep, seed=seed)
        export_memory_comparison(rows, out / "memory_comparison.csv")
        written.append("memory_comparison.csv")
    return written
