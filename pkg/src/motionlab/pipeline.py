"""End-to-end experiment pipeline: corpus -> reward pre-training ->
self-refinement -> diffusion pre-training -> fine-tuning -> evaluation.

Every stage persists its artifacts under the output directory, so stages
can also be driven one at a time from the command line.  All outputs are
pure functions of (config, seeds).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import checkpoint, diffusion, engines, evaluate, reward, selfrefine, synth
from .config import ExperimentConfig, parse_label_list, save_config
from .optim import OptimizerConfig

__all__ = [
    "PipelineError",
    "build_dims",
    "build_schedule",
    "build_reward_model",
    "build_denoiser",
    "stage_gen_data",
    "stage_pretrain_reward",
    "stage_spl_refine",
    "stage_pretrain_diffusion",
    "stage_finetune",
    "stage_evaluate",
    "run_pipeline",
]

STAGES = ("gen-data", "pretrain-reward", "spl-refine", "pretrain-diffusion",
          "finetune", "evaluate")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def build_dims(cfg: ExperimentConfig) -> synth.MotionDims:
    j = cfg.corpus.joints
    return synth.MotionDims(frames=cfg.corpus.frames, joints=j,
                            kinematic=2 + 2 * j + 2 * (j - 1), rotation=j - 1)


def build_schedule(cfg: ExperimentConfig) -> diffusion.NoiseSchedule:
    d = cfg.diffusion
    return diffusion.NoiseSchedule(T=d.T, beta=np.linspace(d.beta_start, d.beta_end, d.T))


def build_reward_model(cfg: ExperimentConfig) -> reward.RewardModel:
    r = cfg.reward
    rcfg = reward.RewardConfig(shared_dim=r.shared_dim, tau=r.tau, delta=r.delta,
                               lora_rank=r.lora_rank, lora_alpha=r.lora_alpha)
    return reward.RewardModel(dims=build_dims(cfg), n_labels=cfg.corpus.labels,
                              cfg=rcfg, seed=cfg.seed + 1)


def build_denoiser(cfg: ExperimentConfig) -> diffusion.Denoiser:
    dims = build_dims(cfg)
    return diffusion.Denoiser((dims.frames, dims.joint_flat), cfg.corpus.labels,
                              hidden=cfg.diffusion.hidden, seed=cfg.seed + 2)


def _aggregator(cfg: ExperimentConfig) -> engines.AggregatorConfig:
    e = cfg.engine
    return engines.AggregatorConfig(w1=e.w1, w2=e.w2, w3=e.w3, w4=e.w4)


def _load_corpus(out: Path) -> list[synth.MotionSample]:
    samples, _, _ = synth.load_corpus(out / "corpus.bin")
    return samples


def _joint_rows(corpus: list[synth.MotionSample]) -> tuple[np.ndarray, np.ndarray]:
    rows = np.stack([s.view("joint").ravel() for s in corpus])
    labels = np.array([s.label for s in corpus])
    return rows, labels


def stage_gen_data(cfg: ExperimentConfig, out: Path) -> list[synth.MotionSample]:
    corpus = synth.generate_corpus(cfg.corpus.n, cfg.corpus.labels,
                                   seed=cfg.corpus.seed, dims=build_dims(cfg))
    synth.save_corpus(out / "corpus.bin", corpus, cfg.corpus.labels, cfg.corpus.seed)
    synth.export_corpus_csv(out / "corpus.csv", corpus)
    return corpus


def stage_pretrain_reward(cfg: ExperimentConfig, out: Path) -> reward.RewardModel:
    corpus = _load_corpus(out)
    schedule = build_schedule(cfg)
    model = build_reward_model(cfg)
    r = cfg.reward
    reward.pretrain_semantic(model, corpus, epochs=r.pretrain_epochs,
                             batch_size=r.batch, lr=r.pretrain_lr,
                             seed=cfg.seed + 11, schedule=schedule)
    pairs = synth.build_preference_pairs(corpus, seed=cfg.seed + 12)
    reward.train_preference(model, pairs, steps=r.pref_steps, lr=r.head_lr,
                            seed=cfg.seed + 13, rep=cfg.engine.rep)
    raw_denoiser = build_denoiser(cfg)  # untrained on purpose: fakes ~ noise
    fakes = synth.build_deepfake_set(corpus, raw_denoiser, schedule, seed=cfg.seed + 14)
    reward.train_authenticity(model, fakes, steps=r.auth_steps, lr=r.head_lr,
                              seed=cfg.seed + 15, rep=cfg.engine.rep)
    checkpoint.save_params(out / "reward_pretrained.ckpt", model.params)
    return model


def stage_spl_refine(cfg: ExperimentConfig, out: Path) -> reward.RewardModel:
    corpus = _load_corpus(out)
    model = build_reward_model(cfg)
    model.load_state(checkpoint.load_params(out / "reward_pretrained.ckpt"))
    r = cfg.reward
    log, _rates = selfrefine.refine(model, corpus, epochs=r.spl_epochs, k=r.spl_k,
                                    lr=r.spl_lr, seed=cfg.seed + 21,
                                    rep=cfg.engine.rep)
    selfrefine.write_mining_log(out / "mining_log.csv", log)
    checkpoint.save_params(out / "reward_refined.ckpt", model.params)
    return model


def stage_pretrain_diffusion(cfg: ExperimentConfig, out: Path) -> diffusion.Denoiser:
    corpus = _load_corpus(out)
    schedule = build_schedule(cfg)
    denoiser = build_denoiser(cfg)
    rows, labels = _joint_rows(corpus)
    diffusion.pretrain_denoiser(denoiser, rows, labels, schedule,
                                steps=cfg.diffusion.pretrain_steps,
                                batch_size=cfg.diffusion.batch,
                                opt=OptimizerConfig(lr=cfg.diffusion.pretrain_lr,
                                                    clip_norm=None),
                                seed=cfg.seed + 31)
    checkpoint.save_params(out / "denoiser_pretrained.ckpt", denoiser.params)
    return denoiser


def stage_finetune(cfg: ExperimentConfig, out: Path) -> engines.EngineRun:
    schedule = build_schedule(cfg)
    model = build_reward_model(cfg)
    refined = out / "reward_refined.ckpt"
    model.load_state(checkpoint.load_params(
        refined if refined.exists() else out / "reward_pretrained.ckpt"))
    denoiser = build_denoiser(cfg)
    denoiser.load_state(checkpoint.load_params(out / "denoiser_pretrained.ckpt"))
    e = cfg.engine
    opt = OptimizerConfig(lr=e.lr, warmup=e.warmup,
                          cosine_total=e.cosine_total or None,
                          clip_norm=e.clip_norm if e.clip_norm > 0 else None)
    prompts = parse_label_list(e.train_labels)
    agg = _aggregator(cfg)
    frozen = denoiser.copy(trainable=False)
    probe = engines.make_reward_probe(model, schedule, frozen, prompts,
                                      [cfg.seed + 41 + i for i in range(3)],
                                      agg, rep=e.rep)
    if e.kind == "trajectory":
        run = engines.run_trajectory_engine(
            denoiser, model, prompts, e.updates, cfg.seed + 42,
            schedule=schedule, agg=agg, opt=opt, rep=e.rep,
            probe=probe, probe_every=e.probe_every)
    elif e.kind == "easytune":
        cur = engines.CurriculumConfig(rho=e.rho, k=e.k, T=schedule.T)
        run = engines.run_easytune_engine(
            denoiser, model, prompts, e.updates, cfg.seed + 42,
            schedule=schedule, cur=cur, agg=agg, opt=opt, mode=e.mode,
            rep=e.rep, probe=probe, probe_every=e.probe_every)
    else:
        raise ValueError(f"unknown engine kind {e.kind!r}")
    checkpoint.save_params(out / "denoiser_tuned.ckpt", denoiser.params)
    run.to_csv(out / "finetune_trace.csv")
    return run


def stage_evaluate(cfg: ExperimentConfig, out: Path) -> dict:
    corpus = _load_corpus(out)
    schedule = build_schedule(cfg)
    model = build_reward_model(cfg)
    refined = out / "reward_refined.ckpt"
    model.load_state(checkpoint.load_params(
        refined if refined.exists() else out / "reward_pretrained.ckpt"))
    baseline = build_denoiser(cfg)
    baseline.load_state(checkpoint.load_params(out / "denoiser_pretrained.ckpt"))
    tuned = build_denoiser(cfg)
    tuned_path = out / "denoiser_tuned.ckpt"
    # without a fine-tuning stage the baseline doubles as the comparison anchor
    tuned.load_state(checkpoint.load_params(
        tuned_path if tuned_path.exists() else out / "denoiser_pretrained.ckpt"))

    rep = cfg.engine.rep
    agg = _aggregator(cfg)
    held_out = parse_label_list(cfg.engine.held_out_labels) or list(range(cfg.corpus.labels))
    all_labels = list(range(cfg.corpus.labels))
    frozen = baseline.copy(trainable=False)

    runs = []
    for r in range(cfg.eval_repeats):
        seeds = [cfg.seed + 1000 * (r + 1) + j for j in range(3)]
        probe = engines.make_reward_probe(model, schedule, frozen, held_out,
                                          seeds, agg, rep=rep)
        gen_base = [synth.MotionSample.from_joints(
            diffusion.sample(baseline, schedule, c, s).x0.reshape(cfg.corpus.frames, -1, 3), c)
            for c in all_labels for s in seeds]
        gen_tuned = [synth.MotionSample.from_joints(
            diffusion.sample(tuned, schedule, c, s).x0.reshape(cfg.corpus.frames, -1, 3), c)
            for c in all_labels for s in seeds]
        runs.append({
            "reward_baseline": probe(baseline),
            "reward_tuned": probe(tuned),
            "frechet_baseline": evaluate.eval_frechet(model, gen_base, corpus, rep),
            "frechet_tuned": evaluate.eval_frechet(model, gen_tuned, corpus, rep),
        })
    summary = evaluate.summarize_runs(runs)

    ks = tuple(k for k in (1, 2, 3, 5, 10) if k <= cfg.eval_candidates)
    candidate_size = min(cfg.eval_candidates, len(corpus))
    retrieval = evaluate.eval_retrieval(model, corpus, candidate_size, ks,
                                        seed=cfg.seed + 51, rep=rep)
    pairs = synth.build_preference_pairs(corpus, seed=cfg.seed + 52)
    pref = evaluate.eval_preference(model, pairs, seed=cfg.seed + 53, rep=rep)
    fakes = synth.build_deepfake_set(corpus, build_denoiser(cfg), schedule,
                                     seed=cfg.seed + 54)
    fake_metrics = evaluate.eval_deepfake(model, fakes, rep=rep)

    entries: dict = {}
    for k in ks:
        entries[f"retrieval_top{k}"] = retrieval[k]
    for name, value in pref.items():
        entries[f"preference_{name}"] = value
    for name, value in fake_metrics.items():
        entries[f"deepfake_{name}"] = value
    entries.update(summary)
    evaluate.write_report(out / "report.txt", entries)
    evaluate.write_metrics_csv(out / "metrics.csv", entries)
    return entries


_STAGE_FN = {
    "gen-data": stage_gen_data,
    "pretrain-reward": stage_pretrain_reward,
    "spl-refine": stage_spl_refine,
    "pretrain-diffusion": stage_pretrain_diffusion,
    "finetune": stage_finetune,
    "evaluate": stage_evaluate,
}


def run_stage(name: str, cfg: ExperimentConfig, out_dir=None):
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return _STAGE_FN[name](cfg, out)
    except PipelineError:
        raise
    except Exception as exc:  # abort with the stage name, artifacts kept
        raise PipelineError(name, exc) from exc


def run_pipeline(cfg: ExperimentConfig, out_dir=None, skip_finetune: bool = False) -> dict:
    """All stages in order; returns the evaluation entries."""
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(out / "config.cfg", cfg)
    for name in STAGES:
        if skip_finetune and name == "finetune":
            continue
        result = run_stage(name, cfg, out)
    return result
