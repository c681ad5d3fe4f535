"""Command-line experiment runner.

Verbs map to pipeline stages and chain through artifacts in the output
directory; `run-all` executes the whole pipeline.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import checkpoint, diagnostics, pipeline
from .config import ExperimentConfig, load_config, parse_label_list


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motionlab",
        description="Toy motion diffusion fine-tuning lab")
    parser.add_argument("verb", choices=list(pipeline.STAGES) + ["diagnostics", "run-all"])
    parser.add_argument("--config", type=Path, default=None,
                        help="flat section.key = value config file")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", type=Path, default=None, help="override output directory")
    parser.add_argument("--engine", choices=["trajectory", "easytune"], default=None,
                        help="override engine kind")
    parser.add_argument("--mode", choices=["ode_predict", "perceive"], default=None,
                        help="override noise-aware reward mode")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = str(args.out)
    if args.engine is not None:
        cfg.engine.kind = args.engine
    if args.mode is not None:
        cfg.engine.mode = args.mode
    return cfg


def _run_diagnostics(cfg: ExperimentConfig, out: Path) -> None:
    model = pipeline.build_reward_model(cfg)
    refined = out / "reward_refined.ckpt"
    pretrained = out / "reward_pretrained.ckpt"
    if refined.exists() or pretrained.exists():
        model.load_state(checkpoint.load_params(refined if refined.exists() else pretrained))
    denoiser = pipeline.build_denoiser(cfg)
    tuned = out / "denoiser_tuned.ckpt"
    base = out / "denoiser_pretrained.ckpt"
    if tuned.exists() or base.exists():
        denoiser.load_state(checkpoint.load_params(tuned if tuned.exists() else base))
    corpus_path = out / "corpus.bin"
    samples = None
    if corpus_path.exists():
        from .synth import load_corpus
        samples, _, _ = load_corpus(corpus_path)
    schedule = pipeline.build_schedule(cfg)
    labels = parse_label_list(cfg.engine.train_labels) or [0]

    def factory(T):
        d = pipeline.build_denoiser(cfg)
        d.load_state(denoiser.state())
        return d

    from . import engines
    run = engines.run_trajectory_engine(
        factory(schedule.T), model, labels, updates=1, seed=cfg.seed,
        schedule=schedule, rep=cfg.engine.rep)
    written = diagnostics.export_diagnostics(
        run, out / "diagnostics", model=model, corpus=samples, schedule=schedule,
        denoiser_factory=factory, labels=labels, seed=cfg.seed, rep=cfg.engine.rep)
    print("wrote " + ", ".join(written))


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    cfg = _load(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.verb == "run-all":
            entries = pipeline.run_pipeline(cfg, out)
            print(f"pipeline complete, report at {out / 'report.txt'}")
            for name, value in entries.items():
                print(f"  {name} = {value}")
        elif args.verb == "diagnostics":
            _run_diagnostics(cfg, out)
        else:
            pipeline.run_stage(args.verb, cfg, out)
            print(f"stage {args.verb} complete, artifacts under {out}")
    except pipeline.PipelineError as err:
        print(str(err), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
