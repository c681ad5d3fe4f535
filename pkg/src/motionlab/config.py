"""Experiment configuration: dataclass sections serialized as flat
`section.key = value` text, chosen for diff-friendliness."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

__all__ = [
    "CorpusSection",
    "DiffusionSection",
    "RewardSection",
    "EngineSection",
    "ExperimentConfig",
    "save_config",
    "load_config",
    "parse_label_list",
]


@dataclass
class CorpusSection:
    n: int = 48
    labels: int = 3
    frames: int = 24
    joints: int = 4
    seed: int = 0


@dataclass
class DiffusionSection:
    T: int = 50
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    hidden: int = 64
    pretrain_steps: int = 600
    pretrain_lr: float = 3e-3
    batch: int = 16


@dataclass
class RewardSection:
    shared_dim: int = 32
    tau: float = 0.1
    delta: float = 1.0
    lora_rank: int = 4
    lora_alpha: float = 8.0
    pretrain_epochs: int = 40
    pretrain_lr: float = 3e-3
    batch: int = 8
    pref_steps: int = 250
    auth_steps: int = 250
    head_lr: float = 3e-3
    spl_epochs: int = 8
    spl_k: int = 5
    spl_lr: float = 1e-3


@dataclass
class EngineSection:
    kind: str = "easytune"
    updates: int = 240
    lr: float = 1e-4
    warmup: int = 0
    cosine_total: int = 0  # 0 disables the cosine schedule
    clip_norm: float = 1.0
    w1: float = 1.0
    w2: float = 0.002
    w3: float = 0.002
    w4: float = 1.0
    rho: float = 0.4
    k: int = 10
    mode: str = "perceive"
    rep: str = "joint"
    train_labels: str = "0,1"
    held_out_labels: str = "2"
    probe_every: int = 20


@dataclass
class ExperimentConfig:
    corpus: CorpusSection = field(default_factory=CorpusSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    reward: RewardSection = field(default_factory=RewardSection)
    engine: EngineSection = field(default_factory=EngineSection)
    seed: int = 0
    eval_candidates: int = 32
    eval_repeats: int = 5
    out: str = "runs/default"


_SECTIONS = {"corpus": CorpusSection, "diffusion": DiffusionSection,
             "reward": RewardSection, "engine": EngineSection}
_SCALARS = ("seed", "eval_candidates", "eval_repeats", "out")


def parse_label_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip() != ""]


def save_config(path, cfg: ExperimentConfig) -> None:
    lines = []
    for section in _SECTIONS:
        for key, value in asdict(getattr(cfg, section)).items():
            lines.append(f"{section}.{key} = {value!r}" if isinstance(value, str)
                         else f"{section}.{key} = {value!r}")
    for key in _SCALARS:
        lines.append(f"{key} = {getattr(cfg, key)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _coerce(section_cls, key: str, raw: str):
    for f in fields(section_cls):
        if f.name == key:
            if f.type in ("int", int):
                return int(raw)
            if f.type in ("float", float):
                return float(raw)
            if f.type in ("str", str):
                return raw.strip().strip("'\"")
            raise ValueError(f"unsupported field type {f.type} for {key}")
    raise KeyError(f"unknown key {key!r} in section {section_cls.__name__}")


def load_config(path) -> ExperimentConfig:
    cfg = ExperimentConfig()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key = value")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if "." in key:
                section_name, field_name = key.split(".", 1)
                if section_name not in _SECTIONS:
                    raise KeyError(f"line {lineno}: unknown section {section_name!r}")
                section = getattr(cfg, section_name)
                value = _coerce(_SECTIONS[section_name], field_name, raw)
                setattr(section, field_name, value)
            else:
                if key not in _SCALARS:
                    raise KeyError(f"line {lineno}: unknown key {key!r}")
                current = getattr(cfg, key)
                setattr(cfg, key, raw.strip("'\"") if isinstance(current, str) else int(raw))
    return cfg
