"""Desk-scale evaluation suite: retrieval, preference, deepfake
classification, and latent-space Fréchet distance."""

from __future__ import annotations

import csv

import numpy as np
from scipy import linalg as sla
from scipy import stats

from .reward import RewardModel, embed_corpus
from .selfrefine import semantic_score
from .synth import DeepfakeExample, MotionSample, PreferencePair

__all__ = [
    "eval_retrieval",
    "eval_preference",
    "eval_deepfake",
    "frechet_gaussians",
    "frechet_distance",
    "eval_frechet",
    "summarize_runs",
    "write_report",
    "write_metrics_csv",
]


def _default_scorer(model: RewardModel, rep: str):
    def scorer(sample: MotionSample, label: int) -> float:
        return semantic_score(model, sample.view(rep), rep, label).item()

    return scorer


def eval_retrieval(model: RewardModel | None, corpus: list[MotionSample],
                   candidate_size: int = 32, ks: tuple[int, ...] = (1, 2, 3, 5, 10),
                   n_queries: int | None = None, seed: int = 0,
                   rep: str = "joint", scorer=None) -> dict[int, float]:
    """Top-k accuracy of ranking the query motion inside a random
    candidate set scored against the query's label.

    The scorer is called once per (query, candidate) occurrence; ties
    rank by lower corpus id.
    """
    if candidate_size > len(corpus):
        raise ValueError(f"candidate size {candidate_size} exceeds corpus {len(corpus)}")
    if scorer is None:
        scorer = _default_scorer(model, rep)
    rng = np.random.default_rng(seed)
    n_queries = n_queries or len(corpus)
    hits = {k: 0 for k in ks}
    others_pool = np.arange(len(corpus))
    for q in range(n_queries):
        gt = q % len(corpus)
        label = corpus[gt].label
        pool = others_pool[others_pool != gt]
        cand = [gt] + list(rng.choice(pool, size=candidate_size - 1, replace=False))
        scores = [scorer(corpus[i], label) for i in cand]
        gt_score = scores[0]
        rank = 1
        for i, s in zip(cand[1:], scores[1:]):
            if s > gt_score or (s == gt_score and i < gt):
                rank += 1
        for k in ks:
            if rank <= k:
                hits[k] += 1
    return {k: hits[k] / n_queries for k in ks}


def _prf(tp: int, fp: int, tn: int, fn: int) -> dict[str, float]:
    total = tp + fp + tn + fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)) if precision + recall else 0.0
    return {"accuracy": (tp + tn) / total, "precision": precision,
            "recall": recall, "f1": f1}


def eval_preference(model: RewardModel | None, pairs: list[PreferencePair],
                    seed: int = 0, rep: str = "joint", scorer=None) -> dict[str, float]:
    """Pairwise win prediction with half the pairs presented swapped.

    The predicted winner is the higher-scoring element; an exact tie
    predicts the first element.  The positive class is "first element
    preferred".
    """
    if scorer is None:
        def scorer(sample, _label):
            _, z = model.encode_motion(sample.view(rep), rep, adapter="psi")
            return model.critic(z).item()
    rng = np.random.default_rng(seed)
    swapped = set(rng.permutation(len(pairs))[: len(pairs) // 2])
    tp = fp = tn = fn = 0
    for i, pair in enumerate(pairs):
        first, second = (pair.loser, pair.winner) if i in swapped else (pair.winner, pair.loser)
        truth = i not in swapped
        pred = scorer(first, pair.label) >= scorer(second, pair.label)
        if truth and pred:
            tp += 1
        elif truth:
            fn += 1
        elif pred:
            fp += 1
        else:
            tn += 1
    return _prf(tp, fp, tn, fn)


def eval_deepfake(model: RewardModel | None, examples: list[DeepfakeExample],
                  rep: str = "joint", scorer=None) -> dict[str, float]:
    """Real-versus-generated classification at probability threshold 0.5;
    the positive class is "real"."""
    if scorer is None:
        def scorer(sample, _label):
            _, z = model.encode_motion(sample.view(rep), rep, adapter="omega")
            return model.classifier(z).item()
    tp = fp = tn = fn = 0
    for ex in examples:
        pred_real = scorer(ex.motion, ex.motion.label) >= 0.5
        if ex.is_real and pred_real:
            tp += 1
        elif ex.is_real:
            fn += 1
        elif pred_real:
            fp += 1
        else:
            tn += 1
    return _prf(tp, fp, tn, fn)


def frechet_gaussians(m1: np.ndarray, c1: np.ndarray, m2: np.ndarray,
                      c2: np.ndarray, jitter: float = 1e-6) -> float:
    """||m1-m2||^2 + tr(C1 + C2 - 2 (C1 C2)^(1/2)).

    A non-finite or complex matrix square root triggers one retry with
    `jitter`-scaled identity added to both covariances.
    """
    c1 = np.atleast_2d(np.asarray(c1, dtype=np.float64))
    c2 = np.atleast_2d(np.asarray(c2, dtype=np.float64))
    diff = float(np.sum((np.asarray(m1) - np.asarray(m2)) ** 2))
    covmean = sla.sqrtm(c1 @ c2)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    if not np.isfinite(covmean).all():
        eye = np.eye(c1.shape[0]) * jitter
        covmean = sla.sqrtm((c1 + eye) @ (c2 + eye))
        if np.iscomplexobj(covmean):
            covmean = covmean.real
    return diff + float(np.trace(c1 + c2 - 2.0 * covmean))


def frechet_distance(emb1: np.ndarray, emb2: np.ndarray) -> float:
    """Fréchet distance between Gaussians fit to two embedding sets."""
    emb1, emb2 = np.atleast_2d(emb1), np.atleast_2d(emb2)
    if emb1.shape[0] < 2 or emb2.shape[0] < 2:
        raise ValueError("need at least 2 samples per set")
    return frechet_gaussians(emb1.mean(axis=0), np.cov(emb1, rowvar=False),
                             emb2.mean(axis=0), np.cov(emb2, rowvar=False))


def eval_frechet(model: RewardModel, generated: list[MotionSample],
                 real: list[MotionSample], rep: str = "joint") -> float:
    return frechet_distance(embed_corpus(model, generated, rep),
                            embed_corpus(model, real, rep))


def summarize_runs(runs: list[dict[str, float]], level: float = 0.95
                   ) -> dict[str, tuple[float, float, float]]:
    """Per-metric mean with a t-based confidence interval over repeats."""
    out = {}
    for name in runs[0]:
        vals = np.array([r[name] for r in runs], dtype=np.float64)
        mean = float(vals.mean())
        if len(vals) > 1:
            half = float(stats.t.ppf(0.5 + level / 2, len(vals) - 1)
                         * vals.std(ddof=1) / np.sqrt(len(vals)))
        else:
            half = 0.0
        out[name] = (mean, mean - half, mean + half)
    return out


def write_report(path, entries: dict) -> None:
    """name = value lines; interval entries render as mean [lo, hi]."""
    with open(path, "w") as fh:
        for name, value in entries.items():
            if isinstance(value, tuple):
                mean, lo, hi = value
                fh.write(f"{name} = {mean:.17g} [{lo:.17g}, {hi:.17g}]\n")
            else:
                fh.write(f"{name} = {value:.17g}\n")


def write_metrics_csv(path, entries: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value", "ci_low", "ci_high"])
        for name, value in entries.items():
            if isinstance(value, tuple):
                mean, lo, hi = value
                writer.writerow([name, f"{mean:.17g}", f"{lo:.17g}", f"{hi:.17g}"])
            else:
                writer.writerow([name, f"{value:.17g}", "", ""])
