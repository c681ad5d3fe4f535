"""Hard-negative mining over the corpus and KL refinement of the
semantic reward.

Each epoch re-scores the corpus, retrieves the top-k motions per label,
and pairs every ground-truth motion with the best-scoring wrong
retrieval when it fell outside the top-k.  The pair probabilities
softmax(score_w, score_l) are pulled toward (1, 0); a ground truth that
was retrieved pairs with itself against the target (0.5, 0.5), which
contributes exactly zero loss and zero gradient.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .optim import Adam, OptimizerConfig
from .reward import RewardModel
from .synth import MotionSample

__all__ = [
    "RetrievalSet",
    "SplPair",
    "MiningLogRow",
    "semantic_score",
    "retrieve_topk",
    "mine_pair",
    "kl_from_scores",
    "spl_loss",
    "refine",
    "write_mining_log",
]

LN2 = float(np.log(2.0))


@dataclass
class RetrievalSet:
    """Top-k corpus ids for one label, rank order, ties to the lowest id."""

    label: int
    ids: list[int]
    scores: list[float]
    k: int


@dataclass
class SplPair:
    winner: int
    loser: int
    target: tuple[float, float]  # (1,0) for a mined negative, (0.5,0.5) otherwise


@dataclass
class MiningLogRow:
    epoch: int
    label: int
    gt_in_topk: bool
    loser: int
    loss: float


def semantic_score(model: RewardModel, x, rep: str, label: int, t: int = 0):
    """Cosine of the motion and label posterior means (differentiable)."""
    q_m, _ = model.encode_motion(x, rep, t=t)
    q_c, _ = model.encode_text(label)
    return nn.cosine(q_m.mu, q_c.mu)


def retrieve_topk(model: RewardModel, corpus: list[MotionSample], label: int,
                  k: int, rep: str = "joint") -> RetrievalSet:
    """Exact top-k of the corpus by semantic score against `label`."""
    if not corpus:
        raise ValueError("retrieve_topk: empty corpus")
    if k > len(corpus):
        raise ValueError(f"k={k} exceeds corpus size {len(corpus)}")
    scored = [(semantic_score(model, s.view(rep), rep, label).item(), i)
              for i, s in enumerate(corpus)]
    scored.sort(key=lambda si: (-si[0], si[1]))
    top = scored[:k]
    return RetrievalSet(label=label, ids=[i for _, i in top],
                        scores=[s for s, _ in top], k=k)


def mine_pair(gt_id: int, retrieval: RetrievalSet) -> SplPair:
    """(gt, best wrong candidate) when gt was missed, else the self pair."""
    if gt_id in retrieval.ids:
        return SplPair(winner=gt_id, loser=gt_id, target=(0.5, 0.5))
    return SplPair(winner=gt_id, loser=retrieval.ids[0], target=(1.0, 0.0))


def kl_from_scores(s_w, s_l, target: tuple[float, float]):
    """KL(target || softmax(s_w, s_l)), with 0*log(0) taken as 0.

    For target (1, 0) this reduces to softplus(s_l - s_w); the equal
    target uses the symmetric form, which is exactly zero (value and
    gradient) when both scores are the same tensor.
    """
    if target == (1.0, 0.0):
        return ad.softplus(ad.as_tensor(s_l) - ad.as_tensor(s_w))
    if target == (0.5, 0.5):
        margin = ad.as_tensor(s_w) - ad.as_tensor(s_l)
        return 0.5 * (ad.softplus(margin) + ad.softplus(-margin)) - LN2
    raise ValueError(f"unsupported target distribution {target}")


def spl_loss(model: RewardModel, pair: SplPair, corpus: list[MotionSample],
             label: int, rep: str = "joint"):
    """Refinement loss of one mined pair under the current reward scores."""
    s_w = semantic_score(model, corpus[pair.winner].view(rep), rep, label)
    if pair.winner == pair.loser:
        return kl_from_scores(s_w, s_w, (0.5, 0.5))
    s_l = semantic_score(model, corpus[pair.loser].view(rep), rep, label)
    return kl_from_scores(s_w, s_l, pair.target)


def refine(model: RewardModel, corpus: list[MotionSample], epochs: int = 10,
           k: int = 5, lr: float = 1e-3, seed: int = 0, rep: str = "joint"
           ) -> tuple[list[MiningLogRow], list[float]]:
    """Alternate re-mining and one refinement update per epoch.

    Updates both encoders; returns the mining log and the per-epoch
    mining-failure rate (fraction of ground truths outside their top-k).
    """
    adam = Adam(model.encoder_params(), OptimizerConfig(lr=lr, clip_norm=None))
    tape = ad.Tape()
    log: list[MiningLogRow] = []
    failure_rates: list[float] = []
    labels = sorted({s.label for s in corpus})
    for epoch in range(epochs):
        retrievals = {c: retrieve_topk(model, corpus, c, k, rep) for c in labels}
        pairs = [(i, mine_pair(i, retrievals[s.label])) for i, s in enumerate(corpus)]
        failed = [(i, p) for i, p in pairs if p.winner != p.loser]
        failure_rates.append(len(failed) / len(pairs))
        if failed:
            tape.reset()
            with ad.recording(tape):
                terms = [spl_loss(model, p, corpus, corpus[i].label, rep)
                         for i, p in failed]
                # self pairs contribute exactly zero, so the mean runs
                # over all mined pairs
                loss = sum(terms[1:], terms[0]) * (1.0 / len(pairs))
            grads = ad.backward(loss)
            adam.step(grads)
            model.params.update(adam.params)
            losses = {i: t.item() for (i, _), t in zip(failed, terms)}
        else:
            losses = {}
        for i, p in pairs:
            log.append(MiningLogRow(epoch=epoch, label=corpus[i].label,
                                    gt_in_topk=p.winner == p.loser,
                                    loser=p.loser, loss=losses.get(i, 0.0)))
    return log, failure_rates


def write_mining_log(path, rows: list[MiningLogRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "label", "gt_in_topk", "loser", "loss"])
        for r in rows:
            writer.writerow([r.epoch, r.label, int(r.gt_in_topk), r.loser,
                             f"{r.loss:.17g}"])
