import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionlab import autodiff as ad
from motionlab import reward as rw
from motionlab import selfrefine as sr
from motionlab import synth

LN2 = np.log(2.0)


@pytest.fixture(scope="module")
def corpus():
    return synth.generate_corpus(30, 3, seed=2)


@pytest.fixture(scope="module")
def model():
    return rw.RewardModel(n_labels=3, seed=13)


def brute_force_topk(model, corpus, label, k, rep="joint"):
    scored = sorted(
        ((sr.semantic_score(model, s.view(rep), rep, label).item(), i)
         for i, s in enumerate(corpus)),
        key=lambda si: (-si[0], si[1]))
    return [i for _, i in scored[:k]]


class TestRetrieval:
    def test_full_k_returns_every_id(self, model, corpus):
        rset = sr.retrieve_topk(model, corpus, 0, k=len(corpus))
        assert sorted(rset.ids) == list(range(len(corpus)))

    def test_matches_exhaustive_oracle(self, model, corpus):
        for label in range(3):
            for k in (1, 3, 7, len(corpus)):
                rset = sr.retrieve_topk(model, corpus, label, k)
                assert rset.ids == brute_force_topk(model, corpus, label, k)

    def test_scores_non_increasing(self, model, corpus):
        rset = sr.retrieve_topk(model, corpus, 1, k=10)
        assert all(a >= b for a, b in zip(rset.scores, rset.scores[1:]))

    def test_empty_corpus_rejected(self, model):
        with pytest.raises(ValueError):
            sr.retrieve_topk(model, [], 0, k=1)

    def test_oversized_k_rejected(self, model, corpus):
        with pytest.raises(ValueError):
            sr.retrieve_topk(model, corpus, 0, k=len(corpus) + 1)

    def test_tie_break_by_lowest_id(self, model, corpus):
        # duplicated motions score identically; the lower id must win
        twin_corpus = [corpus[0], corpus[0], corpus[1]]
        rset = sr.retrieve_topk(model, twin_corpus, 0, k=1)
        assert rset.ids == [0]


class TestMining:
    def test_hit_yields_self_pair(self):
        rset = sr.RetrievalSet(label=0, ids=[4, 2, 9], scores=[3.0, 2.0, 1.0], k=3)
        pair = sr.mine_pair(2, rset)
        assert (pair.winner, pair.loser) == (2, 2)
        assert pair.target == (0.5, 0.5)

    def test_miss_pairs_with_best_wrong_candidate(self, model, corpus):
        for label in range(3):
            rset = sr.retrieve_topk(model, corpus, label, k=5)
            outside = next(i for i in range(len(corpus)) if i not in rset.ids)
            pair = sr.mine_pair(outside, rset)
            assert pair.winner == outside
            assert pair.target == (1.0, 0.0)
            scores = [sr.semantic_score(model, s.view("joint"), "joint", label).item()
                      for s in corpus]
            assert pair.loser == int(np.lexsort((np.arange(len(scores)),
                                                 -np.asarray(scores)))[0])

    def test_whole_corpus_k_always_self_pair(self, model, corpus):
        for gt in (0, 7, 29):
            rset = sr.retrieve_topk(model, corpus, corpus[gt].label, k=len(corpus))
            pair = sr.mine_pair(gt, rset)
            assert pair.winner == pair.loser == gt


class TestSplLoss:
    def test_self_pair_zero(self, model, corpus):
        pair = sr.SplPair(winner=3, loser=3, target=(0.5, 0.5))
        loss = sr.spl_loss(model, pair, corpus, corpus[3].label)
        assert loss.item() == 0.0

    def test_equal_scores_hard_target_gives_ln2(self, model, corpus):
        # duplicated motion: equal rewards with target (1, 0)
        twin = [corpus[0], corpus[0]]
        pair = sr.SplPair(winner=0, loser=1, target=(1.0, 0.0))
        loss = sr.spl_loss(model, pair, twin, corpus[0].label)
        assert abs(loss.item() - LN2) < 1e-9

    def test_large_margin_limit(self):
        assert sr.kl_from_scores(ad.constant(20.0), ad.constant(0.0),
                                 (1.0, 0.0)).item() < 1e-8

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-30, 30))
    @settings(max_examples=80, deadline=None)
    def test_shift_invariance(self, s_w, s_l, shift):
        base = sr.kl_from_scores(ad.constant(s_w), ad.constant(s_l), (1.0, 0.0)).item()
        moved = sr.kl_from_scores(ad.constant(s_w + shift), ad.constant(s_l + shift),
                                  (1.0, 0.0)).item()
        assert abs(base - moved) < 1e-7 * max(1.0, abs(base))

    def test_self_pair_gradient_exactly_zero(self, model, corpus):
        pair = sr.SplPair(winner=5, loser=5, target=(0.5, 0.5))
        tape = ad.Tape()
        with ad.recording(tape):
            loss = sr.spl_loss(model, pair, corpus, corpus[5].label)
        grads = ad.backward(loss)
        enc = model.encoder_params()
        for p in enc.values():
            g = grads.get(p.uid)
            assert g is None or not np.any(g)

    def test_unknown_target_rejected(self):
        with pytest.raises(ValueError):
            sr.kl_from_scores(ad.constant(0.0), ad.constant(0.0), (0.7, 0.3))


class TestRefine:
    def test_no_failures_leaves_parameters_unchanged(self, corpus):
        model = rw.RewardModel(n_labels=3, seed=17)
        before = {k: v.values.copy() for k, v in model.params.items()}
        _, rates = sr.refine(model, corpus, epochs=3, k=len(corpus), seed=0)
        assert rates == [0.0, 0.0, 0.0]
        for k, arr in before.items():
            assert np.array_equal(model.params[k].values, arr)

    def test_deterministic_under_seed(self, corpus):
        results = []
        for _ in range(2):
            model = rw.RewardModel(n_labels=3, seed=19)
            log, rates = sr.refine(model, corpus, epochs=4, k=3, seed=5)
            results.append((rates, {k: v.values.copy() for k, v in model.params.items()}))
        assert results[0][0] == results[1][0]
        for k in results[0][1]:
            assert np.array_equal(results[0][1][k], results[1][1][k])

    def test_only_encoders_move(self, corpus):
        model = rw.RewardModel(n_labels=3, seed=23)
        frozen_keys = [k for k in model.params
                       if not k.startswith(("enc_", "txt_"))]
        before = {k: model.params[k].values.copy() for k in frozen_keys}
        sr.refine(model, corpus, epochs=4, k=2, seed=1)
        for k in frozen_keys:
            assert np.array_equal(model.params[k].values, before[k]), k

    def test_mining_log_csv(self, corpus, tmp_path):
        model = rw.RewardModel(n_labels=3, seed=29)
        log, _ = sr.refine(model, corpus, epochs=2, k=4, seed=3)
        path = tmp_path / "mining.csv"
        sr.write_mining_log(path, log)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,label,gt_in_topk,loser,loss"
        assert len(lines) == 1 + 2 * len(corpus)

    def test_adversarial_duplicates_failure_rate_drops(self, toy_corpus, sched50):
        """Seeded training-run oracle: planted near-matches with wrong
        labels must get pushed out of the top-k within 20 epochs."""
        rng = np.random.default_rng(31)
        corpus = list(toy_corpus)
        for c in range(3):
            victim = next(s for s in corpus if s.label == c)
            angles = synth.rotation_from_joints(victim.joint)
            impostor = synth.MotionSample.from_angles(
                angles + rng.normal(0, 0.02, angles.shape), (c + 1) % 3)
            corpus.append(impostor)
        model = rw.RewardModel(n_labels=3, seed=37)
        rw.pretrain_semantic(model, corpus, epochs=40, batch_size=12,
                             lr=3e-3, seed=41, schedule=sched50)
        _, rates = sr.refine(model, corpus, epochs=20, k=3, lr=2e-3, seed=43)
        assert rates[0] > 0.0
        assert min(rates[1:]) < rates[0]
