import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionlab import autodiff as ad
from motionlab import reward as rw
from motionlab.synth import MotionDims
from tests.conftest import param_grad_check

LN2 = np.log(2.0)


def small_model(seed=0):
    dims = MotionDims(frames=5, joints=3, kinematic=12, rotation=2)
    cfg = rw.RewardConfig(shared_dim=6, enc_hidden=8, txt_hidden=6, dec_hidden=8,
                          head_hidden=4, time_dim=4, lora_rank=2, lora_alpha=4.0)
    return rw.RewardModel(dims=dims, n_labels=3, cfg=cfg, seed=seed)


def small_batch(n=3, seed=0):
    from motionlab import synth
    dims = MotionDims(frames=5, joints=3, kinematic=12, rotation=2)
    return synth.generate_corpus(max(n, 3), 3, seed=seed, dims=dims)[:n]


class TestHuberForms:
    def test_rec_zero_when_all_equal(self):
        x = np.array([[0.3, -0.2]])
        assert rw.loss_rec(x, x, x).item() == 0.0

    def test_rec_scalar_closed_form(self):
        # two quadratic branches at 0.5 plus a zero cross term
        out = rw.loss_rec(np.array(0.0), np.array(0.5), np.array(0.5))
        assert abs(out.item() - 0.25) < 1e-15

    def test_linear_tail_slope(self):
        # numeric slope fit far outside the quadratic zone
        rs = np.linspace(10.0, 20.0, 6)
        vals = [rw.huber_loss(np.array(r), np.array(0.0)).item() for r in rs]
        slope = np.polyfit(rs, vals, 1)[0]
        assert abs(slope - 1.0) < 1e-9

    def test_lat_zero_and_unit_offset(self):
        z = ad.constant(np.linspace(-1, 1, 8))
        assert rw.loss_lat(z, z).item() == 0.0
        shifted = ad.constant(z.values + 1.0)
        assert abs(rw.loss_lat(shifted, z).item() - 0.5) < 1e-15

    def test_lat_relaxed_triangle_bound_numeric(self):
        # the quadratic core only admits a factor-2 triangle bound:
        # h(x+y) <= 2 h(x) + 2 h(y); the plain bound fails at midpoints
        rng = np.random.default_rng(0)
        for _ in range(200):
            a, b, c = (ad.constant(rng.standard_normal(6)) for _ in range(3))
            lhs = rw.loss_lat(a, c).item()
            rhs = rw.loss_lat(a, b).item() + rw.loss_lat(b, c).item()
            assert lhs <= 2.0 * rhs + 1e-9
        a = ad.constant(np.zeros(1))
        c = ad.constant(np.ones(1))
        mid = ad.constant(np.full(1, 0.5))
        plain = rw.loss_lat(a, mid).item() + rw.loss_lat(mid, c).item()
        assert rw.loss_lat(a, c).item() > plain  # documents the failure mode


class TestKlForms:
    def test_identical_standard_gaussians_zero(self):
        q = rw.Gaussian.standard(5)
        assert rw.loss_kl(q, q).item() == 0.0

    def test_unit_shift_half_nat_per_dim(self):
        d = 7
        q1 = rw.Gaussian(ad.constant(np.ones(d)), ad.constant(np.ones(d)))
        q0 = rw.Gaussian.standard(d)
        assert abs(rw.kl_diag(q1, q0).item() / d - 0.5) < 1e-12

    def test_total_symmetric_under_swap(self):
        rng = np.random.default_rng(1)
        qa = rw.Gaussian(ad.constant(rng.standard_normal(4)),
                         ad.constant(np.exp(rng.standard_normal(4))))
        qb = rw.Gaussian(ad.constant(rng.standard_normal(4)),
                         ad.constant(np.exp(rng.standard_normal(4))))
        assert abs(rw.loss_kl(qa, qb).item() - rw.loss_kl(qb, qa).item()) < 1e-12

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(ValueError):
            rw.Gaussian(ad.constant(np.zeros(3)), ad.constant(np.array([1.0, 0.0, 1.0])))

    def test_nonnegative_on_random_pairs(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            qa = rw.Gaussian(ad.constant(rng.standard_normal(3)),
                             ad.constant(np.exp(rng.standard_normal(3))))
            qb = rw.Gaussian(ad.constant(rng.standard_normal(3)),
                             ad.constant(np.exp(rng.standard_normal(3))))
            assert rw.kl_diag(qa, qb).item() >= -1e-12


class TestInfoNce:
    def test_single_pair_zero(self):
        a = ad.constant(np.array([[0.3, -0.7]]))
        assert rw.loss_infonce(a, a, tau=1.0).item() == 0.0

    @pytest.mark.parametrize("tau", [0.1, 1.0, 3.7])
    def test_identical_rows_temperature_free(self, tau):
        a = ad.constant(np.tile([[1.0, 2.0, 3.0]], (4, 1)))
        assert abs(rw.loss_infonce(a, a, tau).item() - 2 * np.log(4)) < 1e-9

    def test_orthogonal_matched_pairs(self):
        a = ad.constant(np.eye(2))
        expected = 2 * np.log(1 + np.exp(-1.0))
        assert abs(rw.loss_infonce(a, a, tau=1.0).item() - expected) < 1e-9

    def test_zero_norm_row_rejected(self):
        a = ad.constant(np.array([[1.0, 0.0], [0.0, 0.0]]))
        with pytest.raises(ValueError):
            rw.loss_infonce(a, a, tau=1.0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ad.ShapeError):
            rw.loss_infonce(ad.constant(np.ones((2, 3))), ad.constant(np.ones((3, 3))))


class TestCrossRepresentation:
    def test_identical_single_sample_zero(self):
        z = ad.constant(np.array([[0.5, -0.5, 1.0]]))
        q = rw.Gaussian(ad.constant(np.zeros(3)), ad.constant(np.ones(3)))
        assert rw.loss_cra(z, z, [q], [q]).item() == 0.0

    def test_js_self_zero(self):
        rng = np.random.default_rng(3)
        q = rw.Gaussian(ad.constant(rng.standard_normal(6)),
                        ad.constant(np.exp(rng.standard_normal(6))))
        assert rw.js_diag(q, q).item() == 0.0

    def test_l1_weight_scales_linearly(self):
        rng = np.random.default_rng(4)
        z1 = ad.constant(rng.standard_normal((2, 4)))
        z2 = ad.constant(rng.standard_normal((2, 4)))
        q = [rw.Gaussian.standard(4), rw.Gaussian.standard(4)]
        base = rw.loss_cra(z1, z2, q, q, alphas=(0.1, 0.0, 0.0)).item()
        doubled = rw.loss_cra(z1, z2, q, q, alphas=(0.2, 0.0, 0.0)).item()
        assert abs(doubled - 2.0 * base) < 1e-12


class TestHeadLosses:
    def test_zero_margin_ln2(self):
        s = ad.constant(1.23)
        assert abs(rw.ranking_loss(s, s).item() - LN2) < 1e-12

    def test_unit_margins(self):
        w, l = ad.constant(1.0), ad.constant(0.0)
        assert abs(rw.ranking_loss(w, l).item() - np.log(1 + np.exp(-1))) < 1e-12
        assert abs(rw.ranking_loss(l, w).item() - np.log(1 + np.exp(1))) < 1e-12

    def test_bce_closed_forms(self):
        # classifier probability p maps to logit log(p/(1-p))
        logit_half = ad.constant(0.0)
        assert abs(ad.softplus(-logit_half).item() - LN2) < 1e-12
        logit_09 = ad.constant(np.log(0.9 / 0.1))
        assert abs(ad.softplus(-logit_09).item() - (-np.log(0.9))) < 1e-12
        assert abs(ad.softplus(logit_09).item() - (-np.log(0.1))) < 1e-12

    def test_loss_auth_matches_classifier_output(self):
        from motionlab.synth import DeepfakeExample
        model = small_model()
        batch = small_batch()
        ex_real = DeepfakeExample(motion=batch[0], is_real=True)
        ex_fake = DeepfakeExample(motion=batch[0], is_real=False)
        _, z = model.encode_motion(batch[0].view("joint"), "joint", adapter="omega")
        p = model.classifier(z).item()
        assert abs(rw.loss_auth(model, ex_real).item() - (-np.log(p))) < 1e-10
        assert abs(rw.loss_auth(model, ex_fake).item() - (-np.log(1 - p))) < 1e-10


class TestSemTotal:
    def test_zero_components_zero_total(self):
        # degenerate check through the weighted form: all-equal args
        x = np.zeros((2, 2))
        assert rw.loss_rec(x, x, x).item() == 0.0

    def test_component_decomposition(self):
        model = small_model()
        batch = small_batch(4)
        rng = np.random.default_rng(0)
        total, parts = rw.loss_sem_total(model, batch, rng, rep_pair=("joint", "rotation"))
        lam = model.cfg.lambdas
        recon = (parts["rec"] + lam[0] * parts["kl"] + lam[1] * parts["lat"]
                 + lam[2] * parts["cl"] + lam[3] * parts["cra"])
        assert abs(total.item() - recon) < 1e-12

    def test_one_epoch_decreases_running_mean(self):
        model = small_model(seed=1)
        batch = small_batch(12, seed=2)
        hist = rw.pretrain_semantic(model, batch, epochs=6, batch_size=4,
                                    lr=5e-3, seed=3)
        third = len(hist) // 3
        assert np.mean(hist[-third:]) < np.mean(hist[:third])


class TestLossGradients:
    """Backward gradients of every loss path against central differences."""

    def test_sem_total_param_gradients(self):
        model = small_model(seed=5)
        batch = small_batch(3, seed=6)

        def loss_fn():
            rng = np.random.default_rng(11)  # frozen sampling noise
            total, _ = rw.loss_sem_total(model, batch, rng,
                                         rep_pair=("kinematic", "joint"))
            return total

        names = ["proj_kinematic_W", "enc_l1_W", "enc_l2_b", "txt_l1_W",
                 "dec_trunk_W", "dec_kinematic_W"]
        assert param_grad_check(loss_fn, model.params, names, coords_per_param=4) < 1e-4

    def test_latent_norm_encoder_gradient(self):
        model = small_model(seed=7)
        batch = small_batch(1, seed=8)
        view = batch[0].view("joint")

        def loss_fn():
            _, z = model.encode_motion(view, "joint")
            return ad.reduce_sum(z * z)

        names = ["enc_l1_W", "enc_l1_b", "enc_l2_W", "proj_joint_W"]
        assert param_grad_check(loss_fn, model.params, names, coords_per_param=5) < 1e-4

    def test_preference_adapter_gradients(self):
        from motionlab.synth import PreferencePair
        model = small_model(seed=9)
        batch = small_batch(2, seed=10)
        pair = PreferencePair(winner=batch[0], loser=batch[1], label=0)

        def loss_fn():
            return rw.loss_pref(model, pair)

        names = ["lora_psi_l1_A", "lora_psi_l2_A", "critic_l1_W", "critic_l2_W"]
        assert param_grad_check(loss_fn, model.params, names, coords_per_param=4) < 1e-4


class TestEncoderModes:
    def test_eval_mode_returns_mean(self):
        model = small_model()
        batch = small_batch(1)
        q, z = model.encode_motion(batch[0].view("joint"), "joint")
        assert np.array_equal(z.values, q.mu.values)

    def test_tiny_sigma_sample_collapses_to_mean(self):
        model = small_model()
        # push the log-scale half of the output far negative
        bias = model.params["enc_l2_b"].values.copy()
        bias[model.cfg.shared_dim:] = -40.0
        model.params["enc_l2_b"] = ad.parameter(bias)
        batch = small_batch(1)
        q, z = model.encode_motion(batch[0].view("joint"), "joint",
                                   rng=np.random.default_rng(0))
        assert np.max(np.abs(z.values - q.mu.values)) < 1e-15

    @given(st.integers(0, 40))
    @settings(max_examples=15, deadline=None)
    def test_noise_level_changes_embedding(self, t):
        model = small_model()
        batch = small_batch(1)
        q0, _ = model.encode_motion(batch[0].view("joint"), "joint", t=0)
        qt, _ = model.encode_motion(batch[0].view("joint"), "joint", t=t)
        if t == 0:
            assert np.array_equal(q0.mu.values, qt.mu.values)
        else:
            assert not np.array_equal(q0.mu.values, qt.mu.values)
