"""Unified multi-head reward model over heterogeneous motion views.

Per-representation linear projections map each view into a shared
d-dimensional space; a variational motion encoder and a label encoder
produce diagonal Gaussian posteriors there.  Semantic alignment trains
the backbone; preference and authenticity scoring run through low-rank
adapted copies of the encoder weights plus a critic / classifier head,
so the backbone is never touched by head training.

The encoder is noise-aware: a sinusoidal code of the noise level is
concatenated to every frame, and pre-training feeds forward-noised
motions half of the time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import TapeTensor
from .diffusion import NoiseSchedule, forward_noise
from .optim import Adam, OptimizerConfig
from .synth import REPRESENTATIONS, DeepfakeExample, MotionDims, MotionSample, PreferencePair

__all__ = [
    "RewardConfig",
    "Gaussian",
    "RewardModel",
    "huber_loss",
    "loss_rec",
    "kl_diag",
    "loss_kl",
    "js_diag",
    "loss_lat",
    "loss_infonce",
    "loss_cra",
    "loss_sem_total",
    "ranking_loss",
    "loss_pref",
    "loss_auth",
    "reward_scores",
    "pretrain_semantic",
    "train_preference",
    "train_authenticity",
    "embed_corpus",
]


@dataclass
class RewardConfig:
    shared_dim: int = 32
    enc_hidden: int = 48
    txt_hidden: int = 32
    dec_hidden: int = 48
    head_hidden: int = 16
    time_dim: int = 16
    tau: float = 0.1
    delta: float = 1.0
    lora_rank: int = 4
    lora_alpha: float = 8.0
    noise_prob: float = 0.5
    log_sigma_init: float = -3.0
    pos_dim: int = 8  # per-frame position code, keeps phase through pooling
    # weights on (kl, lat, contrastive, cross-representation)
    lambdas: tuple[float, float, float, float] = (1e-5, 1e-5, 1e-1, 1e-1)
    # weights on (l1, js, contrastive) inside the cross-representation term
    cra_alphas: tuple[float, float, float] = (0.1, 1e-5, 0.1)


@dataclass
class Gaussian:
    """Diagonal Gaussian with strictly positive scale."""

    mu: TapeTensor
    sigma: TapeTensor

    def __post_init__(self) -> None:
        if np.any(self.sigma.values <= 0.0):
            raise ValueError("Gaussian sigma must be strictly positive")

    @classmethod
    def standard(cls, dim: int) -> "Gaussian":
        return cls(ad.constant(np.zeros(dim)), ad.constant(np.ones(dim)))


class RewardModel:
    """Projections, encoders, decoders, adapters, and scoring heads."""

    ADAPTERS = ("psi", "omega")

    def __init__(self, dims: MotionDims = MotionDims.toy(), n_labels: int = 3,
                 cfg: RewardConfig | None = None, seed: int = 0):
        self.dims = dims
        self.n_labels = n_labels
        self.cfg = cfg or RewardConfig()
        c = self.cfg
        rng = np.random.default_rng(seed)
        p: dict[str, TapeTensor] = {}
        for rep in REPRESENTATIONS:
            nn.init_dense(rng, p, f"proj_{rep}", dims.view_dim(rep), c.shared_dim)
        enc_in = c.shared_dim + c.pos_dim + c.time_dim
        nn.init_dense(rng, p, "enc_l1", enc_in, c.enc_hidden)
        nn.init_dense(rng, p, "enc_l2", c.enc_hidden, 2 * c.shared_dim)
        nn.init_dense(rng, p, "txt_l1", n_labels, c.txt_hidden)
        nn.init_dense(rng, p, "txt_l2", c.txt_hidden, 2 * c.shared_dim)
        # start the posteriors tight so reparameterization noise does not
        # drown per-sample detail before reconstruction can use it
        for name in ("enc_l2_b", "txt_l2_b"):
            bias = p[name].values
            bias[c.shared_dim:] = c.log_sigma_init
            p[name] = ad.parameter(bias)
        nn.init_dense(rng, p, "dec_trunk", c.shared_dim, c.dec_hidden)
        for rep in REPRESENTATIONS:
            nn.init_dense(rng, p, f"dec_{rep}", c.dec_hidden,
                          dims.frames * dims.view_dim(rep))
        nn.init_dense(rng, p, "critic_l1", c.shared_dim, c.head_hidden)
        nn.init_dense(rng, p, "critic_l2", c.head_hidden, 1)
        nn.init_dense(rng, p, "classif_l1", c.shared_dim, c.head_hidden)
        nn.init_dense(rng, p, "classif_l2", c.head_hidden, 1)
        # low-rank pairs on both encoder layers; B zero so adaptation
        # starts as an exact identity
        for name in self.ADAPTERS:
            for layer, (n_in, n_out) in (("l1", (enc_in, c.enc_hidden)),
                                         ("l2", (c.enc_hidden, 2 * c.shared_dim))):
                p[f"lora_{name}_{layer}_A"] = ad.parameter(
                    rng.normal(0.0, 0.02, size=(n_in, c.lora_rank)))
                p[f"lora_{name}_{layer}_B"] = ad.parameter(
                    np.zeros((c.lora_rank, n_out)))
        self.params = p
        self._pos_codes = np.stack([nn.sinusoidal_embedding(f, c.pos_dim)
                                    for f in range(dims.frames)])

    # -- parameter groups ---------------------------------------------------

    def backbone_params(self) -> dict[str, TapeTensor]:
        skip = ("lora_", "critic_", "classif_")
        return {k: v for k, v in self.params.items() if not k.startswith(skip)}

    def encoder_params(self) -> dict[str, TapeTensor]:
        """Motion and label encoder weights (the self-refinement target set)."""
        return {k: v for k, v in self.params.items()
                if k.startswith(("enc_", "txt_"))}

    def adapter_params(self, which: str) -> dict[str, TapeTensor]:
        head = "critic_" if which == "psi" else "classif_"
        return {k: v for k, v in self.params.items()
                if k.startswith((f"lora_{which}_", head))}

    def set_trainable(self, flag: bool) -> None:
        for v in self.params.values():
            v.requires_grad = flag

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.values for k, v in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            raise ValueError("checkpoint keys do not match this model")
        for k, arr in arrays.items():
            if arr.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape}")
            self.params[k] = ad.parameter(arr.copy())

    # -- forward pieces -----------------------------------------------------

    def _enc_weight(self, layer: str, adapter: str | None) -> TapeTensor:
        base = self.params[f"enc_{layer}_W"]
        if adapter is None:
            return base
        a = self.params[f"lora_{adapter}_{layer}_A"]
        b = self.params[f"lora_{adapter}_{layer}_B"]
        return base + (self.cfg.lora_alpha / self.cfg.lora_rank) * ad.matmul(a, b)

    def project(self, x, rep: str) -> TapeTensor:
        if rep not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {rep!r}")
        x = ad.as_tensor(x)
        expected = (self.dims.frames, self.dims.view_dim(rep))
        if x.shape != expected:
            raise ad.ShapeError(f"{rep} view must be {expected}, got {x.shape}")
        return nn.dense(self.params, f"proj_{rep}", x)

    def encode_motion(self, x, rep: str, t: int = 0, adapter: str | None = None,
                      rng: np.random.Generator | None = None) -> tuple[Gaussian, TapeTensor]:
        """Posterior and latent for one motion view.

        `rng` switches on reparameterized sampling; without it the
        latent is the posterior mean (eval mode).
        """
        h = self.project(x, rep)
        temb = nn.sinusoidal_embedding(t, self.cfg.time_dim)
        tiled = ad.constant(np.tile(temb, (self.dims.frames, 1)))
        hin = ad.concat([h, ad.constant(self._pos_codes), tiled], axis=1)
        a1 = ad.tanh(ad.matmul(hin, self._enc_weight("l1", adapter)) + self.params["enc_l1_b"])
        a2 = ad.matmul(a1, self._enc_weight("l2", adapter)) + self.params["enc_l2_b"]
        pooled = ad.reduce_mean(a2, axis=0)
        d = self.cfg.shared_dim
        mu = ad.take_slice(pooled, 0, d)
        sigma = ad.exp(ad.take_slice(pooled, d, 2 * d))
        q = Gaussian(mu, sigma)
        z = mu if rng is None else mu + sigma * ad.constant(rng.standard_normal(d))
        return q, z

    def encode_text(self, label: int,
                    rng: np.random.Generator | None = None) -> tuple[Gaussian, TapeTensor]:
        hot = ad.constant(nn.one_hot(label, self.n_labels))
        a1 = ad.tanh(nn.dense(self.params, "txt_l1", hot))
        a2 = nn.dense(self.params, "txt_l2", a1)
        d = self.cfg.shared_dim
        mu = ad.take_slice(a2, 0, d)
        sigma = ad.exp(ad.take_slice(a2, d, 2 * d))
        q = Gaussian(mu, sigma)
        z = mu if rng is None else mu + sigma * ad.constant(rng.standard_normal(d))
        return q, z

    def decode(self, z: TapeTensor, rep: str) -> TapeTensor:
        trunk = ad.tanh(nn.dense(self.params, "dec_trunk", z))
        flat = nn.dense(self.params, f"dec_{rep}", trunk)
        return ad.reshape(flat, (self.dims.frames, self.dims.view_dim(rep)))

    def critic(self, z: TapeTensor) -> TapeTensor:
        a = ad.tanh(nn.dense(self.params, "critic_l1", z))
        return ad.reduce_sum(nn.dense(self.params, "critic_l2", a))

    def classifier_logit(self, z: TapeTensor) -> TapeTensor:
        a = ad.tanh(nn.dense(self.params, "classif_l1", z))
        return ad.reduce_sum(nn.dense(self.params, "classif_l2", a))

    def classifier(self, z: TapeTensor) -> TapeTensor:
        return ad.sigmoid(self.classifier_logit(z))


# ---------------------------------------------------------------------------
# losses


def huber_loss(a, b, delta: float = 1.0) -> TapeTensor:
    """Mean elementwise smooth penalty of (a - b)."""
    return ad.reduce_mean(ad.huber(ad.as_tensor(a) - ad.as_tensor(b), delta))


def loss_rec(x, xhat_m, xhat_c, delta: float = 1.0) -> TapeTensor:
    """Reconstruction from motion latent, from text latent, and the
    cross term between the two reconstructions."""
    return (huber_loss(xhat_c, x, delta) + huber_loss(xhat_m, x, delta)
            + huber_loss(xhat_m, xhat_c, delta))


def kl_diag(q1: Gaussian, q2: Gaussian) -> TapeTensor:
    """KL(q1 || q2) between diagonal Gaussians, summed over dimensions."""
    r = q1.sigma / q2.sigma
    md = (q1.mu - q2.mu) / q2.sigma
    return ad.reduce_sum(0.5 * (r * r + md * md) - ad.log(r) - 0.5)


def loss_kl(q_c: Gaussian, q_m: Gaussian, prior: Gaussian | None = None) -> TapeTensor:
    """Symmetric text/motion alignment plus collapse-prevention terms."""
    if prior is None:
        prior = Gaussian.standard(q_c.mu.values.shape[0])
    return (kl_diag(q_c, q_m) + kl_diag(q_m, q_c)
            + kl_diag(q_m, prior) + kl_diag(q_c, prior))


def js_diag(q1: Gaussian, q2: Gaussian) -> TapeTensor:
    """Symmetrized divergence via the moment-matched midpoint Gaussian."""
    mid = Gaussian(0.5 * (q1.mu + q2.mu),
                   ad.sqrt(0.5 * (q1.sigma * q1.sigma + q2.sigma * q2.sigma)))
    return 0.5 * (kl_diag(q1, mid) + kl_diag(q2, mid))


def loss_lat(z_m: TapeTensor, z_c: TapeTensor, delta: float = 1.0) -> TapeTensor:
    return huber_loss(z_m, z_c, delta)


def loss_infonce(a: TapeTensor, b: TapeTensor, tau: float = 0.1) -> TapeTensor:
    """Symmetric cosine-similarity contrastive loss over matched rows."""
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    if a.shape != b.shape or a.ndim != 2:
        raise ad.ShapeError(f"batch shapes must match, got {a.shape} vs {b.shape}")
    if (np.linalg.norm(a.values, axis=1).min() < 1e-12
            or np.linalg.norm(b.values, axis=1).min() < 1e-12):
        raise ValueError("loss_infonce: zero-norm embedding row")
    batch = a.shape[0]

    def normalize(x):
        n = ad.sqrt(ad.reduce_sum(x * x, axis=1, keepdims=True))
        return x / n

    sims = ad.matmul(normalize(a), ad.transpose(normalize(b))) * (1.0 / tau)
    eye = ad.constant(np.eye(batch))

    def direction(logits):
        lse = ad.reduce_sum(ad.log(ad.reduce_sum(ad.exp(logits), axis=1)))
        return lse - ad.reduce_sum(logits * eye)

    return (direction(sims) + direction(ad.transpose(sims))) * (1.0 / batch)


def loss_cra(z1: TapeTensor, z2: TapeTensor, q1: list[Gaussian], q2: list[Gaussian],
             alphas: tuple[float, float, float] = (0.1, 1e-5, 0.1),
             tau: float = 0.1, delta: float = 1.0) -> TapeTensor:
    """Cross-representation coupling of latents and posteriors.

    `z1`, `z2` are (B, d) latent batches of the same motions under two
    representations; `q1`, `q2` the per-sample posteriors.
    """
    js_terms = [js_diag(a, b) for a, b in zip(q1, q2)]
    js_mean = sum(js_terms[1:], js_terms[0]) * (1.0 / len(js_terms))
    return (alphas[0] * huber_loss(z1, z2, delta)
            + alphas[1] * js_mean
            + alphas[2] * loss_infonce(z1, z2, tau))


def ranking_loss(score_w: TapeTensor, score_l: TapeTensor) -> TapeTensor:
    """-log sigmoid(margin); ln 2 at zero margin."""
    return ad.softplus(-(score_w - score_l))


def loss_pref(model: RewardModel, pair: PreferencePair, rep: str = "joint") -> TapeTensor:
    """Critic ranking loss through the preference-adapted encoder."""
    _, z_w = model.encode_motion(pair.winner.view(rep), rep, adapter="psi")
    _, z_l = model.encode_motion(pair.loser.view(rep), rep, adapter="psi")
    return ranking_loss(model.critic(z_w), model.critic(z_l))


def loss_auth(model: RewardModel, example: DeepfakeExample, rep: str = "joint") -> TapeTensor:
    """Real/generated cross-entropy through the authenticity-adapted encoder."""
    _, z = model.encode_motion(example.motion.view(rep), rep, adapter="omega")
    logit = model.classifier_logit(z)
    return ad.softplus(-logit) if example.is_real else ad.softplus(logit)


def _stack_rows(rows: list[TapeTensor]) -> TapeTensor:
    return ad.concat([ad.reshape(r, (1, r.shape[0])) for r in rows], axis=0)


def loss_sem_total(model: RewardModel, samples: list[MotionSample],
                   rng: np.random.Generator, schedule: NoiseSchedule | None = None,
                   rep_pair: tuple[str, str] | None = None
                   ) -> tuple[TapeTensor, dict[str, float]]:
    """Weighted semantic objective over a batch.

    Returns the scalar loss and a value-only breakdown of its parts.
    Each sample trains in a sampled representation; a second sampled
    representation enters through the cross-representation term.
    `rep_pair` pins both choices for every sample (used by tests).
    """
    cfg = model.cfg

    rec_terms, kl_terms, lat_terms, noise_terms = [], [], [], []
    zc_rows, zm_rows, z2_rows = [], [], []
    q1_list, q2_list = [], []
    for s in samples:
        if rep_pair is None:
            i1, i2 = rng.choice(len(REPRESENTATIONS), size=2, replace=False)
            rep1, rep2 = REPRESENTATIONS[i1], REPRESENTATIONS[i2]
        else:
            rep1, rep2 = rep_pair
        clean = s.view(rep1)
        q_m, z_m = model.encode_motion(clean, rep1, rng=rng)
        q_c, z_c = model.encode_text(s.label, rng=rng)
        xhat_m = model.decode(z_m, rep1)
        xhat_c = model.decode(z_c, rep1)
        rec_terms.append(loss_rec(clean, xhat_m, xhat_c, cfg.delta))
        kl_terms.append(loss_kl(q_c, q_m))
        # alignment terms run on posterior means: scoring is mean-based
        # at eval time, and independent sampling noise would put a floor
        # under the cross-space correspondence
        lat_terms.append(loss_lat(q_m.mu, q_c.mu, cfg.delta))
        if schedule is not None and rng.random() < cfg.noise_prob:
            # noise-awareness branch: the level-t embedding chases the
            # detached clean embedding and still reconstructs the clean
            # motion, so noised inputs stay scoreable without blurring
            # the clean-side latents
            t = int(rng.integers(0, schedule.T))
            noised = forward_noise(clean, t, rng.standard_normal(clean.shape), schedule)
            q_n, _ = model.encode_motion(noised, rep1, t=t, rng=rng)
            target = ad.stop_gradient(q_m.mu)
            noise_terms.append(huber_loss(model.decode(q_n.mu, rep1), clean, cfg.delta)
                               + loss_lat(q_n.mu, target, cfg.delta))
        q2, _ = model.encode_motion(s.view(rep2), rep2, rng=rng)
        zm_rows.append(q_m.mu)
        zc_rows.append(q_c.mu)
        z2_rows.append(q2.mu)
        q1_list.append(q_m)
        q2_list.append(q2)

    inv_n = 1.0 / len(samples)
    rec = sum(rec_terms[1:], rec_terms[0]) * inv_n
    kl = sum(kl_terms[1:], kl_terms[0]) * inv_n
    lat = sum(lat_terms[1:], lat_terms[0]) * inv_n
    cl = loss_infonce(_stack_rows(zc_rows), _stack_rows(zm_rows), cfg.tau)
    cra = loss_cra(_stack_rows(zm_rows), _stack_rows(z2_rows), q1_list, q2_list,
                   cfg.cra_alphas, cfg.tau, cfg.delta)
    l1, l2, l3, l4 = cfg.lambdas
    total = rec + l1 * kl + l2 * lat + l3 * cl + l4 * cra
    noise = 0.0
    if noise_terms:
        noise = sum(noise_terms[1:], noise_terms[0]) * inv_n
        total = total + noise
        noise = noise.item()
    parts = {"rec": rec.item(), "kl": kl.item(), "lat": lat.item(),
             "cl": cl.item(), "cra": cra.item(), "noise": noise,
             "total": total.item()}
    return total, parts


def reward_scores(model: RewardModel, x, rep: str, t: int, label: int) -> dict[str, TapeTensor]:
    """Semantic / preference / authenticity scores at noise level t.

    Scores stay differentiable w.r.t. `x` when called under a recording
    tape; adapter activation is per-path and leaves the backbone and the
    other path untouched.
    """
    q_m, _ = model.encode_motion(x, rep, t=t)
    q_c, _ = model.encode_text(label)
    semantic = nn.cosine(q_m.mu, q_c.mu)
    _, z_psi = model.encode_motion(x, rep, t=t, adapter="psi")
    _, z_omega = model.encode_motion(x, rep, t=t, adapter="omega")
    return {
        "semantic": semantic,
        "preference": model.critic(z_psi),
        "authenticity": model.classifier(z_omega),
    }


# ---------------------------------------------------------------------------
# training loops


def pretrain_semantic(model: RewardModel, corpus: list[MotionSample],
                      epochs: int = 40, batch_size: int = 8, lr: float = 3e-3,
                      seed: int = 0, schedule: NoiseSchedule | None = None,
                      opt: OptimizerConfig | None = None) -> list[float]:
    """Train the backbone on the weighted semantic objective; returns the
    per-batch loss history."""
    rng = np.random.default_rng(seed)
    adam = Adam(model.backbone_params(), opt or OptimizerConfig(lr=lr, clip_norm=None))
    tape = ad.Tape()
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(corpus))
        for lo in range(0, len(corpus), batch_size):
            batch = [corpus[i] for i in order[lo:lo + batch_size]]
            if len(batch) < 2:
                continue
            tape.reset()
            with ad.recording(tape):
                total, _ = loss_sem_total(model, batch, rng, schedule)
            grads = ad.backward(total)
            adam.step(grads)
            # optimizer rebinds fresh tensors; keep the model dict in sync
            model.params.update(adam.params)
            history.append(total.item())
    return history


def _train_adapter(model: RewardModel, which: str, items: list, loss_fn,
                   steps: int, batch_size: int, lr: float, seed: int) -> list[float]:
    rng = np.random.default_rng(seed)
    adam = Adam(model.adapter_params(which), OptimizerConfig(lr=lr, clip_norm=None))
    tape = ad.Tape()
    history = []
    for _ in range(steps):
        idx = rng.integers(0, len(items), size=min(batch_size, len(items)))
        tape.reset()
        with ad.recording(tape):
            terms = [loss_fn(model, items[i]) for i in idx]
            loss = sum(terms[1:], terms[0]) * (1.0 / len(terms))
        grads = ad.backward(loss)
        adam.step(grads)
        model.params.update(adam.params)
        history.append(loss.item())
    return history


def train_preference(model: RewardModel, pairs: list[PreferencePair],
                     steps: int = 300, batch_size: int = 8, lr: float = 3e-3,
                     seed: int = 0, rep: str = "joint") -> list[float]:
    """Fit the psi adapter and critic head; backbone stays frozen."""
    return _train_adapter(model, "psi", pairs,
                          lambda m, p: loss_pref(m, p, rep), steps, batch_size, lr, seed)


def train_authenticity(model: RewardModel, examples: list[DeepfakeExample],
                       steps: int = 300, batch_size: int = 8, lr: float = 3e-3,
                       seed: int = 0, rep: str = "joint") -> list[float]:
    """Fit the omega adapter and classifier head; backbone stays frozen."""
    return _train_adapter(model, "omega", examples,
                          lambda m, e: loss_auth(m, e, rep), steps, batch_size, lr, seed)


def embed_corpus(model: RewardModel, samples: list[MotionSample],
                 rep: str = "joint") -> np.ndarray:
    """Posterior-mean embeddings (N, d), computed without recording."""
    return np.stack([model.encode_motion(s.view(rep), rep)[0].mu.values
                     for s in samples])
