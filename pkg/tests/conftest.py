import numpy as np
import pytest

from motionlab import autodiff as ad
from motionlab import diffusion, reward, synth


def finite_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x, coordinate by
    coordinate; the oracle side of every gradient check."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / denom)


def param_grad_check(loss_fn, params: dict, names=None, coords_per_param: int = 4,
                     h: float = 1e-5, seed: int = 0) -> float:
    """Compare backward gradients of `loss_fn()` against central
    differences on a random subset of parameter coordinates.

    Returns the worst relative error seen.  `loss_fn` must rebuild the
    graph from the current parameter values on every call.
    """
    rng = np.random.default_rng(seed)
    tape = ad.Tape()
    with ad.recording(tape):
        loss = loss_fn()
    grads = ad.backward(loss)
    worst = 0.0
    for name in (names or params):
        p = params[name]
        g = grads.get(p.uid)
        if g is None:
            g = np.zeros_like(p.values)
        flat = p.values.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        idx = rng.choice(flat.size, size=min(coords_per_param, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().item()
            flat[i] = orig - h
            fm = loss_fn().item()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            scale = max(abs(fd), abs(gflat[i]), 1e-8)
            worst = max(worst, abs(fd - gflat[i]) / scale)
    return worst


class ZeroDenoiser:
    """Stub predicting zero noise; matches the Denoiser interface."""

    def __init__(self, motion_shape):
        self.motion_shape = tuple(motion_shape)
        self.n_flat = int(np.prod(motion_shape))
        self.params = {}

    def predict(self, x, level, label):
        return ad.constant(np.zeros(self.motion_shape))

    def copy(self, trainable=True):
        return ZeroDenoiser(self.motion_shape)


class ConstantDenoiser:
    """Stub predicting a fixed array regardless of input."""

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float64)
        self.motion_shape = self.value.shape
        self.params = {}

    def predict(self, x, level, label):
        return ad.constant(self.value)


class LinearScalarDenoiser:
    """eps(x) = theta * x on 1x1 motions; the symbolic-oracle test net."""

    def __init__(self, theta: float):
        self.motion_shape = (1, 1)
        self.n_flat = 1
        self.params = {"theta": ad.parameter(np.full((1, 1), theta))}

    @property
    def theta(self):
        return self.params["theta"]

    def predict(self, x, level, label):
        return self.params["theta"] * x

    def copy(self, trainable=True):
        clone = LinearScalarDenoiser(float(self.theta.values[0, 0]))
        if not trainable:
            clone.params["theta"].requires_grad = False
        return clone


class OracleDenoiser:
    """Returns the exact injected noise (perfect inverter stub)."""

    def __init__(self, eps: np.ndarray):
        self.eps = np.asarray(eps, dtype=np.float64)
        self.motion_shape = self.eps.shape
        self.params = {}

    def predict(self, x, level, label):
        return ad.constant(self.eps)


@pytest.fixture(scope="session")
def toy_corpus():
    return synth.generate_corpus(24, 3, seed=0)


@pytest.fixture(scope="session")
def sched50():
    return diffusion.NoiseSchedule.linear(T=50)


@pytest.fixture(scope="session")
def semantic_model(toy_corpus, sched50):
    """Reward model with a real semantic pre-training run (shared)."""
    model = reward.RewardModel(n_labels=3, seed=3)
    reward.pretrain_semantic(model, toy_corpus, epochs=60, batch_size=8,
                             lr=3e-3, seed=7, schedule=sched50)
    return model


@pytest.fixture(scope="session")
def trained_denoiser(toy_corpus, sched50):
    """Denoiser pre-trained on the shared corpus joint view."""
    den = diffusion.Denoiser((24, 12), 3, hidden=64, seed=4)
    rows = np.stack([s.view("joint").ravel() for s in toy_corpus])
    labels = np.array([s.label for s in toy_corpus])
    diffusion.pretrain_denoiser(den, rows, labels, sched50, steps=600,
                                batch_size=16, seed=5)
    return den
