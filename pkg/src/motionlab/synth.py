"""Synthetic labeled motion corpus in three consistent representations.

A motion is a planar chain of `joints` points rooted at the origin with
fixed segment lengths; its latent is the per-frame segment-angle curve.
Three views derive deterministically from the joint coordinates:

* joint: raw (frames, J, 3) coordinates (z identically 0 for corpus
  motions, free for generated ones),
* kinematic: per-frame root position, joint velocities, and root-relative
  offsets in the xy plane,
* rotation: absolute segment angles from consecutive joint differences
  (atan2; a zero-length segment maps to angle 0).

On corpus samples the rotation view inverts exactly back to the joint
view given the shared skeleton constants.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import diffusion

__all__ = [
    "MotionDims",
    "MotionSample",
    "PreferencePair",
    "DeepfakeExample",
    "SEGMENT_LENGTHS",
    "convert_representation",
    "joints_from_angles",
    "kinematic_from_joints",
    "rotation_from_joints",
    "joints_from_rotation",
    "generate_corpus",
    "corrupt_latent",
    "build_preference_pairs",
    "build_deepfake_set",
    "save_corpus",
    "load_corpus",
    "export_corpus_csv",
]

SEGMENT_LENGTHS = np.array([0.5, 0.4, 0.3])


@dataclass(frozen=True)
class MotionDims:
    """View dimensions; the toy default is derived from a 4-joint chain."""

    frames: int = 24
    joints: int = 4
    kinematic: int = 16
    rotation: int = 3

    @property
    def joint_flat(self) -> int:
        return self.joints * 3

    def view_dim(self, rep: str) -> int:
        return {"kinematic": self.kinematic, "joint": self.joint_flat,
                "rotation": self.rotation}[rep]

    @classmethod
    def toy(cls) -> "MotionDims":
        return cls()

    @classmethod
    def full_scale(cls) -> "MotionDims":
        """Production-scale feature dims (263 / 22x3 / 135); sizes the
        reward model only — the toy generator does not emit them."""
        return cls(frames=64, joints=22, kinematic=263, rotation=135)


REPRESENTATIONS = ("kinematic", "joint", "rotation")


def joints_from_angles(angles: np.ndarray,
                       lengths: np.ndarray = SEGMENT_LENGTHS) -> np.ndarray:
    """Forward kinematics: absolute segment angles -> (frames, J, 3) chain."""
    frames, n_seg = angles.shape
    joints = np.zeros((frames, n_seg + 1, 3))
    for i in range(n_seg):
        joints[:, i + 1, 0] = joints[:, i, 0] + lengths[i] * np.cos(angles[:, i])
        joints[:, i + 1, 1] = joints[:, i, 1] + lengths[i] * np.sin(angles[:, i])
    return joints


def kinematic_from_joints(joints: np.ndarray) -> np.ndarray:
    """Root xy, per-joint xy velocities, and non-root offsets from the root."""
    frames, n_joints, _ = joints.shape
    xy = joints[:, :, :2]
    vel = np.zeros_like(xy)
    vel[1:] = xy[1:] - xy[:-1]
    root = xy[:, 0, :]
    offsets = xy[:, 1:, :] - root[:, None, :]
    return np.concatenate(
        [root, vel.reshape(frames, -1), offsets.reshape(frames, -1)], axis=1)


def rotation_from_joints(joints: np.ndarray) -> np.ndarray:
    """Absolute angle of each segment; zero-length segments map to 0."""
    diffs = joints[:, 1:, :2] - joints[:, :-1, :2]
    return np.arctan2(diffs[:, :, 1], diffs[:, :, 0])


def joints_from_rotation(rotation: np.ndarray,
                         lengths: np.ndarray = SEGMENT_LENGTHS,
                         root: np.ndarray | None = None) -> np.ndarray:
    """Inverse of `rotation_from_joints` under the corpus skeleton
    (origin root unless a (frames, 2) root trajectory is given)."""
    joints = joints_from_angles(rotation, lengths)
    if root is not None:
        joints[:, :, :2] += root[:, None, :]
    return joints


def convert_representation(angles: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Latent angle curve -> (kinematic, joint, rotation) views."""
    joints = joints_from_angles(angles)
    return kinematic_from_joints(joints), joints, rotation_from_joints(joints)


@dataclass
class MotionSample:
    """One motion with all three derived views and a condition label."""

    kinematic: np.ndarray
    joint: np.ndarray
    rotation: np.ndarray
    label: int

    @property
    def frames(self) -> int:
        return self.joint.shape[0]

    def view(self, rep: str) -> np.ndarray:
        """The named view as a (frames, dim) array."""
        if rep == "kinematic":
            return self.kinematic
        if rep == "joint":
            return self.joint.reshape(self.frames, -1)
        if rep == "rotation":
            return self.rotation
        raise ValueError(f"unknown representation {rep!r}")

    @classmethod
    def from_angles(cls, angles: np.ndarray, label: int) -> "MotionSample":
        kin, joints, rot = convert_representation(angles)
        return cls(kinematic=kin, joint=joints, rotation=rot, label=label)

    @classmethod
    def from_joints(cls, joints: np.ndarray, label: int) -> "MotionSample":
        return cls(kinematic=kinematic_from_joints(joints), joint=joints,
                   rotation=rotation_from_joints(joints), label=label)


@dataclass
class PreferencePair:
    winner: MotionSample
    loser: MotionSample
    label: int
    winner_sigma: float = 0.0
    loser_sigma: float = 0.0


@dataclass
class DeepfakeExample:
    motion: MotionSample
    is_real: bool


# ---------------------------------------------------------------------------
# corpus generation

_BASE = np.array([0.35, -0.15, 0.30])


def _angle_curve(label: int, rng: np.random.Generator, frames: int,
                 n_segments: int) -> np.ndarray:
    """Per-class parametric angle family.

    Per-sample parameters vary substantially within a family (amplitude,
    phase, speed) while the family structure keeps classes separable.
    """
    u = np.arange(frames)[:, None] / frames
    seg = np.arange(n_segments)[None, :]
    family = label % 3
    shift = 0.2 * (label // 3)
    base = _BASE[:n_segments][None, :] + shift
    if family == 0:
        # swaying oscillation, segment-staggered phase
        amp = 0.55 + 0.15 * rng.standard_normal()
        phase = (0.9 + 0.3 * rng.standard_normal()) * seg + rng.uniform(0, 2 * np.pi)
        return base + amp * np.sin(2.0 * np.pi * u + phase)
    if family == 1:
        # monotone ramp from a crouch to an extended pose
        start = base - 0.75 + 0.15 * rng.standard_normal()
        span = 1.3 + 0.3 * rng.standard_normal()
        taper = 0.15 + 0.2 * rng.random()
        return start + span * u * (1.0 - taper * seg / max(1, n_segments - 1))
    # progressive curl, outer segments turning further
    rate = 0.85 + 0.25 * rng.standard_normal()
    curve = 1.6 + 0.8 * rng.random()
    return base - 0.4 + rate * (u ** curve) * (1.0 + seg) / n_segments


def generate_corpus(n: int, n_labels: int = 3, seed: int = 0,
                    dims: MotionDims = MotionDims.toy()) -> list[MotionSample]:
    """Balanced labeled corpus, deterministic under `seed`."""
    if n < n_labels:
        raise ValueError(f"need at least one sample per label ({n} < {n_labels})")
    if dims.joints - 1 != dims.rotation or dims.kinematic != 2 + 2 * dims.joints + 2 * (dims.joints - 1):
        raise ValueError("generator only supports chain-derived view dims")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        label = i % n_labels
        angles = _angle_curve(label, rng, dims.frames, dims.rotation)
        samples.append(MotionSample.from_angles(angles, label))
    return samples


def corrupt_latent(angles: np.ndarray, sigma: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian noise plus adjacent-frame swaps scaled by sigma."""
    out = angles.copy()
    if sigma <= 0.0:
        return out
    out += rng.normal(0.0, sigma, size=out.shape)
    frames = out.shape[0]
    n_swaps = int(round(frames * sigma / 2.0))
    for pos in rng.integers(0, frames - 1, size=n_swaps):
        out[[pos, pos + 1]] = out[[pos + 1, pos]]
    return out


def build_preference_pairs(corpus: list[MotionSample],
                           levels: tuple[float, ...] = (0.0, 0.25, 0.5, 1.0),
                           seed: int = 0) -> list[PreferencePair]:
    """One pair per sample per (lower, higher) corruption-level combination."""
    if len(levels) < 2:
        raise ValueError("need at least two corruption levels")
    levels = tuple(sorted(levels))
    rng = np.random.default_rng(seed)
    pairs = []
    for sample in corpus:
        base_angles = rotation_from_joints(sample.joint)
        for lo, hi in combinations(levels, 2):
            w = MotionSample.from_angles(corrupt_latent(base_angles, lo, rng), sample.label)
            l = MotionSample.from_angles(corrupt_latent(base_angles, hi, rng), sample.label)
            pairs.append(PreferencePair(winner=w, loser=l, label=sample.label,
                                        winner_sigma=lo, loser_sigma=hi))
    return pairs


def build_deepfake_set(corpus: list[MotionSample], denoiser: diffusion.Denoiser,
                       schedule: diffusion.NoiseSchedule, seed: int = 0) -> list[DeepfakeExample]:
    """Balanced real/generated set; fakes are joint-view diffusion samples
    conditioned on the corpus labels."""
    examples = [DeepfakeExample(motion=s, is_real=True) for s in corpus]
    frames = corpus[0].frames
    for i, sample in enumerate(corpus):
        traj = diffusion.sample(denoiser, schedule, sample.label, seed=seed + i)
        joints = traj.x0.reshape(frames, -1, 3)
        examples.append(DeepfakeExample(motion=MotionSample.from_joints(joints, sample.label),
                                        is_real=False))
    return examples


# ---------------------------------------------------------------------------
# snapshot file (see README for the byte-exact layout)

_MAGIC = b"MLCORP01"


def save_corpus(path, samples: list[MotionSample], n_labels: int, seed: int) -> None:
    first = samples[0]
    frames, n_joints, _ = first.joint.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<6I", frames, n_joints, first.kinematic.shape[1],
                             first.rotation.shape[1], n_labels, len(samples)))
        fh.write(struct.pack("<Q", seed))
        for s in samples:
            fh.write(struct.pack("<I", s.label))
            fh.write(s.joint.astype("<f8").tobytes())
            fh.write(s.kinematic.astype("<f8").tobytes())
            fh.write(s.rotation.astype("<f8").tobytes())


def load_corpus(path) -> tuple[list[MotionSample], int, int]:
    """Returns (samples, n_labels, seed); bit-exact inverse of save_corpus."""
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError("not a corpus snapshot file")
        frames, n_joints, kin_dim, rot_dim, n_labels, n = struct.unpack("<6I", fh.read(24))
        (seed,) = struct.unpack("<Q", fh.read(8))
        samples = []
        for _ in range(n):
            (label,) = struct.unpack("<I", fh.read(4))
            joint = np.frombuffer(fh.read(8 * frames * n_joints * 3), dtype="<f8")
            kin = np.frombuffer(fh.read(8 * frames * kin_dim), dtype="<f8")
            rot = np.frombuffer(fh.read(8 * frames * rot_dim), dtype="<f8")
            samples.append(MotionSample(
                kinematic=kin.reshape(frames, kin_dim).copy(),
                joint=joint.reshape(frames, n_joints, 3).copy(),
                rotation=rot.reshape(frames, rot_dim).copy(),
                label=int(label)))
    return samples, n_labels, seed


def export_corpus_csv(path, samples: list[MotionSample]) -> None:
    """Joint-view dump for eyeballing, one row per (sample, frame)."""
    n_joints = samples[0].joint.shape[1]
    header = ["sample", "label", "frame"]
    for j in range(n_joints):
        header += [f"j{j}x", f"j{j}y", f"j{j}z"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, s in enumerate(samples):
            for f in range(s.frames):
                writer.writerow([i, s.label, f] + [f"{v:.17g}" for v in s.joint[f].ravel()])
