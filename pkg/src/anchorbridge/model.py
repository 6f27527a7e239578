"""Denoiser and anchor-classifier heads over the flat planning context.

Context layout (``Context.encode``), width 26:

    0      ego speed [m/s]
    1, 2   route target point, ego frame [m]
    3      lateral offset of the ego from the road reference line [m]
    4      ego heading minus road heading [rad]
    5      stop flag (1 while a stop line is pending)
    6..25  four obstacle slots of (x, y, vx, vy, present), ego frame,
           nearest first; empty slots are all zero

Diffusion runs in a standardized trajectory space: every channel of the
flattened trajectory vector is shifted and scaled by dataset statistics
held in the denoiser parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .geom import GEOMETRIC, AnchorSet, Anchor, vector_width

K_OBS = 4
OBS_FIELDS = 5
CONTEXT_WIDTH = 6 + K_OBS * OBS_FIELDS
CONTEXT_FIELDS = (
    ["ego_speed", "target_x", "target_y", "lane_offset", "heading_error", "stop_flag"]
    + [f"obs{i}_{f}" for i in range(K_OBS) for f in ("x", "y", "vx", "vy", "present")]
)
TIME_EMB_DIM = 16
VARIANTS = ("bridge", "full", "truncated")


@dataclass
class Context:
    ego_speed: float
    target_point: tuple[float, float]
    lane_offset: float = 0.0
    heading_error: float = 0.0
    stop_flag: float = 0.0
    obstacles: list = field(default_factory=list)  # (x, y, vx, vy) per agent, nearest first

    def encode(self) -> np.ndarray:
        z = np.zeros(CONTEXT_WIDTH)
        z[0] = self.ego_speed
        z[1:3] = self.target_point
        z[3] = self.lane_offset
        z[4] = self.heading_error
        z[5] = self.stop_flag
        for i, obs in enumerate(self.obstacles[:K_OBS]):
            base = 6 + OBS_FIELDS * i
            z[base : base + 4] = obs
            z[base + 4] = 1.0
        return z


def as_context_matrix(z) -> np.ndarray:
    if isinstance(z, Context):
        return z.encode()[None, :]
    if isinstance(z, (list, tuple)) and z and isinstance(z[0], Context):
        return np.stack([c.encode() for c in z])
    arr = np.asarray(z, dtype=np.float64)
    return arr[None, :] if arr.ndim == 1 else arr


def time_embedding(t, dim: int = TIME_EMB_DIM) -> np.ndarray:
    """Sinusoidal features on a geometric frequency ladder; shape (batch, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = np.geomspace(1.0, 1000.0, dim // 2)
    phase = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=1)


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data, floor: float) -> "Standardizer":
        data = np.asarray(data, dtype=np.float64)
        return cls(data.mean(0), np.maximum(data.std(0), floor))

    @classmethod
    def identity(cls, width: int) -> "Standardizer":
        return cls(np.zeros(width), np.ones(width))

    def encode(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def decode(self, x):
        return np.asarray(x, dtype=np.float64) * self.std + self.mean


@dataclass
class DenoiserParams:
    """Denoiser weights plus the standardization it was trained with."""

    kind: str
    variant: str
    n_point: int
    mlp: nn.Mlp
    traj_scale: Standardizer
    ctx_scale: Standardizer

    @property
    def width(self) -> int:
        return vector_width(self.kind, self.n_point)

    @classmethod
    def init(cls, kind, variant, n_point, traj_scale, ctx_scale, hidden=(256, 256, 256), seed=0):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        d = vector_width(kind, n_point)
        widths = [2 * d + CONTEXT_WIDTH + TIME_EMB_DIM, *hidden, d]
        mlp = nn.Mlp(widths, rng=np.random.default_rng(seed), zero_last=True)
        return cls(kind, variant, n_point, mlp, traj_scale, ctx_scale)


@dataclass
class ClassifierParams:
    mlp: nn.Mlp
    ctx_scale: Standardizer

    @property
    def n_anchor(self) -> int:
        return self.mlp.widths[-1]

    @classmethod
    def init(cls, n_anchor, ctx_scale, hidden=(128, 128), seed=0):
        # final layer rows act as one learned embedding per anchor index
        mlp = nn.Mlp([CONTEXT_WIDTH, *hidden, n_anchor], rng=np.random.default_rng(seed), zero_last=True)
        return cls(mlp, ctx_scale)


def _denoiser_input(theta: DenoiserParams, x_t, t, x_T, z):
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    n = len(x_t)
    x_T = np.broadcast_to(np.atleast_2d(np.asarray(x_T, dtype=np.float64)), x_t.shape)
    if x_t.shape[1] != theta.width:
        raise ValueError(f"state width {x_t.shape[1]} != model width {theta.width}")
    if theta.variant == "full":
        x_T = np.zeros_like(x_t)
    zc = np.broadcast_to(theta.ctx_scale.encode(as_context_matrix(z)), (n, CONTEXT_WIDTH))
    t = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.float64)), (n,))
    return np.concatenate([x_t, x_T, zc, time_embedding(t)], axis=1)


def denoise_with_tape(theta: DenoiserParams, x_t, t, x_T, z):
    return nn.forward(theta.mlp, _denoiser_input(theta, x_t, t, x_T, z))


def denoise(theta: DenoiserParams, x_t, t, x_T, z) -> np.ndarray:
    """Predicted clean trajectory in standardized units; batch-shaped like ``x_t``.

    ``x_t`` and ``x_T`` are standardized state vectors. The anchor input is
    ignored (zeroed) for the full-diffusion variant.
    """
    squeeze = np.ndim(x_t) == 1
    out, _ = denoise_with_tape(theta, x_t, t, x_T, z)
    return out[0] if squeeze else out


def logits_with_tape(phi: ClassifierParams, z):
    return nn.forward(phi.mlp, phi.ctx_scale.encode(as_context_matrix(z)))


def classify(phi: ClassifierParams, z, anchors: AnchorSet | None = None) -> np.ndarray:
    """Probability over anchors for each context row."""
    logits, _ = logits_with_tape(phi, z)
    if anchors is not None and logits.shape[1] != len(anchors):
        raise ValueError("classifier was trained for a different anchor count")
    probs = nn.softmax(logits)
    return probs[0] if isinstance(z, Context) or np.ndim(z) == 1 else probs


def select_index(probs) -> np.ndarray | int:
    """Argmax with ties broken toward the lowest index."""
    probs = np.asarray(probs)
    return int(np.argmax(probs)) if probs.ndim == 1 else np.argmax(probs, axis=1)


def select_anchor(phi: ClassifierParams, z, anchors: AnchorSet) -> Anchor:
    return anchors[select_index(classify(phi, z, anchors))]
