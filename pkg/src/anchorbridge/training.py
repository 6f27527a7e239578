"""Training for the bridge denoiser, the two diffusion baselines and the anchor classifier."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .geom import GEOMETRIC, AnchorSet, Trajectory, nearest_anchor_batch
from .model import (
    CONTEXT_WIDTH,
    ClassifierParams,
    Context,
    DenoiserParams,
    Standardizer,
    as_context_matrix,
    denoise_with_tape,
    logits_with_tape,
)
from .schedule import ScheduleConfig, bridge_coeffs, vp_alpha_sigma

log = logging.getLogger(__name__)

TRAJ_STD_FLOOR = 0.1
CTX_STD_FLOOR = 1e-3


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    kind: str = GEOMETRIC
    variant: str = "bridge"
    epochs: int = 10
    batch_size: int = 64
    t_trunc_frac: float = 0.3
    w_diffusion: float = 1.0
    w_classification: float = 1.0
    lr0: float = 3e-4
    lr_t0: float = 10.0
    lr_t_mult: float = 2.0
    weight_decay: float = 0.01
    denoiser_hidden: tuple = (256, 256, 256)
    classifier_hidden: tuple = (128, 128)
    classifier_lr0: float | None = None  # defaults to lr0; follows the same schedule shape
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.t_trunc_frac < 1:
            raise ValueError("t_trunc_frac must lie in (0, 1)")
        if self.lr0 <= 0 or (self.classifier_lr0 is not None and self.classifier_lr0 <= 0):
            raise ValueError("learning rates must be positive")

    def lr_schedule(self) -> nn.LrSchedule:
        return nn.LrSchedule(self.lr0, self.lr_t0, self.lr_t_mult)


def loss_weight(t) -> np.ndarray:
    """w(t); constant one."""
    return np.ones_like(np.asarray(t, dtype=np.float64))


@dataclass
class Sample:
    x0: Trajectory
    z: Context
    anchor_index: int


@dataclass
class TrainingSet:
    """Columnar form of a list of samples; trajectories are raw (unstandardized) vectors."""

    kind: str
    n_point: int
    x0: np.ndarray
    z: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.x0)

    @classmethod
    def from_samples(cls, samples: list[Sample]) -> "TrainingSet":
        kind = samples[0].x0.kind
        return cls(
            kind,
            samples[0].x0.n_point,
            np.stack([s.x0.to_vector() for s in samples]),
            np.stack([s.z.encode() for s in samples]),
            np.array([s.anchor_index for s in samples], dtype=np.int64),
        )

    @classmethod
    def label(cls, kind, x0_vectors, z, anchors: AnchorSet) -> "TrainingSet":
        """Attach nearest-anchor labels computed on the clean trajectories."""
        x0_vectors = np.asarray(x0_vectors, dtype=np.float64)
        n_point = anchors.n_point
        labels = nearest_anchor_batch(x0_vectors[:, : 2 * n_point], anchors)
        return cls(kind, n_point, x0_vectors, as_context_matrix(z), labels)

    def subset(self, idx) -> "TrainingSet":
        return TrainingSet(self.kind, self.n_point, self.x0[idx], self.z[idx], self.labels[idx])


def _time_range(variant: str, sched: ScheduleConfig, cfg: TrainConfig):
    if variant == "truncated":
        return sched.t_eps, cfg.t_trunc_frac * sched.t_max
    return sched.t_eps, sched.t_max


def corrupt(variant, x0, y, sched: ScheduleConfig, cfg: TrainConfig, rng: np.random.Generator, t=None):
    """Draw t and noise, and build the denoiser's noisy input for one training variant.

    ``t`` may be fixed by the caller instead of drawn from p(t). Returns
    ``(x_t, t, anchor_input)``; all arrays are batch-first and standardized.
    """
    n, d = x0.shape
    if t is None:
        lo, hi = _time_range(variant, sched, cfg)
        t = rng.uniform(lo, hi, size=n)
    else:
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,)).copy()
    eps = rng.standard_normal((n, d))
    if variant == "bridge":
        co = bridge_coeffs(sched, t)
        x_t = co.a[:, None] * y + co.b[:, None] * x0 + co.c[:, None] * eps
        return x_t, t, y
    alpha, sigma = vp_alpha_sigma(sched, t)
    if variant == "truncated":
        # noisy anchor; the regression target is still the ground truth
        return alpha[:, None] * y + sigma[:, None] * eps, t, y
    if variant == "full":
        return alpha[:, None] * x0 + sigma[:, None] * eps, t, np.zeros_like(x0)
    raise ValueError(f"unknown variant {variant!r}")


def denoising_loss(pred, x0, t):
    """Weighted squared error, averaged over coordinates and batch, and its gradient."""
    diff = pred - x0
    w = loss_weight(t)[:, None]
    loss = float((w * diff * diff).mean())
    return loss, 2.0 * w * diff / diff.size


def loss_step(theta, batch: TrainingSet, anchors: AnchorSet | None, sched, cfg, rng, variant=None):
    """Denoising loss for one batch.

    ``theta`` is either :class:`DenoiserParams` (gradients are returned) or a
    callable ``predict(x_t, t, anchor_input, z)`` working in the same
    standardized space (gradients are ``None``).
    """
    variant = variant or (theta.variant if isinstance(theta, DenoiserParams) else cfg.variant)
    scale = theta.traj_scale if isinstance(theta, DenoiserParams) else Standardizer.identity(batch.x0.shape[1])
    x0 = scale.encode(batch.x0)
    if variant == "full" or anchors is None:
        y = np.zeros_like(x0)
    else:
        y = scale.encode(anchors.vector_matrix()[batch.labels])
    x_t, t, y_in = corrupt(variant, x0, y, sched, cfg, rng)
    if not isinstance(theta, DenoiserParams):
        pred = theta(x_t, t, y_in, batch.z)
        loss, _ = denoising_loss(pred, x0, t)
        return loss, None
    pred, tape = denoise_with_tape(theta, x_t, t, y_in, batch.z)
    loss, g = denoising_loss(pred, x0, t)
    grads, _ = nn.backward(theta.mlp, tape, g)
    return loss, grads


def bridge_loss_step(theta, batch, anchors, sched, cfg, rng):
    return loss_step(theta, batch, anchors, sched, cfg, rng, variant="bridge")


def truncated_loss_step(theta, batch, anchors, sched, cfg, rng):
    return loss_step(theta, batch, anchors, sched, cfg, rng, variant="truncated")


def full_diffusion_loss_step(theta, batch, sched, cfg, rng):
    return loss_step(theta, batch, None, sched, cfg, rng, variant="full")


def classifier_loss_step(phi: ClassifierParams, batch: TrainingSet):
    """Cross-entropy against nearest-anchor labels; returns ``(loss, grads, accuracy)``."""
    logits, tape = logits_with_tape(phi, batch.z)
    loss, g = nn.cross_entropy(logits, batch.labels)
    grads, _ = nn.backward(phi.mlp, tape, g)
    acc = float((logits.argmax(1) == batch.labels).mean())
    return loss, grads, acc


@dataclass
class EpochLog:
    epoch: int
    diffusion_loss: float
    classifier_loss: float
    classifier_accuracy: float
    lr: float


@dataclass
class TrainResult:
    theta: DenoiserParams
    phi: ClassifierParams | None
    log: list = field(default_factory=list)


def fit_standardizers(data: TrainingSet, anchors: AnchorSet | None):
    traj = data.x0 if anchors is None else np.vstack([data.x0, anchors.vector_matrix()])
    return Standardizer.fit(traj, TRAJ_STD_FLOOR), Standardizer.fit(data.z, CTX_STD_FLOOR)


def train(
    data: TrainingSet,
    anchors: AnchorSet | None,
    cfg: TrainConfig,
    sched: ScheduleConfig = ScheduleConfig(),
    scalers=None,
    progress=None,
) -> TrainResult:
    """Mini-batch AdamW on ``w_d * L_diffusion + w_c * L_classification``.

    All randomness flows from ``cfg.seed``: one generator for initialization,
    one for batch order and one for the diffusion time/noise draws.
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    if anchors is not None and anchors.kind != data.kind:
        raise ValueError("anchors and data use different representations")
    traj_scale, ctx_scale = scalers or fit_standardizers(data, anchors)
    init_seed, order_seed, noise_seed = np.random.SeedSequence(cfg.seed).generate_state(3)
    theta = DenoiserParams.init(
        data.kind, cfg.variant, data.n_point, traj_scale, ctx_scale, cfg.denoiser_hidden, seed=int(init_seed)
    )
    use_classifier = cfg.variant != "full"
    phi = None
    if use_classifier:
        phi = ClassifierParams.init(len(anchors), ctx_scale, cfg.classifier_hidden, seed=int(init_seed) + 1)
    opt_theta = nn.OptimizerState.for_params(theta.mlp.params, weight_decay=cfg.weight_decay)
    opt_phi = nn.OptimizerState.for_params(phi.mlp.params, weight_decay=cfg.weight_decay) if phi else None
    order_rng = np.random.default_rng(int(order_seed))
    noise_rng = np.random.default_rng(int(noise_seed))
    schedule = cfg.lr_schedule()
    c_scale = 1.0 if cfg.classifier_lr0 is None else cfg.classifier_lr0 / cfg.lr0
    n = len(data)
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    history = []
    for epoch in range(cfg.epochs):
        perm = order_rng.permutation(n)
        d_losses, c_losses, accs = [], [], []
        for step in range(steps_per_epoch):
            idx = perm[step * cfg.batch_size : (step + 1) * cfg.batch_size]
            batch = data.subset(idx)
            lr = nn.lr_at(schedule, epoch + step / steps_per_epoch)
            loss, grads = loss_step(theta, batch, anchors, sched, cfg, noise_rng)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite diffusion loss at epoch {epoch} step {step}")
            if cfg.w_diffusion != 1.0:
                grads = {k: cfg.w_diffusion * v for k, v in grads.items()}
            nn.adamw_step(theta.mlp.params, grads, opt_theta, lr)
            theta.mlp.touch()
            d_losses.append(loss)
            if phi is not None:
                c_loss, c_grads, acc = classifier_loss_step(phi, batch)
                if not math.isfinite(c_loss):
                    raise TrainingDiverged(f"non-finite classifier loss at epoch {epoch} step {step}")
                if cfg.w_classification != 1.0:
                    c_grads = {k: cfg.w_classification * v for k, v in c_grads.items()}
                nn.adamw_step(phi.mlp.params, c_grads, opt_phi, c_scale * lr)
                phi.mlp.touch()
                c_losses.append(c_loss)
                accs.append(acc)
        entry = EpochLog(
            epoch,
            float(np.mean(d_losses)),
            float(np.mean(c_losses)) if c_losses else float("nan"),
            float(np.mean(accs)) if accs else float("nan"),
            nn.lr_at(schedule, epoch),
        )
        history.append(entry)
        log.info(
            "epoch %d diffusion %.5f classifier %.4f acc %.3f lr %.2e",
            epoch, entry.diffusion_loss, entry.classifier_loss, entry.classifier_accuracy, entry.lr,
        )
        if progress is not None:
            progress(entry)
    return TrainResult(theta, phi, history)


def classifier_accuracy(phi: ClassifierParams, data: TrainingSet) -> float:
    logits, _ = logits_with_tape(phi, data.z)
    return float((logits.argmax(1) == data.labels).mean())


# -- dataset filtering ---------------------------------------------------------


@dataclass
class Frame:
    """One expert frame: the label trajectory, its context and the expert target speed."""

    target_speed: float
    waypoints: np.ndarray  # geometric path waypoints, ego frame
    payload: object = None


def _bearings(waypoints) -> np.ndarray:
    wp = np.asarray(waypoints, dtype=np.float64)
    return np.degrees(np.arctan2(wp[:, 1], wp[:, 0]))


def change_mask(frames: list[Frame], speed_tol: float = 0.1, angle_tol_deg: float = 0.5) -> np.ndarray:
    """Frames whose target speed or any waypoint bearing moved past the thresholds."""
    keep = np.zeros(len(frames), dtype=bool)
    for i in range(1, len(frames)):
        prev, cur = frames[i - 1], frames[i]
        if abs(cur.target_speed - prev.target_speed) > speed_tol:
            keep[i] = True
            continue
        delta = np.abs(_bearings(cur.waypoints) - _bearings(prev.waypoints))
        delta = np.minimum(delta, 360.0 - delta)
        if np.any(delta > angle_tol_deg):
            keep[i] = True
    return keep


def filter_dataset(frames: list[Frame], seed: int, residual_fraction: float = 0.14) -> list[Frame]:
    """Keep change frames plus a seeded ``round(0.14 * remainder)`` sample of the rest, in order."""
    if not frames:
        return []
    keep = change_mask(frames)
    rest = np.flatnonzero(~keep)
    n_pick = int(round(residual_fraction * len(rest)))
    if n_pick:
        pick = np.random.default_rng(seed).choice(rest, size=n_pick, replace=False)
        keep[pick] = True
    return [f for f, k in zip(frames, keep) if k]
