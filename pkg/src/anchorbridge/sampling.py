"""Reverse-time generation: the anchor-bridge planner and the two diffusion baselines.

Every sampler works in the denoiser's standardized trajectory space and is
batched over contexts. Two first-order solvers are provided:

``ddim``
    Data-prediction update that is exact when the denoiser output is frozen
    over a step. For the bridge it reads
    ``x_s = a_s x_T + b_s x0_hat + (c_s / c_t) (x_t - a_t x_T - b_t x0_hat)``
    and for the VP process ``x_s = alpha_s x0_hat + (sigma_s / sigma_t)(x_t - alpha_t x0_hat)``.
``euler``
    Explicit Euler on the probability-flow ODE right-hand side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import AnchorSet, Trajectory
from .model import DenoiserParams, as_context_matrix, classify, denoise, select_index
from .schedule import ScheduleConfig, bridge_coeffs, drift_diffusion, h_gradient, vp_alpha_sigma

DENOM_FLOOR = 1e-12
DEFAULT_STEPS = {"bridge": 20, "full": 100, "truncated": 2}


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = 20
    solver: str = "ddim"
    start_offset: float = 1e-4  # bridge starts at T * (1 - start_offset)
    t_trunc_frac: float = 0.3

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.solver not in ("ddim", "euler"):
            raise ValueError(f"unknown solver {self.solver!r}")

    @classmethod
    def for_variant(cls, variant: str, **kw) -> "SamplerConfig":
        kw.setdefault("n_steps", DEFAULT_STEPS[variant])
        return cls(**kw)


def time_grid(t_start: float, t_end: float, n_steps: int) -> np.ndarray:
    grid = np.linspace(t_start, t_end, n_steps + 1)
    if not np.all(np.diff(grid) < 0):
        raise SamplingError("time grid must be strictly decreasing")
    return grid


def _predict(theta, x_t, t, x_T, z):
    if isinstance(theta, DenoiserParams):
        return denoise(theta, x_t, t, x_T, z)
    return theta(x_t, t, x_T, z)


def bridge_score(theta, x_t, t, x_T, z, coeffs=None, sched: ScheduleConfig = ScheduleConfig(), x0_hat=None):
    """Conditional score ``(a x_T + b x0_hat - x_t) / c^2`` of the bridge marginal."""
    co = coeffs if coeffs is not None else bridge_coeffs(sched, t)
    if x0_hat is None:
        x0_hat = _predict(theta, x_t, t, x_T, z)
    c_sq = max(co.c * co.c, DENOM_FLOOR)
    return (co.a * x_T + co.b * x0_hat - x_t) / c_sq


def bridge_ode_rhs(theta, x_t, t, x_T, z, sched: ScheduleConfig = ScheduleConfig(), x0_hat=None):
    """dx/dt of the bridge probability-flow ODE."""
    co = bridge_coeffs(sched, t)
    score = bridge_score(theta, x_t, t, x_T, z, co, sched, x0_hat)
    h = h_gradient(sched, t, x_t, x_T)
    return co.f * x_t - co.g_sq * (0.5 * score - h)


def vp_ode_rhs(x_t, t, x0_hat, sched: ScheduleConfig = ScheduleConfig()):
    """dx/dt of the standard PF-ODE with score ``(alpha x0_hat - x) / sigma^2``."""
    alpha, sigma = vp_alpha_sigma(sched, t)
    f, g_sq = drift_diffusion(sched, t)
    score = (alpha * x0_hat - x_t) / max(sigma * sigma, DENOM_FLOOR)
    return f * x_t - 0.5 * g_sq * score


def _check_finite(x, step, t):
    if not np.all(np.isfinite(x)):
        raise SamplingError(f"non-finite state at step {step} (t={t:.6f})")


@dataclass
class Trace:
    """Denoising states per step (standardized space) for rendering."""

    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    x0_hats: list = field(default_factory=list)
    anchor: np.ndarray | None = None


def integrate_bridge(theta, x_T, z, sched, cfg: SamplerConfig, trace: Trace | None = None, x_start=None):
    """Integrate the bridge PF-ODE from near T down to t_eps, starting at ``x_T`` by default."""
    x_T = np.asarray(x_T, dtype=np.float64)
    grid = time_grid(sched.t_max * (1.0 - cfg.start_offset), sched.t_eps, cfg.n_steps)
    x = x_T.copy() if x_start is None else np.asarray(x_start, dtype=np.float64).copy()
    if trace is not None:
        trace.anchor = x_T.copy()
        trace.times.append(float(grid[0]))
        trace.states.append(x.copy())
    for i in range(cfg.n_steps):
        t, s = float(grid[i]), float(grid[i + 1])
        x0_hat = _predict(theta, x, t, x_T, z)
        if cfg.solver == "ddim":
            ct, cs = bridge_coeffs(sched, t), bridge_coeffs(sched, s)
            ratio = cs.c / max(ct.c, DENOM_FLOOR)
            x = cs.a * x_T + cs.b * x0_hat + ratio * (x - ct.a * x_T - ct.b * x0_hat)
        else:
            x = x + (s - t) * bridge_ode_rhs(theta, x, t, x_T, z, sched, x0_hat=x0_hat)
        _check_finite(x, i, s)
        if trace is not None:
            trace.times.append(s)
            trace.states.append(x.copy())
            trace.x0_hats.append(np.array(x0_hat, copy=True))
    return x


def integrate_vp(theta, x_start, t_start, x_anchor, z, sched, cfg: SamplerConfig, trace: Trace | None = None):
    """Integrate the standard PF-ODE from ``t_start`` down to t_eps."""
    grid = time_grid(t_start, sched.t_eps, cfg.n_steps)
    x = np.asarray(x_start, dtype=np.float64).copy()
    if trace is not None:
        trace.times.append(float(grid[0]))
        trace.states.append(x.copy())
    for i in range(cfg.n_steps):
        t, s = float(grid[i]), float(grid[i + 1])
        x0_hat = _predict(theta, x, t, x_anchor, z)
        if cfg.solver == "ddim":
            at, st = vp_alpha_sigma(sched, t)
            as_, ss = vp_alpha_sigma(sched, s)
            x = as_ * x0_hat + (ss / max(st, DENOM_FLOOR)) * (x - at * x0_hat)
        else:
            x = x + (s - t) * vp_ode_rhs(x, t, x0_hat, sched)
        _check_finite(x, i, s)
        if trace is not None:
            trace.times.append(s)
            trace.states.append(x.copy())
            trace.x0_hats.append(np.array(x0_hat, copy=True))
    return x


def _to_trajectories(theta: DenoiserParams, x_std):
    raw = theta.traj_scale.decode(np.atleast_2d(x_std))
    return [Trajectory.from_vector(theta.kind, row) for row in raw]


def _selected_anchor_vectors(theta, phi, z, anchors):
    probs = np.atleast_2d(classify(phi, z, anchors))
    idx = np.atleast_1d(select_index(probs))
    return idx, theta.traj_scale.encode(anchors.vector_matrix()[idx])


def plan_batch(theta, phi, z, anchors, cfg: SamplerConfig, sched=ScheduleConfig(), trace=None):
    """Anchor-bridge planning for a batch of contexts; returns (trajectories, anchor indices)."""
    Z = as_context_matrix(z)
    idx, x_T = _selected_anchor_vectors(theta, phi, Z, anchors)
    x0 = integrate_bridge(theta, x_T, Z, sched, cfg, trace)
    return _to_trajectories(theta, x0), idx


def plan(theta, phi, z, anchors: AnchorSet, cfg: SamplerConfig = SamplerConfig(), sched=ScheduleConfig(), trace=None):
    """Select an anchor with the classifier, then step the bridge ODE from it to t_eps."""
    trajs, _ = plan_batch(theta, phi, z, anchors, cfg, sched, trace)
    return trajs[0]


def full_diffusion_batch(theta, z, cfg: SamplerConfig, rng_or_noise, sched=ScheduleConfig(), trace=None):
    Z = as_context_matrix(z)
    _, sigma_T = vp_alpha_sigma(sched, sched.t_max)
    noise = _noise(rng_or_noise, (len(Z), theta.width))
    x0 = integrate_vp(theta, sigma_T * noise, sched.t_max, np.zeros_like(noise), Z, sched, cfg, trace)
    return _to_trajectories(theta, x0)


def full_diffusion_sample(theta, z, cfg: SamplerConfig, rng, sched=ScheduleConfig(), trace=None):
    """Start from N(0, sigma_T^2 I) and integrate the PF-ODE to t_eps."""
    return full_diffusion_batch(theta, z, cfg, rng, sched, trace)[0]


def truncated_batch(theta, phi, z, anchors, cfg: SamplerConfig, rng_or_noise, sched=ScheduleConfig(), trace=None):
    Z = as_context_matrix(z)
    idx, y = _selected_anchor_vectors(theta, phi, Z, anchors)
    t_start = cfg.t_trunc_frac * sched.t_max
    alpha, sigma = vp_alpha_sigma(sched, t_start)
    noise = _noise(rng_or_noise, y.shape)
    x0 = integrate_vp(theta, alpha * y + sigma * noise, t_start, y, Z, sched, cfg, trace)
    return _to_trajectories(theta, x0), idx


def truncated_sample(theta, phi, z, anchors, cfg: SamplerConfig, rng, sched=ScheduleConfig(), trace=None):
    """Noise the selected anchor to T_trunc and denoise it with the standard score."""
    return truncated_batch(theta, phi, z, anchors, cfg, rng, sched, trace)[0][0]


def _noise(rng_or_noise, shape):
    if isinstance(rng_or_noise, np.random.Generator):
        return rng_or_noise.standard_normal(shape)
    noise = np.asarray(rng_or_noise, dtype=np.float64)
    if noise.shape != shape:
        raise ValueError(f"noise shape {noise.shape} != {shape}")
    return noise
