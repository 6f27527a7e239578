"""Variance-preserving diffusion schedule and diffusion-bridge coefficients.

The schedule is parameterized by the exponent

    E(t) = beta_d * t**2 / 2 + beta_min * t

with signal scale ``alpha_t = exp(-E/2)`` and marginal std
``sigma_t = sqrt(1 - exp(-E))``.  All functions accept scalars or numpy
arrays of times and work in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ScheduleDomainError(ValueError):
    """Raised when a time argument lies outside the schedule's domain."""


@dataclass(frozen=True)
class ScheduleConfig:
    beta_d: float = 2.0
    beta_min: float = 0.1
    t_max: float = 1.0
    t_eps: float = 1e-4
    gamma_clip: float = 1.0 - 1e-6

    def __post_init__(self):
        if not self.beta_d > 0:
            raise ValueError(f"beta_d must be positive, got {self.beta_d}")
        if not self.beta_min >= 0:
            raise ValueError(f"beta_min must be non-negative, got {self.beta_min}")
        if not 0 < self.t_eps < self.t_max:
            raise ValueError("need 0 < t_eps < t_max")
        if not 0 < self.gamma_clip < 1:
            raise ValueError("gamma_clip must lie in (0, 1)")


@dataclass(frozen=True)
class BridgeCoeffs:
    """Coefficients of q(x_t | x_0, x_T) = N(a x_T + b x_0, c^2 I) at time t."""

    t: np.ndarray | float
    alpha: np.ndarray | float
    sigma: np.ndarray | float
    gamma_sq: np.ndarray | float
    a: np.ndarray | float
    b: np.ndarray | float
    c: np.ndarray | float
    f: np.ndarray | float
    g_sq: np.ndarray | float


def _check_t(cfg: ScheduleConfig, t, lower: float = 0.0, open_lower: bool = False):
    arr = np.asarray(t, dtype=np.float64)
    tol = 1e-12
    bad_low = arr <= lower if open_lower else arr < lower - tol
    if np.any(bad_low) or np.any(arr > cfg.t_max + tol) or not np.all(np.isfinite(arr)):
        raise ScheduleDomainError(
            f"t={t!r} outside [{lower}, {cfg.t_max}]" + (" (open at lower end)" if open_lower else "")
        )
    return arr


def _exponent(cfg: ScheduleConfig, t):
    return 0.5 * cfg.beta_d * t * t + cfg.beta_min * t


def _exponent_rate(cfg: ScheduleConfig, t):
    return cfg.beta_d * t + cfg.beta_min


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def vp_alpha_sigma(cfg: ScheduleConfig, t):
    """Return ``(alpha_t, sigma_t)`` of the VP forward kernel N(alpha x0, sigma^2 I)."""
    t = _check_t(cfg, t)
    e = _exponent(cfg, t)
    alpha = np.exp(-0.5 * e)
    sigma = np.sqrt(-np.expm1(-e))
    return _out(alpha), _out(sigma)


def drift_diffusion(cfg: ScheduleConfig, t):
    """Drift ``f(t)`` and squared diffusion ``g(t)^2`` of the linear forward SDE.

    With s(t) = exp(-E/2) and the unscaled noise level sqrt(e^E - 1),
    f = s'/s = -E'/2 and g^2 = 2 s^2 sigma' sigma simplifies to E'(t).
    """
    t = _check_t(cfg, t, open_lower=True)
    rate = _exponent_rate(cfg, t)
    return _out(-0.5 * rate), _out(rate)


def _gamma_sq_raw(cfg: ScheduleConfig, t):
    alpha, sigma = vp_alpha_sigma(cfg, t)
    alpha_T, sigma_T = vp_alpha_sigma(cfg, cfg.t_max)
    return (alpha_T * sigma / (alpha * sigma_T)) ** 2


def bridge_coeffs(cfg: ScheduleConfig, t, clamp: bool = True) -> BridgeCoeffs:
    """Bridge kernel coefficients at ``t``.

    ``clamp`` caps gamma^2 at ``cfg.gamma_clip`` so that ``c_t`` and every
    denominator built from ``1 - gamma^2`` stay positive at ``t = T``.
    """
    t = _check_t(cfg, t)
    alpha, sigma = vp_alpha_sigma(cfg, t)
    alpha_T, _ = vp_alpha_sigma(cfg, cfg.t_max)
    gsq = _gamma_sq_raw(cfg, t)
    if clamp:
        gsq = np.minimum(gsq, cfg.gamma_clip)
    one_minus = 1.0 - gsq
    a = alpha * gsq / alpha_T
    b = alpha * one_minus
    c = np.sqrt(np.maximum(sigma * sigma * one_minus, 0.0))
    rate = _exponent_rate(cfg, t)
    return BridgeCoeffs(
        t=_out(t),
        alpha=_out(alpha),
        sigma=_out(sigma),
        gamma_sq=_out(gsq),
        a=_out(a),
        b=_out(b),
        c=_out(c),
        f=_out(-0.5 * rate),
        g_sq=_out(rate),
    )


def h_gradient(cfg: ScheduleConfig, t: float, x_t, x_T, denom_floor: float = 1e-12):
    """Gradient of log q(x_T | x_t) with respect to ``x_t``.

    q(x_T | x_t) = N(r x_t, sigma_T^2 (1 - gamma_t^2) I) with r = alpha_T / alpha_t.
    """
    _check_t(cfg, t, lower=cfg.t_eps)
    alpha, _ = vp_alpha_sigma(cfg, t)
    alpha_T, sigma_T = vp_alpha_sigma(cfg, cfg.t_max)
    gsq = min(float(_gamma_sq_raw(cfg, t)), cfg.gamma_clip)
    ratio = alpha_T / alpha
    var = max(sigma_T * sigma_T * (1.0 - gsq), denom_floor)
    x_t = np.asarray(x_t, dtype=np.float64)
    x_T = np.asarray(x_T, dtype=np.float64)
    return ratio * (x_T - ratio * x_t) / var
