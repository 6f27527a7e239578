"""Dense networks with explicit-tape backpropagation, AdamW and a warm-restart LR schedule.

Everything is float64 numpy. Parameters live in a flat ``dict`` keyed by
name (``W0``, ``b0``, ...) so optimizers and checkpoints can treat every
model uniformly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class StaleTapeError(RuntimeError):
    pass


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


class Mlp:
    """Fully connected network: GELU on hidden layers, linear output layer."""

    def __init__(self, widths, rng=None, zero_last=False, params=None):
        self.widths = [int(w) for w in widths]
        if len(self.widths) < 2:
            raise ValueError("an Mlp needs at least input and output widths")
        self.version = 0
        if params is not None:
            self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
            self._check()
            return
        rng = np.random.default_rng(0) if rng is None else rng
        self.params = {}
        for i, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            last = i == len(self.widths) - 2
            if last and zero_last:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))
            self.params[f"W{i}"] = w
            self.params[f"b{i}"] = np.zeros(fan_out)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def _check(self):
        for i in range(self.n_layers):
            w, b = self.params[f"W{i}"], self.params[f"b{i}"]
            if w.shape != (self.widths[i], self.widths[i + 1]) or b.shape != (self.widths[i + 1],):
                raise ValueError(f"layer {i} has inconsistent shapes {w.shape}, {b.shape}")

    def touch(self):
        """Mark parameters as modified; invalidates outstanding tapes."""
        self.version += 1

    def copy(self) -> "Mlp":
        return Mlp(self.widths, params={k: v.copy() for k, v in self.params.items()})


@dataclass
class Tape:
    version: int
    owner: int
    squeeze: bool
    inputs: list = field(default_factory=list)
    preacts: list = field(default_factory=list)


def forward(mlp: Mlp, x):
    """Evaluate the network; ``x`` is a vector or a (batch, width) array."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != mlp.widths[0]:
        raise ValueError(f"input width {h.shape[1]} != network input width {mlp.widths[0]}")
    tape = Tape(mlp.version, id(mlp), squeeze)
    for i in range(mlp.n_layers):
        tape.inputs.append(h)
        z = h @ mlp.params[f"W{i}"] + mlp.params[f"b{i}"]
        if i < mlp.n_layers - 1:
            tape.preacts.append(z)
            h = gelu(z)
        else:
            h = z
    return (h[0] if squeeze else h), tape


def backward(mlp: Mlp, tape: Tape, output_grad):
    """Reverse pass. Returns ``(param_grads, input_grad)`` for loss gradient ``output_grad``."""
    if tape.version != mlp.version or tape.owner != id(mlp):
        raise StaleTapeError("tape was recorded for different parameters")
    g = np.asarray(output_grad, dtype=np.float64)
    if tape.squeeze:
        g = g[None, :]
    grads = {}
    for i in reversed(range(mlp.n_layers)):
        if i < mlp.n_layers - 1:
            g = g * gelu_grad(tape.preacts[i])
        grads[f"W{i}"] = tape.inputs[i].T @ g
        grads[f"b{i}"] = g.sum(0)
        g = g @ mlp.params[f"W{i}"].T
    return grads, (g[0] if tape.squeeze else g)


def is_weight(name: str) -> bool:
    return name.rsplit(".", 1)[-1].startswith("W")


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict, **kw) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
            **kw,
        )


def adamw_step(params: dict, grads: dict, state: OptimizerState, lr: float) -> None:
    """In-place AdamW update; decay is decoupled and skips biases."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay and is_weight(name):
            p *= 1.0 - lr * state.weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class LrSchedule:
    lr0: float = 3e-4
    t0: float = 10.0
    t_mult: float = 2.0


def lr_at(schedule: LrSchedule, epoch: float) -> float:
    """Cosine annealing with warm restarts; ``epoch`` may be fractional."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    period = schedule.t0
    start = 0.0
    while epoch >= start + period:
        start += period
        period *= schedule.t_mult
    progress = (epoch - start) / period
    return schedule.lr0 * 0.5 * (1.0 + math.cos(math.pi * progress))


def softmax(logits, axis=-1):
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to ``logits``."""
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(labels)
    z = logits - logits.max(1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(1, keepdims=True))
    n = len(labels)
    loss = -log_p[np.arange(n), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n
