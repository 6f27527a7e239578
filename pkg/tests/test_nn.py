import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anchorbridge.nn import (
    LrSchedule,
    Mlp,
    OptimizerState,
    StaleTapeError,
    adamw_step,
    backward,
    cross_entropy,
    forward,
    lr_at,
)


def _reference_forward(params, widths, x):
    """Straightforward per-unit loop evaluation, independent of the vectorized path."""
    h = list(x)
    n_layers = len(widths) - 1
    for i in range(n_layers):
        W, b = params[f"W{i}"], params[f"b{i}"]
        out = []
        for j in range(widths[i + 1]):
            z = b[j] + sum(h[k] * W[k, j] for k in range(widths[i]))
            if i < n_layers - 1:
                z = 0.5 * z * (1 + math.erf(z / math.sqrt(2)))
            out.append(z)
        h = out
    return np.array(h)


def test_zero_net_outputs_zero():
    net = Mlp([3, 5, 2])
    for p in net.params.values():
        p[...] = 0
    out, _ = forward(net, np.array([1.0, -2.0, 3.0]))
    np.testing.assert_array_equal(out, 0.0)


def test_single_linear_layer():
    rng = np.random.default_rng(0)
    net = Mlp([4, 3], rng=rng)
    net.params["b0"][:] = rng.normal(size=3)
    x = rng.normal(size=4)
    out, _ = forward(net, x)
    np.testing.assert_allclose(out, x @ net.params["W0"] + net.params["b0"], atol=1e-14)


def test_forward_matches_reference():
    rng = np.random.default_rng(1)
    net = Mlp([5, 7, 6, 3], rng=rng)
    for k in net.params:
        if k.startswith("b"):
            net.params[k][:] = rng.normal(size=net.params[k].shape)
    for _ in range(5):
        x = rng.normal(size=5)
        out, _ = forward(net, x)
        np.testing.assert_allclose(out, _reference_forward(net.params, net.widths, x), atol=1e-12)


def test_batch_forward_matches_rows():
    rng = np.random.default_rng(2)
    net = Mlp([3, 8, 2], rng=rng)
    X = rng.normal(size=(6, 3))
    batch, _ = forward(net, X)
    for i in range(6):
        np.testing.assert_allclose(batch[i], forward(net, X[i])[0], atol=1e-14)


def test_width_mismatch():
    with pytest.raises(ValueError):
        forward(Mlp([3, 2]), np.zeros(4))


def test_identity_net_input_gradient():
    net = Mlp([3, 3])
    net.params["W0"][:] = np.eye(3)
    net.params["b0"][:] = 0
    x = np.array([0.5, -1.0, 2.0])
    target = np.array([1.0, 1.0, 1.0])
    out, tape = forward(net, x)
    _, gx = backward(net, tape, 2 * (out - target))
    np.testing.assert_allclose(gx, 2 * (x - target))


def test_constant_output_has_zero_input_gradient():
    net = Mlp([3, 4, 2], rng=np.random.default_rng(3))
    net.params["W1"][:] = 0.0
    out, tape = forward(net, np.ones(3))
    grads, gx = backward(net, tape, np.ones(2))
    np.testing.assert_array_equal(gx, 0.0)
    np.testing.assert_array_equal(grads["W0"], 0.0)


def _numeric_grads(net, loss_fn, x, h=1e-5):
    out = {}
    for name, p in net.params.items():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            lp = loss_fn(forward(net, x)[0])
            p[idx] = old - h
            lm = loss_fn(forward(net, x)[0])
            p[idx] = old
            g[idx] = (lp - lm) / (2 * h)
        out[name] = g
    return out


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("widths", [[4, 3], [4, 6, 3], [3, 5, 5, 2]])
def test_backward_matches_finite_differences(widths):
    rng = np.random.default_rng(4)
    net = Mlp(widths, rng=rng)
    for k in net.params:
        if k.startswith("b"):
            net.params[k][:] = 0.1 * rng.normal(size=net.params[k].shape)
    X = rng.normal(size=(5, widths[0]))
    target = rng.normal(size=(5, widths[-1]))
    loss = lambda out: float(((out - target) ** 2).mean())
    out, tape = forward(net, X)
    grads, gx = backward(net, tape, 2 * (out - target) / out.size)
    num = _numeric_grads(net, loss, X)
    for name in net.params:
        assert _rel_err(grads[name], num[name]) < 1e-4, name
    # input gradient too
    h = 1e-5
    num_x = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        Xp, Xm = X.copy(), X.copy()
        Xp[idx] += h
        Xm[idx] -= h
        num_x[idx] = (loss(forward(net, Xp)[0]) - loss(forward(net, Xm)[0])) / (2 * h)
    assert _rel_err(gx, num_x) < 1e-4


def test_stale_tape_rejected():
    net = Mlp([2, 2])
    _, tape = forward(net, np.ones(2))
    net.touch()
    with pytest.raises(StaleTapeError):
        backward(net, tape, np.ones(2))


def test_adamw_zero_grad_no_decay_is_noop():
    params = {"W0": np.ones((2, 2)), "b0": np.ones(2)}
    state = OptimizerState.for_params(params, weight_decay=0.0)
    adamw_step(params, {k: np.zeros_like(v) for k, v in params.items()}, state, lr=0.1)
    np.testing.assert_array_equal(params["W0"], 1.0)
    np.testing.assert_array_equal(params["b0"], 1.0)


def test_adamw_first_step_is_sign_scaled():
    params = {"W0": np.zeros(3), "b0": np.zeros(3)}
    state = OptimizerState.for_params(params, weight_decay=0.0)
    g = np.array([0.5, -2.0, 1e-3])
    adamw_step(params, {"W0": g, "b0": g}, state, lr=0.01)
    expected = -0.01 * g / (np.abs(g) + state.eps)
    np.testing.assert_allclose(params["W0"], expected, rtol=1e-6)


def test_adamw_decay_skips_biases():
    params = {"W0": np.ones(2), "b0": np.ones(2)}
    state = OptimizerState.for_params(params, weight_decay=0.5)
    adamw_step(params, {k: np.zeros(2) for k in params}, state, lr=0.1)
    np.testing.assert_allclose(params["W0"], 0.95)
    np.testing.assert_array_equal(params["b0"], 1.0)


def test_adamw_quadratic_descends():
    rng = np.random.default_rng(6)
    A = rng.normal(size=(4, 4))
    H = A @ A.T + np.eye(4)
    params = {"W0": rng.normal(size=4)}
    state = OptimizerState.for_params(params, weight_decay=0.0)
    losses = []
    for _ in range(200):
        w = params["W0"]
        losses.append(0.5 * w @ H @ w)
        adamw_step(params, {"W0": H @ w}, state, lr=1e-2)
    assert losses[-1] < 0.05 * losses[0]
    # monotone after a short warmup, with the scripted step size
    tail = np.array(losses[20:])
    assert np.all(np.diff(tail) <= 1e-12)


def test_lr_schedule_points():
    sched = LrSchedule()
    assert lr_at(sched, 0) == pytest.approx(3e-4)
    assert lr_at(sched, 10) == pytest.approx(3e-4)
    assert lr_at(sched, 5) == pytest.approx(1.5e-4)
    assert lr_at(sched, 30) == pytest.approx(3e-4)
    assert lr_at(sched, 20) == pytest.approx(1.5e-4)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 500))
def test_lr_bounded(epoch):
    lr = lr_at(LrSchedule(), epoch)
    assert 0 <= lr <= 3e-4


def test_lr_continuous_within_period():
    sched = LrSchedule()
    e = np.linspace(0, 9.999, 2000)
    lrs = np.array([lr_at(sched, x) for x in e])
    assert np.max(np.abs(np.diff(lrs))) < 1e-6


def test_cross_entropy_uniform():
    loss, _ = cross_entropy(np.zeros((3, 20)), np.array([0, 5, 19]))
    assert loss == pytest.approx(math.log(20))


def test_xor_smoke():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    y = np.array([[0], [1], [1], [0]], dtype=float)
    net = Mlp([2, 16, 1], rng=np.random.default_rng(0))
    state = OptimizerState.for_params(net.params, weight_decay=0.0)
    for step in range(5000):
        out, tape = forward(net, X)
        loss = float(((out - y) ** 2).mean())
        if loss < 1e-3:
            break
        grads, _ = backward(net, tape, 2 * (out - y) / out.size)
        adamw_step(net.params, grads, state, lr=1e-2)
        net.touch()
    assert loss < 1e-3
