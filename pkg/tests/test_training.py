import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from anchorbridge.geom import GEOMETRIC, Anchor, AnchorSet, Trajectory, nearest_anchor
from anchorbridge.model import CONTEXT_WIDTH, Context
from anchorbridge.schedule import ScheduleConfig, bridge_coeffs, vp_alpha_sigma
from anchorbridge.training import (
    Frame,
    Sample,
    TrainConfig,
    TrainingDiverged,
    TrainingSet,
    bridge_loss_step,
    change_mask,
    classifier_loss_step,
    corrupt,
    filter_dataset,
    full_diffusion_loss_step,
    loss_step,
    train,
    truncated_loss_step,
)

SCHED = ScheduleConfig()
CFG = TrainConfig()


def _anchors():
    xs = np.arange(1, 11.0)
    return AnchorSet(
        [
            Anchor(0, np.column_stack([xs, np.zeros(10)]), 5.0),
            Anchor(1, np.column_stack([xs, 0.3 * xs]), 3.0),
            Anchor(2, np.column_stack([xs, -0.3 * xs]), 4.0),
        ],
        GEOMETRIC,
    )


def _single(n=1, seed=0):
    rng = np.random.default_rng(seed)
    x0 = np.concatenate([np.column_stack([np.arange(1, 11.0), 0.1 * np.arange(1, 11.0)]).ravel(), [6.0]])
    z = rng.normal(size=CONTEXT_WIDTH)
    return TrainingSet.label(GEOMETRIC, np.repeat(x0[None], n, 0), np.repeat(z[None], n, 0), _anchors())


def test_labels_match_nearest_anchor():
    rng = np.random.default_rng(1)
    anchors = _anchors()
    samples = []
    for _ in range(30):
        pts = np.column_stack([np.arange(1, 11.0), rng.normal() * np.arange(1, 11.0)])
        traj = Trajectory(GEOMETRIC, pts, 5.0)
        samples.append(Sample(traj, Context(5.0, (10.0, 0.0)), nearest_anchor(traj, anchors)))
    ts = TrainingSet.from_samples(samples)
    relabeled = TrainingSet.label(GEOMETRIC, ts.x0, ts.z, anchors)
    np.testing.assert_array_equal(relabeled.labels, ts.labels)


def test_truncated_time_never_exceeds_cutoff():
    rng = np.random.default_rng(2)
    x0 = np.zeros((100_000, 3))
    _, t, _ = corrupt("truncated", x0, x0, SCHED, CFG, rng)
    assert t.max() <= 0.3 * SCHED.t_max
    assert t.min() >= SCHED.t_eps


def test_full_anchor_channel_is_zero():
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=(50, 5))
    _, _, y_in = corrupt("full", x0, rng.normal(size=(50, 5)), SCHED, CFG, rng)
    np.testing.assert_array_equal(y_in, 0.0)
    seen = []
    loss_step(lambda x, t, y, z: seen.append(y) or x, _single(8), _anchors(), SCHED, CFG, rng, variant="full")
    np.testing.assert_array_equal(seen[0], 0.0)


@pytest.mark.parametrize("variant", ["bridge", "truncated", "full"])
def test_perfect_predictor_has_zero_loss(variant):
    data = _single(16)
    oracle = lambda x_t, t, y, z: data.x0  # identity scaling for callables
    loss, grads = loss_step(oracle, data, _anchors(), SCHED, CFG, np.random.default_rng(0), variant=variant)
    assert loss == 0.0 and grads is None


def test_bridge_identity_predictor_matches_quadrature():
    # predictor x_hat = x_t; loss = E_t E|a y + (b - 1) x0 + c eps|^2 / d
    data = _single(100_000)
    anchors = _anchors()
    x0, y = data.x0[0], anchors.vector(int(data.labels[0]))
    d = len(x0)

    def integrand(t):
        co = bridge_coeffs(SCHED, t)
        m = co.a * y + (co.b - 1) * x0
        return (m @ m) / d + co.c**2

    expected = quad(integrand, SCHED.t_eps, SCHED.t_max, limit=200)[0] / (SCHED.t_max - SCHED.t_eps)
    loss, _ = bridge_loss_step(lambda x, t, yy, z: x, data, anchors, SCHED, CFG, np.random.default_rng(4))
    assert loss == pytest.approx(expected, rel=0.02)


def test_full_identity_predictor_matches_quadrature():
    data = _single(100_000)
    x0 = data.x0[0]
    msq = (x0 @ x0) / len(x0)

    def integrand(t):
        alpha, sigma = vp_alpha_sigma(SCHED, t)
        return (alpha - 1) ** 2 * msq + sigma**2

    expected = quad(integrand, SCHED.t_eps, SCHED.t_max)[0] / (SCHED.t_max - SCHED.t_eps)
    loss, _ = full_diffusion_loss_step(lambda x, t, y, z: x, data, SCHED, CFG, np.random.default_rng(5))
    assert loss == pytest.approx(expected, rel=0.02)


def test_truncated_identity_predictor_at_small_t():
    # at t_eps the noisy anchor sits on y, so the error is |y - x0|^2 / d
    data = _single(100_000)
    anchors = _anchors()
    cfg = TrainConfig(t_trunc_frac=2 * SCHED.t_eps)
    x0, y = data.x0[0], anchors.vector(int(data.labels[0]))
    loss, _ = truncated_loss_step(lambda x, t, yy, z: x, data, anchors, SCHED, cfg, np.random.default_rng(6))
    assert loss == pytest.approx(((y - x0) ** 2).mean(), rel=0.02)


def test_forward_kernel_symmetry_and_asymmetry():
    rng = np.random.default_rng(7)
    d = 21
    x0 = rng.normal(size=(1000, d))
    y = x0 + rng.normal(size=(1000, d)) * 3
    t_eps = SCHED.t_eps
    c_eps = bridge_coeffs(SCHED, t_eps).c
    xb, _, _ = corrupt("bridge", x0, y, SCHED, CFG, rng, t=t_eps)
    assert np.all(np.linalg.norm(xb - x0, axis=1) < 10 * c_eps * np.sqrt(d))
    yt, _, _ = corrupt("truncated", x0, y, SCHED, CFG, rng, t=t_eps)
    gap = np.linalg.norm(y - x0, axis=1)
    np.testing.assert_allclose(np.linalg.norm(yt - x0, axis=1), gap, rtol=0.05)


def test_classifier_loss_uniform_at_init():
    from anchorbridge.model import ClassifierParams, Standardizer

    phi = ClassifierParams.init(20, Standardizer.identity(CONTEXT_WIDTH))
    data = _single(4)
    loss, _, _ = classifier_loss_step(phi, data)
    assert loss == pytest.approx(np.log(20))


def test_overfit_single_sample():
    data = _single(1)
    cfg = TrainConfig(epochs=1500, lr0=1e-3, lr_t0=1500)
    res = train(data, _anchors(), cfg)
    assert res.log[-1].diffusion_loss < 1e-3
    assert res.log[-1].classifier_accuracy == 1.0


def test_train_is_deterministic():
    data = _single(10)
    cfg = TrainConfig(epochs=3, denoiser_hidden=(16,), classifier_hidden=(8,), seed=3)
    a, b = train(data, _anchors(), cfg), train(data, _anchors(), cfg)
    for k in a.theta.mlp.params:
        np.testing.assert_array_equal(a.theta.mlp.params[k], b.theta.mlp.params[k])
    for k in a.phi.mlp.params:
        np.testing.assert_array_equal(a.phi.mlp.params[k], b.phi.mlp.params[k])
    c = train(data, _anchors(), TrainConfig(epochs=3, denoiser_hidden=(16,), classifier_hidden=(8,), seed=4))
    assert not np.array_equal(a.theta.mlp.params["W0"], c.theta.mlp.params["W0"])


def test_full_variant_has_no_classifier():
    res = train(_single(4), _anchors(), TrainConfig(variant="full", epochs=1, denoiser_hidden=(8,)))
    assert res.phi is None


def test_divergence_is_reported():
    data = _single(4)
    data.x0[0, 0] = np.nan
    with pytest.raises(TrainingDiverged):
        train(data, _anchors(), TrainConfig(epochs=1, denoiser_hidden=(8,)))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(t_trunc_frac=1.0)


# -- filtering -------------------------------------------------------------------


def _straight(n, speed=5.0):
    wp = np.column_stack([np.arange(1, 11.0), np.zeros(10)])
    return [Frame(speed, wp.copy()) for _ in range(n)]


def test_filter_constant_log_keeps_only_residual_sample():
    frames = _straight(100)
    kept = filter_dataset(frames, seed=0)
    assert len(kept) == round(0.14 * 100)
    assert not change_mask(frames).any()


def test_filter_speed_step_kept():
    frames = _straight(10)
    frames[5] = Frame(5.2, frames[5].waypoints)
    mask = change_mask(frames)
    assert mask[5] and mask[6]  # step up, then step back down
    assert mask.sum() == 2
    assert filter_dataset([], seed=0) == []


def test_filter_bearing_change_kept():
    frames = _straight(3)
    rot = np.deg2rad(0.6)
    frames[2] = Frame(5.0, frames[2].waypoints @ np.array([[np.cos(rot), np.sin(rot)], [-np.sin(rot), np.cos(rot)]]))
    assert change_mask(frames).tolist() == [False, False, True]
    small = np.deg2rad(0.4)
    frames[2] = Frame(5.0, frames[1].waypoints @ np.array([[np.cos(small), np.sin(small)], [-np.sin(small), np.cos(small)]]))
    assert change_mask(frames).tolist() == [False, False, False]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 10), st.floats(-0.05, 0.05)), min_size=0, max_size=60), st.integers(0, 99))
def test_filter_matches_brute_force(rows, seed):
    frames = [Frame(round(v, 1), np.column_stack([np.arange(1, 11.0), k * np.arange(1, 11.0)])) for v, k in rows]
    # brute-force re-scan of the thresholds
    trips = []
    for i, f in enumerate(frames):
        if i == 0:
            trips.append(False)
            continue
        p = frames[i - 1]
        bear = lambda w: np.degrees(np.arctan2(w[:, 1], w[:, 0]))
        trips.append(abs(f.target_speed - p.target_speed) > 0.1 or
                     bool(np.any(np.abs(bear(f.waypoints) - bear(p.waypoints)) > 0.5)))
    kept = filter_dataset(frames, seed)
    n_trip = sum(trips)
    assert len(kept) == n_trip + round(0.14 * (len(frames) - n_trip))
    ids = [id(f) for f in kept]
    assert ids == [id(f) for f in frames if id(f) in set(ids)]  # order preserved
    for f, t in zip(frames, trips):
        if t:
            assert id(f) in ids
    assert filter_dataset(frames, seed) == kept
