import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anchorbridge.config import ConfigError, RunConfig
from anchorbridge.data import Dataset
from anchorbridge.geom import GEOMETRIC, TEMPORAL, Anchor, AnchorSet
from anchorbridge.io import (
    MAGIC,
    ArtifactError,
    anchors_text,
    checkpoint_bytes,
    read_anchors,
    read_checkpoint,
    read_dataset,
    read_report,
    read_trace,
    read_train_log,
    report_text,
    write_anchors,
    write_checkpoint,
    write_dataset,
    write_trace,
    write_train_log,
)
from anchorbridge.model import CONTEXT_WIDTH, ClassifierParams, DenoiserParams, Standardizer, classify, denoise
from anchorbridge.training import EpochLog
from anchorbridge.world import EpisodeResult, aggregate

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def _anchor_set(values, kind=GEOMETRIC):
    n_point = 10 if kind == GEOMETRIC else 8
    arr = np.resize(np.array(values, dtype=float), 3 * (2 * n_point + 1)).reshape(3, -1)
    return AnchorSet([Anchor(i, arr[i, 1:].reshape(-1, 2), float(arr[i, 0])) for i in range(3)], kind, rng_seed=7, inertia=1.25)


@settings(max_examples=30, deadline=None)
@given(st.lists(finite, min_size=1, max_size=63))
def test_anchor_file_round_trips_bit_exact(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("a") / "anchors.txt"
    anchors = _anchor_set(values)
    write_anchors(path, anchors, "abc", 3)
    back, meta = read_anchors(path)
    assert back.kind == GEOMETRIC and back.rng_seed == 7 and meta["config_hash"] == "abc" and meta["seed"] == "3"
    for a, b in zip(anchors.anchors, back.anchors):
        assert a.speed == b.speed and np.array_equal(a.points, b.points)
    # re-serialization is byte-identical
    assert anchors_text(back, "abc", 3) == path.read_text()


def test_anchor_file_rejects_wrong_header_and_row_count(tmp_path):
    path = tmp_path / "anchors.txt"
    write_anchors(path, _anchor_set([1.0, 2.0], TEMPORAL), "h", 0)
    text = path.read_text()
    (tmp_path / "bad1.txt").write_text(text.replace("anchorbridge-anchors v1", "anchorbridge-anchors v9"))
    (tmp_path / "bad2.txt").write_text("\n".join(text.splitlines()[:-1]) + "\n")
    for name in ("bad1.txt", "bad2.txt"):
        with pytest.raises(ArtifactError):
            read_anchors(tmp_path / name)


def _dataset(n=7, kind=GEOMETRIC, seed=0):
    rng = np.random.default_rng(seed)
    width = 21 if kind == GEOMETRIC else 16
    return Dataset(kind, 10 if kind == GEOMETRIC else 8, rng.normal(size=(n, width)) * 10.0 ** rng.integers(-8, 8, (n, width)),
                   rng.normal(size=(n, CONTEXT_WIDTH)), rng.integers(0, 4, n), rng.integers(0, 100, n))


@pytest.mark.parametrize("kind", [GEOMETRIC, TEMPORAL])
def test_dataset_file_round_trip_and_header(tmp_path, kind):
    ds = _dataset(kind=kind)
    write_dataset(tmp_path / "d.txt", ds, "cafe", 5)
    back, meta = read_dataset(tmp_path / "d.txt")
    assert meta["kind"] == kind and meta["context_width"] == str(CONTEXT_WIDTH) and meta["seed"] == "5"
    assert np.array_equal(back.x0, ds.x0) and np.array_equal(back.z, ds.z)
    assert np.array_equal(back.scenario_kind, ds.scenario_kind) and np.array_equal(back.episode, ds.episode)


def test_dataset_file_detects_truncation(tmp_path):
    write_dataset(tmp_path / "d.txt", _dataset(), "cafe", 5)
    lines = (tmp_path / "d.txt").read_text().splitlines()
    (tmp_path / "t.txt").write_text("\n".join(lines[:-2]) + "\n")
    with pytest.raises(ArtifactError, match="samples"):
        read_dataset(tmp_path / "t.txt")


def _params(variant="bridge", seed=0):
    rng = np.random.default_rng(seed)
    traj = Standardizer(rng.normal(size=21), rng.uniform(0.5, 2, 21))
    ctx = Standardizer(rng.normal(size=CONTEXT_WIDTH), rng.uniform(0.5, 2, CONTEXT_WIDTH))
    theta = DenoiserParams.init(GEOMETRIC, variant, 10, traj, ctx, (16, 8), seed=seed)
    for v in theta.mlp.params.values():
        v += rng.normal(size=v.shape)
    phi = None
    if variant != "full":
        phi = ClassifierParams.init(5, ctx, (12,), seed=seed + 1)
        for v in phi.mlp.params.values():
            v += rng.normal(size=v.shape)
    return theta, phi


@pytest.mark.parametrize("variant", ["bridge", "full", "truncated"])
def test_checkpoint_round_trip_reproduces_outputs(tmp_path, variant):
    theta, phi = _params(variant)
    path = tmp_path / "m.ckpt"
    write_checkpoint(path, theta, phi, "feed", 11, extra={"epochs": 3})
    ck = read_checkpoint(path)
    assert ck.meta["variant"] == variant and ck.meta["kind"] == GEOMETRIC and ck.meta["seed"] == 11
    assert ck.meta["config_hash"] == "feed" and ck.meta["epochs"] == 3
    rng = np.random.default_rng(1)
    x, y, z = rng.normal(size=(4, 21)), rng.normal(size=(4, 21)), rng.normal(size=(4, CONTEXT_WIDTH))
    t = rng.uniform(0.1, 0.9, 4)
    assert np.array_equal(denoise(ck.theta, x, t, y, z), denoise(theta, x, t, y, z))
    if phi is None:
        assert ck.phi is None
    else:
        assert np.array_equal(classify(ck.phi, z), classify(phi, z))
    # writing the loaded parameters again gives the same bytes
    assert checkpoint_bytes(ck.theta, ck.phi, "feed", 11, {"epochs": 3}) == path.read_bytes()


def test_checkpoint_layout_and_corruption(tmp_path):
    theta, phi = _params()
    raw = checkpoint_bytes(theta, phi, "feed", 0)
    assert raw[:8] == MAGIC
    assert int.from_bytes(raw[8:12], "little") == 1
    hlen = int.from_bytes(raw[12:16], "little")
    header = json.loads(raw[16 : 16 + hlen])
    n_floats = sum(int(np.prod(s)) for _, s in header["blobs"])
    assert len(raw) == 16 + hlen + 8 * n_floats + 32
    # the first blob is theta/W0, stored little-endian row-major
    w0 = np.frombuffer(raw, "<f8", count=theta.mlp.params["W0"].size, offset=16 + hlen)
    assert header["blobs"][0][0] == "theta/W0" and np.array_equal(w0, theta.mlp.params["W0"].ravel())

    flipped = bytearray(raw)
    flipped[16 + hlen + 5] ^= 0x01
    (tmp_path / "c.ckpt").write_bytes(bytes(flipped))
    with pytest.raises(ArtifactError, match="checksum"):
        read_checkpoint(tmp_path / "c.ckpt")
    (tmp_path / "m.ckpt").write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(ArtifactError, match="magic"):
        read_checkpoint(tmp_path / "m.ckpt")


def test_train_log_round_trip(tmp_path):
    hist = [EpochLog(i, 1.0 / (i + 1), 2.0 - 0.1 * i, 0.5 + 0.01 * i, 1e-3) for i in range(4)]
    write_train_log(tmp_path / "log.csv", hist, "h", 2, "bridge")
    rows, meta = read_train_log(tmp_path / "log.csv")
    assert meta["variant"] == "bridge" and meta["seed"] == "2"
    assert [r["epoch"] for r in rows] == [0, 1, 2, 3]
    assert [r["diffusion_loss"] for r in rows] == [e.diffusion_loss for e in hist]


def test_trace_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    states, times, anchor = rng.normal(size=(6, 21)), np.linspace(1, 1e-4, 6), rng.normal(size=21)
    write_trace(tmp_path / "tr.csv", GEOMETRIC, "bridge", anchor, times, states, "h", 1)
    tr = read_trace(tmp_path / "tr.csv")
    assert tr.kind == GEOMETRIC and tr.variant == "bridge"
    assert np.array_equal(tr.anchor, anchor) and np.array_equal(tr.states, states) and np.array_equal(tr.times, times)
    write_trace(tmp_path / "full.csv", GEOMETRIC, "full", None, times, states, "h", 1)
    assert read_trace(tmp_path / "full.csv").anchor is None


def test_report_text_is_deterministic_and_parses(tmp_path):
    res = [
        EpisodeResult("lane-fork", 1, True, 1.0, (), 100.0, 80.0, 95.0, 400, "goal"),
        EpisodeResult("lane-fork", 0, False, 0.4, ("12:collision",), 20.0, 50.0, 90.0, 12, "collision"),
        EpisodeResult("merge-lite", 0, False, 1.0, ("40:missed-target",), 70.0, 70.0, 99.0, 500, "goal"),
    ]
    text = report_text(aggregate(res), "h", 0)
    assert text == report_text(aggregate(res[::-1]), "h", 0)
    (tmp_path / "r.csv").write_text(text)
    eps, summary, meta = read_report(tmp_path / "r.csv")
    assert [(e["kind"], e["seed"]) for e in eps] == [("lane-fork", "0"), ("lane-fork", "1"), ("merge-lite", "0")]
    assert eps[0]["infractions"] == "12:collision"
    assert summary[0]["scope"] == "all" and float(summary[0]["success_rate"]) == pytest.approx(100 / 3)
    assert meta["config_hash"] == "h"


# -- run config -------------------------------------------------------------------


def test_config_round_trip_and_hash(tmp_path):
    raw = {"schema": 1, "kind": "temporal", "seed": 4, "train": {"epochs": 3, "denoiser_hidden": [32, 32]},
           "data": {"seeds": {"start": 5, "stop": 8}}, "suite": {"kinds": ["lane-fork"], "seeds": [0, 1]},
           "output_dir": "out"}
    (tmp_path / "c.json").write_text(json.dumps(raw))
    cfg = RunConfig.load(tmp_path / "c.json")
    assert cfg.kind == "temporal" and cfg.points == 8 and cfg.data.seeds == (5, 6, 7)
    assert cfg.train_config("full").denoiser_hidden == (32, 32) and cfg.train_config("full").seed == 4
    assert cfg.output_dir == str((tmp_path / "out").resolve())
    again = RunConfig.from_dict(json.loads(cfg.to_json()), base=tmp_path)
    assert again.hash == cfg.hash
    # the hash ignores the seed and output directory but not the training settings
    assert cfg.with_seed(9).hash == cfg.hash
    raw2 = dict(raw, output_dir="elsewhere")
    assert RunConfig.from_dict(raw2, base=tmp_path).hash == cfg.hash
    raw3 = dict(raw, train={"epochs": 4, "denoiser_hidden": [32, 32]})
    assert RunConfig.from_dict(raw3, base=tmp_path).hash != cfg.hash


@pytest.mark.parametrize("raw, match", [
    ({"schema": 2}, "schema"),
    ({"schema": 1, "bogus": 1}, "unknown"),
    ({"schema": 1, "kind": "polar"}, "kind"),
    ({"schema": 1, "train": {"seed": 3}}, "train keys"),
    ({"schema": 1, "train": {"epochs": 0}}, "epochs"),
    ({"schema": 1, "suite": "missing.json"}, "not found"),
    ({"schema": 1, "steps": {"bridge": 0, "full": 1, "truncated": 1}}, "steps"),
])
def test_config_validation(tmp_path, raw, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.from_dict(raw, base=tmp_path)
