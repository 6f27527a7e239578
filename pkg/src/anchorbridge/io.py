"""Artifact files: anchors, datasets, checkpoints, training logs, traces and reports.

Text artifacts start with ``#`` header lines of the form ``# key: value``; the
first header line names the format and its schema version. Every artifact
records the run's config hash and seed.

Checkpoint layout (all integers little-endian)::

    magic        8 bytes   b"ABRGCKPT"
    schema       uint32
    header_len   uint32
    header       header_len bytes of UTF-8 JSON (sorted keys)
    blobs        float64 little-endian arrays, in header["blobs"] order
    checksum     32 bytes  SHA-256 of everything above

The JSON header holds ``kind``, ``variant``, ``n_point``, ``n_anchor``,
``config_hash``, ``seed`` and ``blobs`` (a list of ``[name, shape]``). Blob
names are ``theta/W0``, ``theta/b0``, ... for the denoiser MLP plus
``theta/traj_mean``, ``theta/traj_std``, ``theta/ctx_mean``,
``theta/ctx_std``; the classifier (absent for the full-diffusion variant)
uses the same scheme under ``phi/``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .data import Dataset
from .geom import Anchor, AnchorSet
from .model import CONTEXT_WIDTH, ClassifierParams, DenoiserParams, Standardizer

MAGIC = b"ABRGCKPT"
CHECKPOINT_SCHEMA = 1
ANCHORS_SCHEMA = 1
DATASET_SCHEMA = 1
TRACE_SCHEMA = 1
REPORT_SCHEMA = 1


class ArtifactError(ValueError):
    """Malformed, corrupted or mismatched artifact file."""


def fmt(x: float) -> str:
    """17 significant digits: enough to round-trip any float64."""
    return format(float(x), ".17g")


# -- header helpers ---------------------------------------------------------------


def _header_lines(fmt_name: str, schema: int, meta: dict) -> list[str]:
    lines = [f"# {fmt_name} v{schema}"]
    lines += [f"# {k}: {v}" for k, v in meta.items()]
    return lines


def _read_header(lines: list[str], fmt_name: str, schema: int) -> tuple[dict, int]:
    if not lines or lines[0].strip() != f"# {fmt_name} v{schema}":
        got = lines[0].strip() if lines else "<empty>"
        raise ArtifactError(f"expected '# {fmt_name} v{schema}' header, got {got!r}")
    meta, i = {}, 1
    while i < len(lines) and lines[i].startswith("#"):
        key, _, value = lines[i][1:].partition(":")
        meta[key.strip()] = value.strip()
        i += 1
    return meta, i


def _require(meta: dict, *keys):
    missing = [k for k in keys if k not in meta]
    if missing:
        raise ArtifactError(f"header is missing {missing}")


# -- anchors ----------------------------------------------------------------------


def anchors_text(anchors: AnchorSet, config_hash: str, seed: int) -> str:
    meta = {
        "kind": anchors.kind,
        "n_anchor": len(anchors),
        "n_point": anchors.n_point,
        "rng_seed": anchors.rng_seed,
        "inertia": fmt(anchors.inertia),
        "config_hash": config_hash,
        "seed": seed,
        "columns": "index speed x1 y1 ... xN yN",
    }
    lines = _header_lines("anchorbridge-anchors", ANCHORS_SCHEMA, meta)
    for a in anchors.anchors:
        lines.append(" ".join([str(a.index), fmt(a.speed), *(fmt(v) for v in a.points.ravel())]))
    return "\n".join(lines) + "\n"


def write_anchors(path, anchors: AnchorSet, config_hash: str, seed: int) -> None:
    Path(path).write_text(anchors_text(anchors, config_hash, seed))


def read_anchors(path) -> tuple[AnchorSet, dict]:
    lines = Path(path).read_text().splitlines()
    meta, start = _read_header(lines, "anchorbridge-anchors", ANCHORS_SCHEMA)
    _require(meta, "kind", "n_anchor", "n_point", "rng_seed", "config_hash", "seed")
    n_point = int(meta["n_point"])
    rows = []
    for ln in lines[start:]:
        if not ln.strip():
            continue
        parts = ln.split()
        if len(parts) != 2 + 2 * n_point:
            raise ArtifactError(f"anchor row has {len(parts)} fields, expected {2 + 2 * n_point}")
        rows.append(Anchor(int(parts[0]), np.array([float(v) for v in parts[2:]]).reshape(-1, 2), float(parts[1])))
    if len(rows) != int(meta["n_anchor"]):
        raise ArtifactError(f"header says {meta['n_anchor']} anchors, file has {len(rows)}")
    try:
        anchors = AnchorSet(rows, meta["kind"], int(meta["rng_seed"]), float(meta.get("inertia", "nan")))
    except ValueError as exc:
        raise ArtifactError(str(exc)) from exc
    return anchors, meta


# -- dataset ----------------------------------------------------------------------


def write_dataset(path, ds: Dataset, config_hash: str, seed: int) -> None:
    meta = {
        "kind": ds.kind,
        "n_point": ds.n_point,
        "trajectory_width": ds.x0.shape[1],
        "context_width": CONTEXT_WIDTH,
        "n_samples": len(ds),
        "config_hash": config_hash,
        "seed": seed,
        "columns": "scenario_kind episode trajectory[trajectory_width] context[context_width]",
    }
    with open(path, "w") as f:
        f.write("\n".join(_header_lines("anchorbridge-dataset", DATASET_SCHEMA, meta)) + "\n")
        for k, e, x, z in zip(ds.scenario_kind, ds.episode, ds.x0, ds.z):
            f.write(" ".join([str(int(k)), str(int(e)), *(fmt(v) for v in x), *(fmt(v) for v in z)]) + "\n")


def read_dataset(path) -> tuple[Dataset, dict]:
    lines = Path(path).read_text().splitlines()
    meta, start = _read_header(lines, "anchorbridge-dataset", DATASET_SCHEMA)
    _require(meta, "kind", "n_point", "trajectory_width", "context_width", "n_samples", "config_hash", "seed")
    tw, cw = int(meta["trajectory_width"]), int(meta["context_width"])
    if cw != CONTEXT_WIDTH:
        raise ArtifactError(f"context width {cw} does not match this build ({CONTEXT_WIDTH})")
    body = [ln for ln in lines[start:] if ln.strip()]
    if len(body) != int(meta["n_samples"]):
        raise ArtifactError(f"header says {meta['n_samples']} samples, file has {len(body)}")
    if not body:
        raise ArtifactError("dataset file has no samples")
    arr = np.loadtxt(io.StringIO("\n".join(body)), dtype=np.float64, ndmin=2)
    if arr.shape[1] != 2 + tw + cw:
        raise ArtifactError(f"rows have {arr.shape[1]} columns, expected {2 + tw + cw}")
    try:
        ds = Dataset(meta["kind"], int(meta["n_point"]), arr[:, 2 : 2 + tw], arr[:, 2 + tw :],
                     arr[:, 0].astype(int), arr[:, 1].astype(int))
    except ValueError as exc:
        raise ArtifactError(str(exc)) from exc
    return ds, meta


# -- checkpoint -------------------------------------------------------------------


@dataclass
class Checkpoint:
    theta: DenoiserParams
    phi: ClassifierParams | None
    meta: dict  # the JSON header, minus the blob table


def _mlp_blobs(prefix: str, mlp: nn.Mlp) -> list:
    return [(f"{prefix}/{k}", mlp.params[k]) for k in sorted(mlp.params, key=lambda k: (int(k[1:]), k[0]))]


def _scale_blobs(prefix: str, name: str, sc: Standardizer) -> list:
    return [(f"{prefix}/{name}_mean", sc.mean), (f"{prefix}/{name}_std", sc.std)]


def checkpoint_bytes(theta: DenoiserParams, phi: ClassifierParams | None, config_hash: str, seed: int, extra=None) -> bytes:
    blobs = _mlp_blobs("theta", theta.mlp)
    blobs += _scale_blobs("theta", "traj", theta.traj_scale) + _scale_blobs("theta", "ctx", theta.ctx_scale)
    if phi is not None:
        blobs += _mlp_blobs("phi", phi.mlp) + _scale_blobs("phi", "ctx", phi.ctx_scale)
    header = {
        "kind": theta.kind,
        "variant": theta.variant,
        "n_point": theta.n_point,
        "n_anchor": phi.n_anchor if phi is not None else 0,
        "config_hash": config_hash,
        "seed": int(seed),
        "blobs": [[name, list(np.shape(a))] for name, a in blobs],
        **(extra or {}),
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    out = bytearray(MAGIC + struct.pack("<II", CHECKPOINT_SCHEMA, len(hdr)) + hdr)
    for _, a in blobs:
        out += np.ascontiguousarray(a, dtype="<f8").tobytes()
    out += hashlib.sha256(out).digest()
    return bytes(out)


def write_checkpoint(path, theta, phi, config_hash: str, seed: int, extra=None) -> None:
    Path(path).write_bytes(checkpoint_bytes(theta, phi, config_hash, seed, extra))


def _mlp_from(blobs: dict, prefix: str) -> nn.Mlp:
    params = {k.split("/", 1)[1]: v for k, v in blobs.items() if k.startswith(prefix + "/") and k.split("/", 1)[1][0] in "Wb"}
    n_layers = len(params) // 2
    if n_layers < 1 or any(f"W{i}" not in params or f"b{i}" not in params for i in range(n_layers)):
        raise ArtifactError(f"checkpoint has an incomplete {prefix} network")
    widths = [params["W0"].shape[0]] + [params[f"W{i}"].shape[1] for i in range(n_layers)]
    try:
        return nn.Mlp(widths, params=params)
    except ValueError as exc:
        raise ArtifactError(str(exc)) from exc


def read_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 + 32 or raw[: len(MAGIC)] != MAGIC:
        raise ArtifactError(f"{path}: not a checkpoint (bad magic)")
    if hashlib.sha256(raw[:-32]).digest() != raw[-32:]:
        raise ArtifactError(f"{path}: checksum mismatch")
    schema, hlen = struct.unpack_from("<II", raw, len(MAGIC))
    if schema != CHECKPOINT_SCHEMA:
        raise ArtifactError(f"{path}: unsupported checkpoint schema {schema}")
    pos = len(MAGIC) + 8
    header = json.loads(raw[pos : pos + hlen].decode())
    pos += hlen
    blobs = {}
    for name, shape in header.pop("blobs"):
        count = int(np.prod(shape)) if shape else 1
        blobs[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * count
    if pos != len(raw) - 32:
        raise ArtifactError(f"{path}: blob table does not match payload size")
    sc = lambda p, n: Standardizer(blobs[f"{p}/{n}_mean"], blobs[f"{p}/{n}_std"])
    theta = DenoiserParams(header["kind"], header["variant"], int(header["n_point"]), _mlp_from(blobs, "theta"),
                           sc("theta", "traj"), sc("theta", "ctx"))
    phi = None
    if any(k.startswith("phi/") for k in blobs):
        phi = ClassifierParams(_mlp_from(blobs, "phi"), sc("phi", "ctx"))
    return Checkpoint(theta, phi, header)


# -- training log, traces, reports ------------------------------------------------

TRAIN_LOG_COLUMNS = ("epoch", "diffusion_loss", "classifier_loss", "classifier_accuracy", "lr")


def write_train_log(path, history, config_hash: str, seed: int, variant: str) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# anchorbridge-train-log v1\n# variant: {variant}\n# config_hash: {config_hash}\n# seed: {seed}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRAIN_LOG_COLUMNS)
        for e in history:
            w.writerow([e.epoch, fmt(e.diffusion_loss), fmt(e.classifier_loss), fmt(e.classifier_accuracy), fmt(e.lr)])


def read_train_log(path) -> tuple[list[dict], dict]:
    lines = Path(path).read_text().splitlines()
    meta, start = _read_header(lines, "anchorbridge-train-log", 1)
    rows = list(csv.DictReader(lines[start:]))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows], meta


@dataclass
class TraceRecord:
    """One plan call's denoising trace in raw trajectory coordinates."""

    kind: str
    variant: str
    anchor: np.ndarray | None  # x_T (bridge start / anchor the baseline was corrupted from)
    times: np.ndarray  # (n_steps + 1,)
    states: np.ndarray  # (n_steps + 1, width)
    meta: dict


def write_trace(path, kind: str, variant: str, anchor, times, states, config_hash: str, seed: int, extra=None) -> None:
    meta = {"kind": kind, "variant": variant, "n_steps": len(times) - 1, "width": np.shape(states)[1],
            "config_hash": config_hash, "seed": seed, **(extra or {})}
    with open(path, "w", newline="") as f:
        f.write("\n".join(_header_lines("anchorbridge-trace", TRACE_SCHEMA, meta)) + "\n")
        w = csv.writer(f, lineterminator="\n")
        width = np.shape(states)[1]
        w.writerow(["step", "t", *(f"v{i}" for i in range(width))])
        if anchor is not None:
            w.writerow(["anchor", "", *(fmt(v) for v in anchor)])
        for i, (t, x) in enumerate(zip(times, states)):
            w.writerow([i, fmt(t), *(fmt(v) for v in x)])


def read_trace(path) -> TraceRecord:
    lines = Path(path).read_text().splitlines()
    meta, start = _read_header(lines, "anchorbridge-trace", TRACE_SCHEMA)
    _require(meta, "kind", "variant", "n_steps", "width")
    rows = list(csv.reader(lines[start + 1 :]))
    anchor = None
    if rows and rows[0][0] == "anchor":
        anchor = np.array([float(v) for v in rows[0][2:]])
        rows = rows[1:]
    times = np.array([float(r[1]) for r in rows])
    states = np.array([[float(v) for v in r[2:]] for r in rows])
    if len(rows) != int(meta["n_steps"]) + 1:
        raise ArtifactError(f"trace has {len(rows)} states, header says {meta['n_steps']} steps")
    return TraceRecord(meta["kind"], meta["variant"], anchor, times, states, meta)


def report_text(report, config_hash: str, seed: int, extra=None) -> str:
    """Per-episode CSV followed by summary rows; deterministic formatting."""
    from .world.rollout import REPORT_COLUMNS

    buf = io.StringIO()
    meta = {"config_hash": config_hash, "seed": seed, **(extra or {})}
    buf.write("\n".join(_header_lines("anchorbridge-report", REPORT_SCHEMA, meta)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in report.episodes:
        w.writerow([
            r.kind, r.seed, int(r.success), f"{r.completion:.6f}", f"{r.driving_score:.6f}", f"{r.efficiency:.6f}",
            f"{r.comfort:.6f}", r.ticks, r.reason, ";".join(r.infractions),
        ])
    buf.write("# summary\n")
    w.writerow(["scope", "episodes", "success_rate", "driving_score", "efficiency", "comfort"])
    w.writerow(["all", len(report.episodes), f"{report.sr:.6f}", f"{report.mean_ds:.6f}", f"{report.efficiency:.6f}",
                f"{report.comfort:.6f}"])
    for kind, (n, sr, ds) in report.per_kind.items():
        w.writerow([kind, n, f"{sr:.6f}", f"{ds:.6f}", "", ""])
    return buf.getvalue()


def read_report(path) -> tuple[list[dict], list[dict], dict]:
    """Returns ``(episode rows, summary rows, header)``."""
    lines = Path(path).read_text().splitlines()
    meta, start = _read_header(lines, "anchorbridge-report", REPORT_SCHEMA)
    cut = lines.index("# summary")
    episodes = list(csv.DictReader(lines[start:cut]))
    summary = list(csv.DictReader(lines[cut + 1 :]))
    return episodes, summary, meta


def _pairs(pts) -> str:
    return ";".join(f"{fmt(x)}:{fmt(y)}" for x, y in np.asarray(pts).reshape(-1, 2))


def _unpairs(text: str) -> np.ndarray:
    if not text:
        return np.zeros((0, 2))
    return np.array([[float(v) for v in p.split(":")] for p in text.split(";")])


def write_episode_trace(path, scenario_kind: str, scenario_seed: int, trace, config_hash: str, seed: int) -> None:
    """Per-tick ego state, agent positions and (on replan ticks) the world-frame plan."""
    plans = dict(trace.plans)
    meta = {"scenario_kind": scenario_kind, "scenario_seed": scenario_seed, "config_hash": config_hash, "seed": seed}
    with open(path, "w", newline="") as f:
        f.write("\n".join(_header_lines("anchorbridge-episode", TRACE_SCHEMA, meta)) + "\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["tick", "x", "y", "heading", "speed", "accel", "steer", "agents", "plan"])
        last_plan = None
        for tick, ego, agents in zip(trace.ticks, trace.ego, trace.agents):
            # a plan made at tick k is executed from tick k + 1 onward
            if tick - 1 in plans:
                last_plan = plans[tick - 1]
            w.writerow([tick, *(fmt(v) for v in ego), _pairs(agents), _pairs(last_plan) if last_plan is not None else ""])


def read_episode_trace(path) -> tuple[list[dict], dict]:
    lines = Path(path).read_text().splitlines()
    meta, start = _read_header(lines, "anchorbridge-episode", TRACE_SCHEMA)
    _require(meta, "scenario_kind", "scenario_seed")
    rows = []
    for r in csv.DictReader(lines[start:]):
        rows.append({
            "tick": int(r["tick"]),
            "ego": tuple(float(r[k]) for k in ("x", "y", "heading", "speed", "accel", "steer")),
            "agents": _unpairs(r["agents"]),
            "plan": _unpairs(r["plan"]) if r["plan"] else None,
        })
    return rows, meta
