"""Report figures (matplotlib) and SVG frame rendering.

SVG frames are written by hand so they are byte-stable across runs and so
plotted coordinates are exactly the stored ones: the drawing group flips the
y axis, and every polyline lists raw ego- or world-frame metres.
"""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .geom import Trajectory
from .io import TraceRecord, fmt

STATE_COLOR = "#1f5fbf"
ANCHOR_COLOR = "#d9822b"
HISTORY_COLOR = "#9fb6d9"


def report_figures(report, out_dir, title: str = "") -> list[Path]:
    """Per-kind success rate bars and a driving-score histogram, as PNG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kinds = list(report.per_kind)
    paths = []

    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.bar(range(len(kinds)), [report.per_kind[k][1] for k in kinds], color=STATE_COLOR)
    ax.axhline(report.sr, color="k", lw=0.8, ls="--", label=f"overall {report.sr:.1f}%")
    ax.set_xticks(range(len(kinds)), kinds, rotation=15)
    ax.set_ylim(0, 100)
    ax.set_ylabel("success rate [%]")
    ax.set_title(title or "success rate per scenario kind")
    ax.legend(frameon=False, loc="lower right")
    fig.tight_layout()
    paths.append(out_dir / "success_rate.png")
    fig.savefig(paths[-1], dpi=120, metadata={"Software": None})
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.hist([r.driving_score for r in report.episodes], bins=np.linspace(0, 100, 21), color=STATE_COLOR)
    ax.set_xlabel("driving score")
    ax.set_ylabel("episodes")
    ax.set_title(f"mean DS {report.mean_ds:.1f}")
    fig.tight_layout()
    paths.append(out_dir / "driving_score.png")
    fig.savefig(paths[-1], dpi=120, metadata={"Software": None})
    plt.close(fig)
    return paths


# -- SVG ------------------------------------------------------------------------


def _points_attr(pts) -> str:
    return " ".join(f"{fmt(x)},{fmt(y)}" for x, y in np.asarray(pts).reshape(-1, 2))


def _svg(view, body: list[str], caption: str) -> str:
    x0, y0, x1, y1 = view
    w, h = x1 - x0, y1 - y0
    # flipped group: world y (left) points up on screen
    return "\n".join([
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{fmt(x0)} {fmt(-y1)} {fmt(w)} {fmt(h)}" '
        f'width="{int(round(60 * w))}" height="{int(round(60 * h))}">',
        f'<rect x="{fmt(x0)}" y="{fmt(-y1)}" width="{fmt(w)}" height="{fmt(h)}" fill="white"/>',
        '<g transform="scale(1,-1)">',
        *body,
        "</g>",
        f'<text x="{fmt(x0 + 0.02 * w)}" y="{fmt(-y1 + 0.06 * h)}" font-size="{fmt(0.04 * h)}" '
        f'font-family="sans-serif">{escape(caption)}</text>',
        "</svg>",
        "",
    ])


def _polyline(pts, cls: str, color: str, width: float, dash: str = "", opacity: float = 1.0) -> str:
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return (f'<polyline class="{cls}" points="{_points_attr(pts)}" fill="none" stroke="{color}" '
            f'stroke-width="{fmt(width)}" stroke-opacity="{fmt(opacity)}"{extra}/>')


def _traj_points(kind: str, vec) -> np.ndarray:
    pts = Trajectory.from_vector(kind, vec).points
    return np.vstack([[0.0, 0.0], pts])


def denoise_frames(trace: TraceRecord) -> list[str]:
    """One SVG per denoising state (``n_steps + 1`` frames), ego frame.

    Each frame shows the anchor ``x_T`` (dashed, ``class="anchor"``), earlier
    states faintly and the current state in bold.
    """
    paths = [_traj_points(trace.kind, s) for s in trace.states]
    anchor = None if trace.anchor is None else _traj_points(trace.kind, trace.anchor)
    allpts = np.vstack(paths + ([anchor] if anchor is not None else []))
    lo, hi = allpts.min(0) - 1.0, allpts.max(0) + 1.0
    span = max(hi[0] - lo[0], hi[1] - lo[1])
    mid = 0.5 * (lo + hi)
    view = (mid[0] - span / 2, mid[1] - span / 2, mid[0] + span / 2, mid[1] + span / 2)
    lw = 0.006 * span
    frames = []
    for i, (t, pts) in enumerate(zip(trace.times, paths)):
        body = [_polyline(p, "history", HISTORY_COLOR, lw, opacity=0.6) for p in paths[:i]]
        if anchor is not None:
            body.append(_polyline(anchor, "anchor", ANCHOR_COLOR, 1.5 * lw, dash=fmt(4 * lw)))
        body.append(_polyline(pts, "state", STATE_COLOR, 2 * lw))
        body.append(f'<circle cx="0" cy="0" r="{fmt(3 * lw)}" fill="black"/>')
        frames.append(_svg(view, body, f"{trace.variant} step {i}/{len(paths) - 1}  t={t:.4f}"))
    return frames


def episode_frames(scenario, rows: list[dict], every: int = 10, half_width: float = 30.0) -> list[str]:
    """Bird's-eye SVG frames of an episode trace, one every ``every`` ticks."""
    from .world.road import LANE_WIDTH
    from .world.sim import DISC_OFFSET, DISC_RADIUS

    road = scenario.road
    s = np.arange(0.0, road.length, 1.0)
    edges = []
    for span in scenario.lanes:
        ss = s[(s >= span.s_from) & (s <= span.s_to)]
        for side in (-0.5, 0.5):
            edges.append(road.to_world(ss, np.full(len(ss), (span.lane + side) * LANE_WIDTH)))
    frames = []
    for row in rows[::every]:
        ex, ey, eh = row["ego"][:3]
        view = (ex - half_width, ey - half_width, ex + half_width, ey + half_width)
        body = [_polyline(e, "lane-edge", "#888888", 0.12) for e in edges]
        if row.get("plan") is not None and len(row["plan"]):
            body.append(_polyline(row["plan"], "plan", ANCHOR_COLOR, 0.25))
        for ax, ay in row["agents"]:
            body.append(f'<circle class="agent" cx="{fmt(ax)}" cy="{fmt(ay)}" r="{fmt(DISC_RADIUS + DISC_OFFSET)}" fill="#bbbbbb"/>')
        u = np.array([np.cos(eh), np.sin(eh)])
        for c in (np.array([ex, ey]) + DISC_OFFSET * u, np.array([ex, ey]) - DISC_OFFSET * u):
            body.append(f'<circle class="ego" cx="{fmt(c[0])}" cy="{fmt(c[1])}" r="{fmt(DISC_RADIUS)}" fill="{STATE_COLOR}"/>')
        frames.append(_svg(view, body, f"{scenario.kind} seed {scenario.seed} tick {row['tick']}"))
    return frames


def write_frames(frames: list[str], out_dir, stem: str = "frame") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, text in enumerate(frames):
        p = out_dir / f"{stem}_{i:04d}.svg"
        p.write_text(text)
        paths.append(p)
    return paths
