"""Trajectory representations, ego-frame transforms and the K-means anchor vocabulary."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

GEOMETRIC = "geometric"
TEMPORAL = "temporal"
KINDS = (GEOMETRIC, TEMPORAL)

SPACING = {GEOMETRIC: 1.0, TEMPORAL: 0.25}
DEFAULT_N_POINT = {GEOMETRIC: 10, TEMPORAL: 8}


@dataclass
class Trajectory:
    """Future ego waypoints in the ego frame.

    Geometric trajectories are spaced 1 m apart along the path and carry a
    target speed; temporal ones are spaced 0.25 s apart and encode speed in
    their spacing.
    """

    kind: str
    points: np.ndarray
    speed: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if self.kind == GEOMETRIC:
            if self.speed is None:
                raise ValueError("geometric trajectory needs a speed")
            self.speed = float(self.speed)
        elif self.speed is not None:
            raise ValueError("temporal trajectories carry no speed")

    @property
    def spacing(self) -> float:
        return SPACING[self.kind]

    @property
    def n_point(self) -> int:
        return len(self.points)

    def flat_points(self) -> np.ndarray:
        return self.points.ravel()

    def to_vector(self) -> np.ndarray:
        """Flattened waypoints followed by the speed channel (geometric only)."""
        if self.kind == GEOMETRIC:
            return np.concatenate([self.points.ravel(), [self.speed]])
        return self.points.ravel().copy()

    @classmethod
    def from_vector(cls, kind: str, vec) -> "Trajectory":
        vec = np.asarray(vec, dtype=np.float64)
        if kind == GEOMETRIC:
            return cls(kind, vec[:-1].reshape(-1, 2), float(vec[-1]))
        return cls(kind, vec.reshape(-1, 2))


def vector_width(kind: str, n_point: int) -> int:
    return 2 * n_point + (1 if kind == GEOMETRIC else 0)


@dataclass(frozen=True)
class Anchor:
    index: int
    points: np.ndarray
    speed: float

    def as_trajectory(self, kind: str) -> Trajectory:
        return Trajectory(kind, self.points, self.speed if kind == GEOMETRIC else None)


@dataclass
class AnchorSet:
    anchors: list[Anchor]
    kind: str
    rng_seed: int = 0
    inertia: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        if len(self.anchors) < 2:
            raise ValueError("an anchor set needs at least two anchors")
        if [a.index for a in self.anchors] != list(range(len(self.anchors))):
            raise ValueError("anchor indices must be contiguous from 0")

    def __len__(self):
        return len(self.anchors)

    def __getitem__(self, i) -> Anchor:
        return self.anchors[i]

    @property
    def n_point(self) -> int:
        return len(self.anchors[0].points)

    def point_matrix(self) -> np.ndarray:
        """(N_anchor, 2*N_point) flattened anchor waypoints."""
        return np.stack([a.points.ravel() for a in self.anchors])

    def vector(self, i: int) -> np.ndarray:
        return self.anchors[i].as_trajectory(self.kind).to_vector()

    def vector_matrix(self) -> np.ndarray:
        return np.stack([self.vector(i) for i in range(len(self))])


def _rotation(heading: float) -> np.ndarray:
    c, s = np.cos(heading), np.sin(heading)
    return np.array([[c, -s], [s, c]])


def to_ego_frame(points, ego_pose) -> np.ndarray:
    """World-frame points -> ego frame (x forward, y left) of ``ego_pose = (x, y, heading)``."""
    x, y, heading = ego_pose
    pts = np.asarray(points, dtype=np.float64)
    return (pts - np.array([x, y])) @ _rotation(heading)


def from_ego_frame(points, ego_pose) -> np.ndarray:
    x, y, heading = ego_pose
    pts = np.asarray(points, dtype=np.float64)
    return pts @ _rotation(heading).T + np.array([x, y])


def _sq_dists(data: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((data[:, None, :] - centers[None, :, :]) ** 2).sum(-1)


def _kmeanspp(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(data)
    centers = [data[rng.integers(n)]]
    closest = ((data - centers[0]) ** 2).sum(1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every remaining point coincides with a chosen center
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers.append(data[idx])
        closest = np.minimum(closest, ((data - data[idx]) ** 2).sum(1))
    return np.array(centers)


def lloyd(data: np.ndarray, k: int, seed: int, max_iter: int = 200, debug: bool = False):
    """Lloyd's algorithm with k-means++ seeding.

    Returns ``(centers, labels, inertia, history)`` where ``history`` holds the
    inertia after every assignment step. Empty clusters are re-seeded from the
    point farthest from its current center.
    """
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(data, k, rng)
    labels = None
    history = []
    for _ in range(max_iter):
        d2 = _sq_dists(data, centers)
        new_labels = d2.argmin(1)
        history.append(float(d2[np.arange(len(data)), new_labels].sum()))
        if debug and len(history) > 1:
            assert history[-1] <= history[-2] + 1e-9 * max(1.0, history[-2]), "inertia increased"
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = data[members].mean(0)
            else:
                own = d2[np.arange(len(data)), labels]
                far = int(own.argmax())
                log.debug("cluster %d empty; reseeding from point %d", j, far)
                centers[j] = data[far]
                labels[far] = j
                d2[far] = 0.0
    d2 = _sq_dists(data, centers)
    labels = d2.argmin(1)
    inertia = float(d2[np.arange(len(data)), labels].sum())
    return centers, labels, inertia, history


def fit_anchors(dataset: list[Trajectory], n_anchor: int, seed: int) -> AnchorSet:
    """Cluster trajectories into ``n_anchor`` anchors.

    Distances use waypoints only; each anchor's speed is the mean speed of
    its members (zero for temporal anchors, which carry no speed).
    """
    if len(dataset) < n_anchor:
        raise ValueError(f"need at least {n_anchor} trajectories, got {len(dataset)}")
    kinds = {tr.kind for tr in dataset}
    if len(kinds) != 1:
        raise ValueError("dataset mixes trajectory kinds")
    kind = kinds.pop()
    data = np.stack([tr.flat_points() for tr in dataset])
    speeds = np.array([tr.speed if tr.speed is not None else 0.0 for tr in dataset])
    # canonical order makes the fit independent of how the dataset was listed
    order = np.lexsort(np.column_stack([data, speeds]).T[::-1])
    data, speeds = data[order], speeds[order]
    centers, labels, inertia, _ = lloyd(data, n_anchor, seed)
    # stable anchor ids: sort centers lexicographically
    center_order = np.lexsort(centers.T[::-1])
    anchors = []
    for new_idx, j in enumerate(center_order):
        members = labels == j
        speed = float(speeds[members].mean()) if members.any() else 0.0
        anchors.append(Anchor(new_idx, centers[j].reshape(-1, 2).copy(), speed))
    return AnchorSet(anchors, kind, seed, inertia)


def inertia_of(data: np.ndarray, labels: np.ndarray) -> float:
    total = 0.0
    for j in np.unique(labels):
        members = data[labels == j]
        total += float(((members - members.mean(0)) ** 2).sum())
    return total


def nearest_anchor(traj: Trajectory, anchors: AnchorSet) -> int:
    """Index of the anchor closest in flattened-waypoint L2; ties go to the lowest index."""
    if traj.points.shape != anchors[0].points.shape:
        raise ValueError(f"trajectory shape {traj.points.shape} != anchor shape {anchors[0].points.shape}")
    d2 = ((anchors.point_matrix() - traj.flat_points()) ** 2).sum(1)
    return int(np.argmin(d2))


def nearest_anchor_batch(flat_points: np.ndarray, anchors: AnchorSet) -> np.ndarray:
    d2 = _sq_dists(np.asarray(flat_points, dtype=np.float64), anchors.point_matrix())
    return d2.argmin(1)


def resample_polyline(polyline, arc_positions) -> np.ndarray:
    """Points at the given arc lengths along ``polyline``, clamped to its ends."""
    poly = np.asarray(polyline, dtype=np.float64)
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.clip(np.asarray(arc_positions, dtype=np.float64), 0.0, cum[-1])
    if cum[-1] <= 0:
        return np.repeat(poly[:1], len(s), axis=0)
    return np.column_stack([np.interp(s, cum, poly[:, 0]), np.interp(s, cum, poly[:, 1])])


def temporal_from_plan(traj: Trajectory, n_point: int = DEFAULT_N_POINT[TEMPORAL]) -> Trajectory:
    """Convert a geometric plan into time-spaced waypoints at its constant speed."""
    if traj.kind != GEOMETRIC:
        raise ValueError("temporal_from_plan needs a geometric trajectory")
    polyline = np.vstack([[0.0, 0.0], traj.points])
    dt = SPACING[TEMPORAL]
    arc = max(traj.speed, 0.0) * dt * np.arange(1, n_point + 1)
    return Trajectory(TEMPORAL, resample_polyline(polyline, arc))
