"""Low-level tracking: pure pursuit for steering, proportional speed control."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geom import GEOMETRIC, SPACING, TEMPORAL, Trajectory, from_ego_frame, to_ego_frame
from .sim import MAX_ACCEL, MAX_STEER, WHEELBASE, EgoState

SPEED_GAIN = 2.0
LOOKAHEAD_BASE, LOOKAHEAD_GAIN = 3.0, 0.5
DEGENERATE_TOL = 1e-3


def plan_target_speed(plan: Trajectory) -> float:
    if plan.kind == GEOMETRIC:
        return max(plan.speed, 0.0)
    return float(np.linalg.norm(plan.points[0])) / SPACING[TEMPORAL]


def _lookahead_point(polyline: np.ndarray, radius: float):
    """First crossing of the circle ``|p| = radius`` walking along the polyline from the origin.

    When the polyline ends inside the circle it is extended along its last
    non-degenerate segment. Returns None if the polyline has no extent.
    """
    for a, b in zip(polyline[:-1], polyline[1:]):
        if np.dot(b, b) >= radius * radius:
            d = b - a
            qa, qb, qc = d @ d, 2 * (a @ d), a @ a - radius * radius
            if qa < 1e-12:
                return b
            u = (-qb + np.sqrt(max(qb * qb - 4 * qa * qc, 0.0))) / (2 * qa)
            return a + np.clip(u, 0.0, 1.0) * d
    seg = np.diff(polyline, axis=0)
    lengths = np.linalg.norm(seg, axis=1)
    ok = np.flatnonzero(lengths > 1e-6)
    if not len(ok):
        return None
    direction = seg[ok[-1]] / lengths[ok[-1]]
    end = polyline[-1]
    qb, qc = 2 * (end @ direction), end @ end - radius * radius
    u = (-qb + np.sqrt(max(qb * qb - 4 * qc, 0.0))) / 2
    return end + u * direction


def track(plan: Trajectory, ego: EgoState) -> tuple[float, float]:
    """Steering and acceleration that follow ``plan`` (ego frame) from the current state."""
    pts = plan.points
    if np.all(np.linalg.norm(pts, axis=1) < DEGENERATE_TOL):
        return 0.0, -MAX_ACCEL
    v_target = plan_target_speed(plan)
    accel = float(np.clip(SPEED_GAIN * (v_target - ego.speed), -MAX_ACCEL, MAX_ACCEL))
    radius = LOOKAHEAD_BASE + LOOKAHEAD_GAIN * ego.speed
    target = _lookahead_point(np.vstack([[0.0, 0.0], pts]), radius)
    if target is None:
        return 0.0, accel
    curvature = 2.0 * target[1] / (target @ target)
    steer = float(np.clip(np.arctan(WHEELBASE * curvature), -MAX_STEER, MAX_STEER))
    return steer, accel


@dataclass
class ActivePlan:
    """A plan frozen in the world frame at the tick it was made."""

    kind: str
    world_points: np.ndarray
    speed: float | None
    pose: tuple
    tick: int

    @classmethod
    def make(cls, plan: Trajectory, ego: EgoState, tick: int) -> "ActivePlan":
        return cls(plan.kind, from_ego_frame(plan.points, ego.pose), plan.speed, ego.pose, tick)

    def current(self, ego: EgoState, tick: int, dt: float) -> Trajectory:
        """The plan re-expressed in the current ego frame; temporal plans are shifted by their age."""
        if self.kind == GEOMETRIC:
            pts = to_ego_frame(self.world_points, ego.pose)
            ahead = np.flatnonzero(pts[:, 0] > 0.5)
            pts = pts[ahead[0]:] if len(ahead) else pts[-1:]
            return Trajectory(GEOMETRIC, pts, self.speed)
        age = (tick - self.tick) * dt
        step = SPACING[TEMPORAL]
        n = len(self.world_points)
        times = np.arange(0, n + 1) * step
        timeline = np.vstack([[self.pose[0], self.pose[1]], self.world_points])
        query = np.minimum(age + step * np.arange(1, n + 1), times[-1])
        shifted = np.column_stack([np.interp(query, times, timeline[:, 0]), np.interp(query, times, timeline[:, 1])])
        if np.all(np.linalg.norm(self.world_points - timeline[0], axis=1) < DEGENERATE_TOL):
            return Trajectory(TEMPORAL, np.zeros((n, 2)))  # a standstill plan stays a standstill plan
        return Trajectory(TEMPORAL, to_ego_frame(shifted, ego.pose))
