"""Privileged rule-based expert used for data collection and as an upper bound.

Lateral: a cubic Hermite offset profile from the ego's current lateral offset
and heading to the desired lane centre. The desired lane is the route
target's lane unless a stopped vehicle blocks it and the neighbouring lane is
open and clear.

Longitudinal: the intelligent driver model toward the cruise speed, with the
nearest vehicle on the planned path (or a pending stop line) as the leader.
The reported target speed is where that acceleration leads in half a second.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geom import GEOMETRIC, TEMPORAL, DEFAULT_N_POINT, Trajectory, resample_polyline, temporal_from_plan, to_ego_frame
from ..model import Context
from .road import LANE_WIDTH
from .sim import HALF_LENGTH, MAX_ACCEL, World

CRUISE = 8.0
IDM_ACCEL = 1.5
IDM_DECEL = 2.0
IDM_HEADWAY = 1.2
IDM_GAP = 2.0
SPEED_HORIZON = 0.5
PATH_LENGTH = 30.0
PATH_STEP = 0.5
BLOCK_BEHIND, BLOCK_AHEAD = 10.0, 30.0
LATERAL_CLEARANCE = 2.2


@dataclass
class ExpertPlan:
    path: np.ndarray  # dense ego-frame polyline starting at the origin
    target_speed: float
    lane: int


def hermite_offset(sigma, d0, slope0, d1, length):
    """Lateral offset along the path: cubic from (d0, slope0) to (d1, 0) over ``length``."""
    u = np.clip(np.asarray(sigma, dtype=np.float64) / length, 0.0, 1.0)
    h00 = 2 * u**3 - 3 * u**2 + 1
    h10 = u**3 - 2 * u**2 + u
    h01 = -2 * u**3 + 3 * u**2
    return h00 * d0 + h10 * length * slope0 + h01 * d1


def idm_accel(v, gap=np.inf, lead_v=0.0, v0=CRUISE):
    free = 1.0 - (v / v0) ** 4
    if not np.isfinite(gap):
        return IDM_ACCEL * free
    if gap <= 0.1:
        return -MAX_ACCEL
    s_star = IDM_GAP + max(0.0, v * IDM_HEADWAY + v * (v - lead_v) / (2 * np.sqrt(IDM_ACCEL * IDM_DECEL)))
    return float(np.clip(IDM_ACCEL * (free - (s_star / gap) ** 2), -MAX_ACCEL, IDM_ACCEL))


def _blocked(world: World, lane: int, s: float) -> bool:
    d = world.agent_d
    rel = world.agent_s - s
    hit = (np.abs(d - lane * LANE_WIDTH) < 1.6) & (world.agent_v < 1.0) & (rel > -BLOCK_BEHIND) & (rel < BLOCK_AHEAD)
    return bool(np.any(hit))


def _lane_usable(world: World, lane: int, s: float) -> bool:
    stations = np.linspace(s, s + 40.0, 9)
    if not np.all(world.scenario.lane_open(lane, stations)):
        return False
    d = world.agent_d
    rel = world.agent_s - s
    moving = (np.abs(d - lane * LANE_WIDTH) < 1.6) & (rel > -15.0) & (rel < 20.0)
    return not _blocked(world, lane, s) and not bool(np.any(moving))


def desired_lane(world: World) -> int:
    s = world.frenet[0]
    lane = world.current_target().lane
    if _blocked(world, lane, s):
        for other in (lane + 1, lane - 1):
            if other >= 0 and _lane_usable(world, other, s):
                return other
    return lane


def _change_length(speed: float, delta_d: float) -> float:
    base = float(np.clip(1.6 * speed + 6.0, 10.0, 20.0))
    return max(6.0, base * float(np.clip(0.4 + 0.6 * abs(delta_d) / LANE_WIDTH, 0.4, 1.0)))


def expert_plan(world: World) -> ExpertPlan:
    ego = world.ego
    s, d, road_h = world.frenet
    lane = desired_lane(world)
    d1 = lane * LANE_WIDTH
    slope0 = float(np.tan(np.clip(ego.heading - road_h, -1.0, 1.0)))
    length = _change_length(ego.speed, d1 - d)
    sigma = np.arange(0.0, PATH_LENGTH + 1e-9, PATH_STEP)
    offs = hermite_offset(sigma, d, slope0, d1, length)
    road = world.scenario.road
    path = to_ego_frame(road.to_world(s + sigma, offs), ego.pose)
    path[0] = 0.0

    # leader: nearest vehicle whose station lies ahead and overlaps the path laterally
    gap, lead_v = np.inf, 0.0
    ahead = world.agent_s - s
    for j in np.flatnonzero(ahead > 0.0):
        path_d = np.interp(ahead[j], sigma, offs, right=offs[-1])
        if abs(world.agent_d[j] - path_d) < LATERAL_CLEARANCE:
            g = ahead[j] - 2 * HALF_LENGTH
            if g < gap:
                gap, lead_v = g, float(world.agent_v[j])
    found = world.pending_stop()
    if found is not None:
        _, p = found
        g = p.s + 1.0 - (s + HALF_LENGTH)  # IDM standstill gap parks the bumper 1 m short
        if g < gap:
            gap, lead_v = g, 0.0
    a = idm_accel(ego.speed, gap, lead_v)
    target_speed = float(np.clip(ego.speed + a * SPEED_HORIZON, 0.0, CRUISE))
    return ExpertPlan(path, target_speed, lane)


def plan_to_trajectory(ep: ExpertPlan, kind: str, n_point: int | None = None) -> Trajectory:
    n_point = n_point or DEFAULT_N_POINT[kind]
    if kind == GEOMETRIC:
        pts = resample_polyline(ep.path, np.arange(1, n_point + 1, dtype=float))
        return Trajectory(GEOMETRIC, pts, ep.target_speed)
    if kind == TEMPORAL:
        dense = Trajectory(GEOMETRIC, resample_polyline(ep.path, np.arange(1, int(PATH_LENGTH) + 1, dtype=float)), ep.target_speed)
        return temporal_from_plan(dense, n_point)
    raise ValueError(f"unknown trajectory kind {kind!r}")


def expert_policy(world: World, kind: str = GEOMETRIC, n_point: int | None = None) -> tuple[Trajectory, Context]:
    """Ground-truth trajectory of the requested representation and the matching Context."""
    return plan_to_trajectory(expert_plan(world), kind, n_point), world.context()
