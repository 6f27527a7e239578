"""World state and the 20 Hz physics step."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geom import to_ego_frame
from ..model import K_OBS, Context
from .road import LANE_WIDTH, wrap_angle
from .scenario import RoutePoint, Scenario

DT = 0.05
WHEELBASE = 2.5
MAX_STEER = 0.5
MAX_ACCEL = 4.0
MAX_SPEED = 15.0
DISC_OFFSET = 1.1  # two discs per vehicle, at +-1.1 m along the heading
DISC_RADIUS = 1.05
HALF_LENGTH = 2.3
OFFROAD_MARGIN = 0.65  # centre may come this close to the pavement edge
OBS_RANGE = 40.0
STOP_SPEED = 0.2
STOP_HOLD_TICKS = 20
YIELD_BEHIND, YIELD_AHEAD = 35.0, 12.0

PENDING, SERVED, MISSED = "pending", "served", "missed"


@dataclass
class EgoState:
    x: float
    y: float
    heading: float
    speed: float
    accel: float = 0.0
    steer: float = 0.0

    @property
    def pose(self):
        return (self.x, self.y, self.heading)


def vehicle_discs(x, y, heading) -> np.ndarray:
    u = np.array([np.cos(heading), np.sin(heading)])
    c = np.array([x, y])
    return np.stack([c + DISC_OFFSET * u, c - DISC_OFFSET * u])


def discs_collide(discs_a, discs_b) -> bool:
    """Disc-vs-disc overlap test; symmetric in its arguments."""
    d = np.linalg.norm(discs_a[:, None, :] - discs_b[None, :, :], axis=-1)
    return bool(np.any(d < 2 * DISC_RADIUS))


def drivable_interval(scenario: Scenario, s: float, d: float):
    """Contiguous pavement ``(lo, hi)`` around lateral offset ``d`` at station ``s``, or None."""
    open_lanes = sorted({span.lane for span in scenario.lanes if span.s_from <= s <= span.s_to})
    runs = []
    for lane in open_lanes:
        lo, hi = lane * LANE_WIDTH - LANE_WIDTH / 2, lane * LANE_WIDTH + LANE_WIDTH / 2
        if runs and abs(runs[-1][1] - lo) < 1e-9:
            runs[-1][1] = hi
        else:
            runs.append([lo, hi])
    for lo, hi in runs:
        if lo - LANE_WIDTH / 2 <= d <= hi + LANE_WIDTH / 2:
            return lo, hi
    return None


@dataclass
class World:
    """Mutable episode state. ``step`` advances it in place."""

    scenario: Scenario
    ego: EgoState
    agent_s: np.ndarray
    agent_v: np.ndarray
    agent_phase: np.ndarray
    agent_phase_t: np.ndarray
    tick: int = 0
    stop_status: dict = field(default_factory=dict)
    stop_timer: int = 0
    infractions: list = field(default_factory=list)
    done: bool = False
    reason: str = ""
    frenet: tuple = (0.0, 0.0, 0.0)
    max_s: float = 0.0
    plan_calls: int = 0
    _agent_d: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def reset(cls, scenario: Scenario) -> "World":
        road = scenario.road
        s0 = scenario.start_s
        (x, y), (_, _, h) = road.to_world(s0, scenario.start_d), road.pose_at(s0)
        ego = EgoState(float(x), float(y), float(h) + scenario.start_heading_error, scenario.start_speed)
        n = len(scenario.agents)
        w = cls(
            scenario,
            ego,
            np.array([a.s0 for a in scenario.agents], dtype=float),
            np.array([a.v0 for a in scenario.agents], dtype=float),
            np.zeros(n, dtype=int),
            np.zeros(n),
        )
        w.stop_status = {i: PENDING for i, p in enumerate(scenario.route) if p.stop}
        w.frenet = road.project((ego.x, ego.y))
        w.max_s = w.frenet[0]
        return w

    # -- agents ----------------------------------------------------------------

    @property
    def agent_d(self) -> np.ndarray:
        if self._agent_d is None:
            self._agent_d = np.array([a.d for a in self.scenario.agents], dtype=float)
        return self._agent_d

    def agent_poses(self):
        """World ``(xy, heading, velocity_xy)`` arrays for all agents."""
        if not len(self.agent_s):
            return np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2))
        road = self.scenario.road
        xy = road.to_world(self.agent_s, self.agent_d)
        _, _, h = road.pose_at(self.agent_s)
        vel = self.agent_v[:, None] * np.column_stack([np.cos(h), np.sin(h)])
        return xy, h, vel

    def _advance_agents(self):
        for i, spec in enumerate(self.scenario.agents):
            accel = 0.0
            while self.agent_phase[i] < len(spec.phases):
                duration, a = spec.phases[self.agent_phase[i]]
                if self.agent_phase_t[i] < duration:
                    accel = a
                    break
                self.agent_phase[i] += 1
                self.agent_phase_t[i] = 0.0
            self.agent_s[i] += self.agent_v[i] * DT
            self.agent_v[i] = min(max(self.agent_v[i] + accel * DT, 0.0), spec.v_cap)
            self.agent_phase_t[i] += DT

    # -- route -----------------------------------------------------------------

    def current_target(self) -> RoutePoint:
        s = self.frenet[0]
        for i, p in enumerate(self.scenario.route):
            if p.stop:
                if self.stop_status[i] == PENDING:
                    return p
                continue
            if p.s > s + 5.0:
                return p
        last = self.scenario.route[-1]
        return RoutePoint(s + 20.0, last.lane)

    def pending_stop(self):
        for i, p in enumerate(self.scenario.route):
            if p.stop and self.stop_status[i] == PENDING:
                return i, p
        return None

    def yield_clear(self, p: RoutePoint) -> bool:
        if p.yield_lane is None:
            return True
        in_lane = np.abs(self.agent_d - p.yield_lane * LANE_WIDTH) < LANE_WIDTH / 2
        near = (self.agent_s > p.s - YIELD_BEHIND) & (self.agent_s < p.s + YIELD_AHEAD)
        return not bool(np.any(in_lane & near))

    def _update_stops(self):
        found = self.pending_stop()
        if found is None:
            return
        i, p = found
        front = self.frenet[0] + HALF_LENGTH
        if front > p.s + 1.5:
            self.stop_status[i] = MISSED
            self.infractions.append((self.tick, "missed-target"))
            self.stop_timer = 0
            return
        if self.ego.speed < STOP_SPEED and front >= p.s - 5.0:
            self.stop_timer += 1
            if self.stop_timer >= STOP_HOLD_TICKS and self.yield_clear(p):
                self.stop_status[i] = SERVED
                self.stop_timer = 0
        else:
            self.stop_timer = 0

    # -- context ---------------------------------------------------------------

    def context(self) -> Context:
        ego = self.ego
        s, d, road_h = self.frenet
        target = self.current_target()
        t_world = self.scenario.road.to_world(target.s, target.lane * LANE_WIDTH)
        t_ego = to_ego_frame(t_world[None, :], ego.pose)[0]
        obstacles = []
        if len(self.agent_s):
            xy, _, vel = self.agent_poses()
            dist = np.linalg.norm(xy - np.array([ego.x, ego.y]), axis=1)
            ego_vel = ego.speed * np.array([np.cos(ego.heading), np.sin(ego.heading)])
            c, sn = np.cos(ego.heading), np.sin(ego.heading)
            for j in np.argsort(dist, kind="stable")[:K_OBS]:
                if dist[j] > OBS_RANGE:
                    break
                rel = to_ego_frame(xy[j][None, :], ego.pose)[0]
                dv = vel[j] - ego_vel
                obstacles.append((rel[0], rel[1], c * dv[0] + sn * dv[1], -sn * dv[0] + c * dv[1]))
        stop = 1.0 if target.stop else 0.0
        return Context(ego.speed, (float(t_ego[0]), float(t_ego[1])), d, float(wrap_angle(ego.heading - road_h)), stop, obstacles)

    # -- physics ---------------------------------------------------------------

    def offroad(self) -> bool:
        ego = self.ego
        front = (ego.x + DISC_OFFSET * np.cos(ego.heading), ego.y + DISC_OFFSET * np.sin(ego.heading))
        for s, d in ((self.frenet[0], self.frenet[1]), self.scenario.road.project(front, hint=self.frenet[0])[:2]):
            if s <= 0.0 or s >= self.scenario.road.length:
                return True
            iv = drivable_interval(self.scenario, s, d)
            if iv is None or not (iv[0] + OFFROAD_MARGIN <= d <= iv[1] - OFFROAD_MARGIN):
                return True
        return False

    def collision(self) -> bool:
        # station prefilter; the road is gentle enough that far stations cannot touch
        cand = np.flatnonzero(np.abs(self.agent_s - self.frenet[0]) < 10.0)
        if not len(cand):
            return False
        ego = self.ego
        mine = vehicle_discs(ego.x, ego.y, ego.heading)
        road = self.scenario.road
        xy = road.to_world(self.agent_s[cand], self.agent_d[cand])
        _, _, h = road.pose_at(self.agent_s[cand])
        return any(discs_collide(mine, vehicle_discs(xy[k, 0], xy[k, 1], h[k])) for k in range(len(cand)))

    def step(self, steer: float, accel: float) -> "World":
        """Advance one tick with explicit Euler on the kinematic bicycle."""
        if self.done:
            return self
        ego = self.ego
        steer = float(np.clip(steer, -MAX_STEER, MAX_STEER))
        accel = float(np.clip(accel, -MAX_ACCEL, MAX_ACCEL))
        v = ego.speed
        ego.x += v * np.cos(ego.heading) * DT
        ego.y += v * np.sin(ego.heading) * DT
        ego.heading += v / WHEELBASE * np.tan(steer) * DT
        new_v = min(max(v + accel * DT, 0.0), MAX_SPEED)
        ego.accel = (new_v - v) / DT
        ego.speed = new_v
        ego.steer = steer
        self._advance_agents()
        self.tick += 1
        self.frenet = self.scenario.road.project((ego.x, ego.y), hint=self.frenet[0])
        self.max_s = max(self.max_s, self.frenet[0])
        self._update_stops()
        if self.collision():
            self.infractions.append((self.tick, "collision"))
            self.done, self.reason = True, "collision"
        elif self.offroad():
            self.infractions.append((self.tick, "off-road"))
            self.done, self.reason = True, "off-road"
        elif self.frenet[0] >= self.scenario.goal_s:
            self.done, self.reason = True, "goal"
        elif self.tick >= self.scenario.max_ticks:
            self.done, self.reason = True, "timeout"
        return self


def step(world: World, controls) -> World:
    """Functional alias: advance ``world`` (in place) by one tick under ``(steer, accel)``."""
    return world.step(*controls)
