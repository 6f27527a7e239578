"""Seeded scenario construction for the four toy scenario kinds.

Every scenario shares the same layout: a two-lane (or one-lane) road whose
reference line is lane 0's centre, an ego starting at station 60 m and a goal
150 m further along. Lane 1 sits 3.5 m to the left.

``lane-fork``
    Both lanes exist up to the fork; past it only the route lane continues.
    Route target points switch to the route lane 30 m before the fork.
``parked-overtake``
    One to three parked cars block lane 0; lane 1 is free.
``emergency-brake``
    Single lane; the lead vehicle brakes hard at a seeded time, holds, and
    pulls away again.
``merge-lite``
    Lane 0 ends 25 m past a stop line. The ego must stop, wait for a gap in
    the lane-1 stream and merge behind it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .road import LANE_WIDTH, Road

KINDS = ("lane-fork", "parked-overtake", "emergency-brake", "merge-lite")
START_S = 60.0
ROUTE_LENGTH = 150.0
ROAD_TAIL = 40.0
SUITE_SCHEMA = 1


@dataclass(frozen=True)
class AgentSpec:
    """Scripted vehicle moving along the road at a fixed lateral offset.

    ``phases`` is a list of ``(duration_s, accel)``; after the last phase the
    agent keeps its speed. Speed is clamped to ``[0, v_cap]``.
    """

    s0: float
    d: float
    v0: float
    phases: tuple = ()
    v_cap: float = 20.0


@dataclass(frozen=True)
class RoutePoint:
    s: float
    lane: int
    stop: bool = False
    yield_lane: int | None = None  # lane whose traffic must be clear before release


@dataclass(frozen=True)
class LaneSpan:
    lane: int
    s_from: float
    s_to: float


@dataclass
class Scenario:
    kind: str
    seed: int
    origin: tuple
    heading: float
    pieces: list
    lanes: list
    route: list
    agents: list
    start_d: float
    start_heading_error: float
    start_speed: float
    start_s: float = START_S
    goal_s: float = START_S + ROUTE_LENGTH
    max_ticks: int = 1200
    _road: Road | None = field(default=None, repr=False, compare=False)

    @property
    def road(self) -> Road:
        if self._road is None:
            self._road = Road(self.origin, self.heading, self.pieces)
        return self._road

    def route_polyline(self, step: float = 1.0) -> np.ndarray:
        """Route centreline in the world frame, following each route point's lane."""
        s = np.arange(self.start_s, self.goal_s + 1e-9, step)
        lanes = [self.route_lane_at(x) for x in s]
        return self.road.to_world(s, np.array(lanes, dtype=float) * LANE_WIDTH)

    def route_lane_at(self, s: float) -> int:
        for p in self.route:
            if p.s >= s:
                return p.lane
        return self.route[-1].lane

    def lane_open(self, lane: int, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        out = np.zeros(s.shape, dtype=bool)
        for span in self.lanes:
            if span.lane == lane:
                out |= (s >= span.s_from) & (s <= span.s_to)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("_road")
        return d


def _route_grid(lane_of, extra=()):
    pts = {round(s, 6): RoutePoint(s, lane_of(s)) for s in np.arange(START_S + 20.0, START_S + ROUTE_LENGTH + 1e-9, 20.0)}
    for p in extra:
        for k in [k for k in pts if abs(k - p.s) < 8.0]:
            del pts[k]
        pts[round(p.s, 6)] = p
    return [pts[k] for k in sorted(pts)]


def _road_pieces(rng, max_curvature: float):
    total = START_S + ROUTE_LENGTH + ROAD_TAIL
    a = rng.uniform(20, 60)
    b = rng.uniform(40, 80)
    kappa = rng.choice([-1, 1]) * rng.uniform(0.0, max_curvature)
    return [(a, 0.0), (b, kappa), (total - a - b, 0.0)]


def make_scenario(kind: str, seed: int, max_curvature: float = 0.0) -> Scenario:
    """Build the deterministic scenario ``(kind, seed)``.

    Reference lines are straight by default; the planning context carries no
    road-shape field, so curvature would be unobservable to a learned planner.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown scenario kind {kind!r}")
    rng = np.random.default_rng([KINDS.index(kind), int(seed)])
    origin = tuple(rng.uniform(-50, 50, 2))
    heading = float(rng.uniform(-np.pi, np.pi))
    pieces = _road_pieces(rng, max_curvature)
    end = START_S + ROUTE_LENGTH + ROAD_TAIL
    start_speed = float(rng.uniform(5.0, 7.0))
    d_noise = float(rng.uniform(-0.3, 0.3))
    h_noise = float(rng.uniform(-0.03, 0.03))
    agents, extra = [], []

    if kind == "lane-fork":
        start_lane = int(rng.integers(0, 2))
        route_lane = int(rng.integers(0, 2))
        s_fork = START_S + float(rng.uniform(70, 100))
        s_switch = s_fork - 30.0
        lanes = [LaneSpan(route_lane, 0.0, end), LaneSpan(1 - route_lane, 0.0, s_fork)]
        extra = [RoutePoint(s_switch, route_lane)]
        lane_of = lambda s: route_lane if s >= s_switch else start_lane
        if rng.uniform() < 0.5:
            agents.append(AgentSpec(s_fork + rng.uniform(20, 40), route_lane * LANE_WIDTH, float(rng.uniform(5.0, 6.5))))
    elif kind == "parked-overtake":
        start_lane = 0
        lanes = [LaneSpan(0, 0.0, end), LaneSpan(1, 0.0, end)]
        lane_of = lambda s: 0
        s_p = START_S + float(rng.uniform(50, 80))
        for _ in range(int(rng.integers(1, 4))):
            agents.append(AgentSpec(s_p, float(rng.uniform(-0.3, 0.3)), 0.0))
            s_p += float(rng.uniform(10, 14))
    elif kind == "emergency-brake":
        start_lane = 0
        lanes = [LaneSpan(0, 0.0, end)]
        lane_of = lambda s: 0
        v_lead = 7.0
        decel = float(rng.uniform(3.5, 6.0))
        phases = (
            (float(rng.uniform(3.0, 8.0)), 0.0),
            (v_lead / decel + float(rng.uniform(1.5, 3.0)), -decel),
            (1e9, 1.5),
        )
        agents.append(AgentSpec(START_S + float(rng.uniform(20, 28)), 0.0, v_lead, phases, v_cap=v_lead))
        start_speed = float(rng.uniform(6.0, 7.0))
    else:  # merge-lite
        start_lane = 0
        s_stop = START_S + float(rng.uniform(40, 60))
        lanes = [LaneSpan(0, 0.0, s_stop + 25.0), LaneSpan(1, 0.0, end)]
        extra = [RoutePoint(s_stop, 0, stop=True, yield_lane=1), RoutePoint(s_stop + 12.0, 1)]
        lane_of = lambda s: 0 if s <= s_stop else 1
        t_pass = float(rng.uniform(5.0, 9.0))
        for _ in range(int(rng.integers(2, 4))):
            s0 = s_stop - 7.0 * t_pass
            if s0 >= 0.0:
                agents.append(AgentSpec(s0, LANE_WIDTH, 7.0))
            t_pass += float(rng.uniform(2.5, 4.0))

    return Scenario(
        kind=kind,
        seed=int(seed),
        origin=origin,
        heading=heading,
        pieces=pieces,
        lanes=lanes,
        route=_route_grid(lane_of, extra),
        agents=agents,
        start_d=start_lane * LANE_WIDTH + d_noise,
        start_heading_error=h_noise,
        start_speed=start_speed,
    )


# -- suite config ------------------------------------------------------------------


@dataclass(frozen=True)
class Suite:
    """Declarative scenario suite: every kind is run on every seed."""

    kinds: tuple = KINDS
    seeds: tuple = tuple(range(20))
    max_ticks: int = 1200

    def __post_init__(self):
        if not self.kinds or not self.seeds:
            raise ValueError("a suite needs at least one kind and one seed")
        for k in self.kinds:
            if k not in KINDS:
                raise ValueError(f"unknown scenario kind {k!r}")

    def scenarios(self) -> list[Scenario]:
        out = []
        for kind in self.kinds:
            for seed in self.seeds:
                sc = make_scenario(kind, seed)
                sc.max_ticks = self.max_ticks
                out.append(sc)
        return out

    def to_json(self) -> str:
        return json.dumps(
            {"schema": SUITE_SCHEMA, "kinds": list(self.kinds), "seeds": list(self.seeds), "max_ticks": self.max_ticks},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "Suite":
        raw = json.loads(text)
        if raw.get("schema") != SUITE_SCHEMA:
            raise ValueError(f"unsupported suite schema {raw.get('schema')!r}")
        seeds = raw["seeds"]
        if isinstance(seeds, dict):  # {"start": a, "stop": b}
            seeds = list(range(seeds["start"], seeds["stop"]))
        return cls(tuple(raw["kinds"]), tuple(int(s) for s in seeds), int(raw.get("max_ticks", 1200)))
