"""Closed-loop episodes, per-episode metrics and the aggregate report.

A planner is any callable ``planner(worlds, contexts) -> list[Trajectory]``
taking the worlds that need a new plan and their stacked encoded contexts.
Episodes are stepped in lockstep so that learned planners can batch their
network calls across episodes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..model import as_context_matrix
from .control import ActivePlan, track
from .expert import CRUISE
from .scenario import Scenario
from .sim import DT, World

log = logging.getLogger(__name__)

REPLAN_EVERY = 10  # 2 Hz planning over 20 Hz physics
PENALTY = {"collision": 0.5, "off-road": 0.6, "missed-target": 0.7}
JERK_LIMIT, ACCEL_LIMIT = 6.0, 3.0


@dataclass
class EpisodeResult:
    kind: str
    seed: int
    success: bool
    completion: float
    infractions: tuple
    driving_score: float
    efficiency: float
    comfort: float
    ticks: int
    reason: str
    diagnostic: str = ""


@dataclass
class EpisodeTrace:
    """Per-tick ego and agent states, for CSV dumps and rendering."""

    ticks: list = field(default_factory=list)
    ego: list = field(default_factory=list)  # (x, y, heading, speed, accel, steer)
    agents: list = field(default_factory=list)  # (n_agent, 2) world positions
    plans: list = field(default_factory=list)  # (tick, world-frame plan points)


def episode_metrics(world: World, speeds, accels, diagnostic: str = "") -> EpisodeResult:
    sc = world.scenario
    completion = float(np.clip((world.max_s - sc.start_s) / (sc.goal_s - sc.start_s), 0.0, 1.0))
    kinds = [k for _, k in world.infractions]
    score = 100.0 * completion
    for k in kinds:
        score *= PENALTY[k]
    reached = world.reason == "goal"
    if reached:
        completion = 1.0
        score = 100.0 * np.prod([PENALTY[k] for k in kinds]) if kinds else 100.0
    speeds = np.asarray(speeds, dtype=np.float64)
    accels = np.asarray(accels, dtype=np.float64)
    efficiency = float(min(100.0, 100.0 * speeds.mean() / CRUISE)) if len(speeds) else 0.0
    if len(accels):
        jerk = np.diff(np.concatenate([[0.0], accels])) / DT
        comfort = 100.0 * float(np.mean((np.abs(jerk) < JERK_LIMIT) & (np.abs(accels) < ACCEL_LIMIT)))
    else:
        comfort = 0.0
    return EpisodeResult(
        sc.kind,
        sc.seed,
        bool(reached and not kinds),
        completion,
        tuple(f"{t}:{k}" for t, k in world.infractions),
        float(score),
        efficiency,
        comfort,
        world.tick,
        world.reason,
        diagnostic,
    )


def rollout_many(scenarios: list[Scenario], planner, traces: bool = False, replan_every: int = REPLAN_EVERY):
    """Run every scenario to termination in lockstep; returns results (and traces)."""
    worlds = [World.reset(sc) for sc in scenarios]
    plans: list[ActivePlan | None] = [None] * len(worlds)
    speeds = [[] for _ in worlds]
    accels = [[] for _ in worlds]
    diagnostics = [""] * len(worlds)
    tr = [EpisodeTrace() for _ in worlds] if traces else None
    while True:
        active = [i for i, w in enumerate(worlds) if not w.done]
        if not active:
            break
        need = [i for i in active if worlds[i].tick % replan_every == 0]
        if need:
            batch = [worlds[i] for i in need]
            try:
                Z = as_context_matrix([w.context() for w in batch])
                new = planner(batch, Z)
                if len(new) != len(batch):
                    raise RuntimeError(f"planner returned {len(new)} plans for {len(batch)} worlds")
            except Exception as exc:  # recorded per episode, never propagated
                log.warning("planner failed: %s", exc)
                for i in need:
                    worlds[i].done, worlds[i].reason = True, "planner-error"
                    diagnostics[i] = f"{type(exc).__name__}: {exc}"
                new = []
            for i, p in zip(need, new):
                w = worlds[i]
                w.plan_calls += 1
                if not np.all(np.isfinite(p.to_vector())):
                    w.done, w.reason = True, "planner-error"
                    diagnostics[i] = "non-finite plan"
                    continue
                plans[i] = ActivePlan.make(p, w.ego, w.tick)
                if tr is not None:
                    tr[i].plans.append((w.tick, plans[i].world_points.copy()))
        for i in active:
            w = worlds[i]
            if w.done:
                continue
            steer, accel = track(plans[i].current(w.ego, w.tick, DT), w.ego)
            w.step(steer, accel)
            speeds[i].append(w.ego.speed)
            accels[i].append(w.ego.accel)
            if tr is not None:
                e = w.ego
                tr[i].ticks.append(w.tick)
                tr[i].ego.append((e.x, e.y, e.heading, e.speed, e.accel, e.steer))
                tr[i].agents.append(w.agent_poses()[0].copy())
    results = [episode_metrics(w, speeds[i], accels[i], diagnostics[i]) for i, w in enumerate(worlds)]
    return (results, tr) if traces else results


def rollout(scenario: Scenario, planner, max_ticks: int | None = None, trace: bool = False):
    """Single closed-loop episode."""
    if max_ticks is not None:
        scenario.max_ticks = int(max_ticks)
    out = rollout_many([scenario], planner, traces=trace)
    if trace:
        return out[0][0], out[1][0]
    return out[0]


# -- aggregate report ----------------------------------------------------------

REPORT_COLUMNS = ("kind", "seed", "success", "completion", "driving_score", "efficiency", "comfort", "ticks", "reason", "infractions")


@dataclass
class Report:
    episodes: list
    mean_ds: float
    sr: float
    efficiency: float
    comfort: float
    per_kind: dict  # kind -> (n, SR, DS)


def aggregate(results: list[EpisodeResult]) -> Report:
    if not results:
        raise ValueError("cannot aggregate an empty suite")
    eps = sorted(results, key=lambda r: (r.kind, r.seed))
    per_kind = {}
    for kind in sorted({r.kind for r in eps}):
        rows = [r for r in eps if r.kind == kind]
        per_kind[kind] = (
            len(rows),
            100.0 * float(np.mean([r.success for r in rows])),
            float(np.mean([r.driving_score for r in rows])),
        )
    return Report(
        eps,
        float(np.mean([r.driving_score for r in eps])),
        100.0 * float(np.mean([r.success for r in eps])),
        float(np.mean([r.efficiency for r in eps])),
        float(np.mean([r.comfort for r in eps])),
        per_kind,
    )


def evaluate(suite, planner, seeds=None) -> Report:
    """Run a suite (list of scenarios, or an object with ``scenarios()``) and aggregate."""
    scenarios = suite.scenarios() if hasattr(suite, "scenarios") else list(suite)
    if seeds is not None:
        keep = set(int(s) for s in seeds)
        scenarios = [sc for sc in scenarios if sc.seed in keep]
    if not scenarios:
        raise ValueError("empty suite")
    return aggregate(rollout_many(scenarios, planner))
