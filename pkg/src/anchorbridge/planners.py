"""Planner callables for closed-loop rollouts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import GEOMETRIC, Trajectory
from .model import ClassifierParams, DenoiserParams
from .sampling import SamplerConfig, full_diffusion_batch, plan_batch, truncated_batch
from .schedule import ScheduleConfig
from .world.expert import expert_policy
from .world.scenario import KINDS


@dataclass
class ExpertPlanner:
    kind: str = GEOMETRIC

    def __call__(self, worlds, Z):
        return [expert_policy(w, self.kind)[0] for w in worlds]


@dataclass
class BrakePlanner:
    """Always asks for a standstill."""

    kind: str = GEOMETRIC

    def __call__(self, worlds, Z):
        pts = np.zeros((10, 2)) if self.kind == GEOMETRIC else np.zeros((8, 2))
        pts[:, 0] = np.arange(1, len(pts) + 1) if self.kind == GEOMETRIC else 0.0
        return [Trajectory(self.kind, pts, 0.0 if self.kind == GEOMETRIC else None) for _ in worlds]


@dataclass
class LearnedPlanner:
    """Batched network planner for one of the three variants.

    Noise for the stochastic baselines is drawn per episode from
    ``(seed, scenario kind, scenario seed, plan call)`` so results do not
    depend on which other episodes share a batch.
    """

    variant: str
    theta: DenoiserParams
    phi: ClassifierParams | None
    anchors: object
    sampler: SamplerConfig
    sched: ScheduleConfig = ScheduleConfig()
    seed: int = 0
    anchor_log: list = field(default_factory=list)

    def _noise(self, worlds):
        rows = []
        for w in worlds:
            key = [self.seed, KINDS.index(w.scenario.kind), w.scenario.seed, w.plan_calls]
            rows.append(np.random.default_rng(key).standard_normal(self.theta.width))
        return np.array(rows)

    def __call__(self, worlds, Z):
        if self.variant == "bridge":
            trajs, idx = plan_batch(self.theta, self.phi, Z, self.anchors, self.sampler, self.sched)
        elif self.variant == "full":
            trajs, idx = full_diffusion_batch(self.theta, Z, self.sampler, self._noise(worlds), self.sched), None
        elif self.variant == "truncated":
            trajs, idx = truncated_batch(self.theta, self.phi, Z, self.anchors, self.sampler, self._noise(worlds), self.sched)
        else:
            raise ValueError(f"unknown variant {self.variant!r}")
        if idx is not None:
            self.anchor_log.extend(int(i) for i in idx)
        return trajs
