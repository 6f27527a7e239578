"""Expert data collection with noise injection, followed by redundancy filtering.

The executed controls are the expert's tracked plan plus Ornstein-Uhlenbeck
noise on steering and acceleration, so the recorded states drift off the
expert's own distribution; every recorded frame is labelled by re-querying
the expert at the state actually visited.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geom import GEOMETRIC, DEFAULT_N_POINT, vector_width
from .model import CONTEXT_WIDTH
from .training import Frame, filter_dataset
from .world.control import ActivePlan, track
from .world.expert import expert_plan, plan_to_trajectory
from .world.rollout import REPLAN_EVERY
from .world.scenario import KINDS, make_scenario
from .world.sim import DT, MAX_STEER, World

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseConfig:
    steer_sigma: float = 0.04  # stationary std of the steering noise [rad]
    accel_sigma: float = 0.8  # [m/s^2]
    tau: float = 1.0  # correlation time [s]
    record_every: int = 2  # label every other physics tick


@dataclass
class Dataset:
    """Columnar expert dataset for one representation kind."""

    kind: str
    n_point: int
    x0: np.ndarray  # (n, width) raw trajectory vectors
    z: np.ndarray  # (n, CONTEXT_WIDTH)
    scenario_kind: np.ndarray  # (n,) index into world.scenario.KINDS
    episode: np.ndarray  # (n,) scenario seed

    def __post_init__(self):
        if self.x0.shape[1] != vector_width(self.kind, self.n_point):
            raise ValueError("trajectory width does not match kind and N_point")
        if self.z.shape[1] != CONTEXT_WIDTH:
            raise ValueError("context width mismatch")

    def __len__(self):
        return len(self.x0)

    def subset(self, mask) -> "Dataset":
        return Dataset(self.kind, self.n_point, self.x0[mask], self.z[mask], self.scenario_kind[mask], self.episode[mask])

    def counts(self) -> dict:
        return {k: int((self.scenario_kind == i).sum()) for i, k in enumerate(KINDS)}


def collect_episode(scenario, kind: str, seed: int, noise: NoiseConfig = NoiseConfig(), n_point=None) -> list[Frame]:
    """One noisy expert episode; frames carry ``(x0 vector, z vector)`` payloads."""
    n_point = n_point or DEFAULT_N_POINT[kind]
    rng = np.random.default_rng(seed)
    world = World.reset(scenario)
    decay = np.exp(-DT / noise.tau)
    kick = np.sqrt(1 - decay**2)
    n_steer = n_accel = 0.0
    active = None
    frames = []
    while not world.done:
        label = None
        if world.tick % REPLAN_EVERY == 0 or world.tick % noise.record_every == 0:
            ep = expert_plan(world)
            label = plan_to_trajectory(ep, kind, n_point)
            if world.tick % REPLAN_EVERY == 0:
                active = ActivePlan.make(label, world.ego, world.tick)
            if world.tick % noise.record_every == 0:
                geo = label if kind == GEOMETRIC else plan_to_trajectory(ep, GEOMETRIC)
                frames.append(Frame(ep.target_speed, geo.points, (label.to_vector(), world.context().encode())))
        steer, accel = track(active.current(world.ego, world.tick, DT), world.ego)
        n_steer = decay * n_steer + kick * noise.steer_sigma * rng.standard_normal()
        n_accel = decay * n_accel + kick * noise.accel_sigma * rng.standard_normal()
        world.step(float(np.clip(steer + n_steer, -MAX_STEER, MAX_STEER)), accel + n_accel)
    return frames


def generate(kind: str, seeds, scenario_kinds=KINDS, noise: NoiseConfig = NoiseConfig(), filter_seed: int = 0,
             n_point=None, progress=None) -> Dataset:
    """Noisy expert rollouts on every ``(scenario kind, seed)`` pair, filtered per episode."""
    n_point = n_point or DEFAULT_N_POINT[kind]
    xs, zs, sk, eps = [], [], [], []
    for k_idx, sc_kind in enumerate(KINDS):
        if sc_kind not in scenario_kinds:
            continue
        for seed in seeds:
            sc = make_scenario(sc_kind, int(seed))
            frames = collect_episode(sc, kind, seed=int(np.random.SeedSequence([filter_seed, k_idx, int(seed)]).generate_state(1)[0]),
                                     noise=noise, n_point=n_point)
            kept = filter_dataset(frames, seed=filter_seed * 1_000_003 + k_idx * 10_007 + int(seed))
            for f in kept:
                xs.append(f.payload[0])
                zs.append(f.payload[1])
                sk.append(k_idx)
                eps.append(int(seed))
            if progress is not None:
                progress(sc_kind, int(seed), len(frames), len(kept))
    if not xs:
        raise ValueError("no frames collected")
    return Dataset(kind, n_point, np.array(xs), np.array(zs), np.array(sk), np.array(eps))
