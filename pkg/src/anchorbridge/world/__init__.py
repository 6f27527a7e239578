"""Deterministic toy closed-loop driving world."""

from .control import ActivePlan, track
from .expert import expert_plan, expert_policy
from .rollout import EpisodeResult, Report, aggregate, evaluate, rollout, rollout_many
from .scenario import KINDS, Scenario, Suite, make_scenario
from .sim import EgoState, World, step

__all__ = [
    "ActivePlan", "EgoState", "EpisodeResult", "KINDS", "Report", "Scenario", "Suite", "World",
    "aggregate", "evaluate", "expert_plan", "expert_policy", "make_scenario", "rollout", "rollout_many",
    "step", "track",
]
