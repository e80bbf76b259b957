"""Adaptive process management: monitoring, plan-based recovery, PDDL export and template synthesis."""

from __future__ import annotations

__version__ = "0.1.0"

from .dsl import Scenario, parse_domain, parse_init, parse_process, parse_scenario
from .engine import InstanceState, format_trace, instantiate, run
from .errors import ArtifactError
from .planner import NoPlan, PlanningProblem, plan_greedy, plan_iddfs
from .recovery import BuiltIn, PlanBased, adapt
from .state import Interpretation, RealityPair, same_state

__all__ = [
    "ArtifactError",
    "BuiltIn",
    "InstanceState",
    "Interpretation",
    "NoPlan",
    "PlanBased",
    "PlanningProblem",
    "RealityPair",
    "Scenario",
    "__version__",
    "adapt",
    "format_trace",
    "instantiate",
    "parse_domain",
    "parse_init",
    "parse_process",
    "parse_scenario",
    "plan_greedy",
    "plan_iddfs",
    "run",
    "same_state",
]
