"""From a detected deviation to a spliced recovery branch."""

from __future__ import annotations

from dataclasses import dataclass

from .dsl import Scenario
from .engine import ADAPTING, InstanceState, drain, parse_trace, splice_recovery
from .model import Cmp, Const, DomainTheory, TermRef, Value, capable, make_and
from .planner import DEFAULT_MAX_LEN, GroundAction, NoPlan, PlanningProblem, plan_greedy, plan_iddfs
from .state import RealityPair, deviations, same_state


@dataclass(frozen=True)
class DeviationReport:
    failing: tuple[tuple[tuple, Value, Value], ...]  # (instance, physical, expected)
    trigger: tuple  # ("task", id) or ("exog", name, args)

    def __bool__(self) -> bool:
        return bool(self.failing)


def deviation_report(inst: InstanceState) -> DeviationReport:
    failing = tuple(deviations(inst.realities))
    trigger: tuple = ()
    for _, action, args in reversed(parse_trace(inst.trace_text())):
        if action == "release":
            trigger = ("task", args[1])
            break
        if action == "exog":
            trigger = ("exog", args[0], tuple(args[1]))
            break
    return DeviationReport(failing, trigger)


def instance_goal(pair: RealityPair, domain: DomainTheory):
    parts = [
        Cmp(TermRef(k[0], tuple(Const(a) for a in k[1:])), "==", Const(v))
        for k, v in pair.expected.items()
    ]
    return make_and(parts + list(domain.adaptation_goals))


def build_problem(pair: RealityPair, domain: DomainTheory, free) -> PlanningProblem:
    """Planning problem that re-aligns the physical reality with the expected one."""
    if same_state(pair):
        raise ValueError("build_problem needs a deviation: the realities agree")
    return PlanningProblem(domain, pair.physical, instance_goal(pair, domain), frozenset(free))


def translate_plan(plan, domain: DomainTheory | None = None) -> list[tuple[str, str, tuple, tuple]]:
    out = []
    for a in plan:
        if domain is not None:
            assert capable(domain, a.service, a.task), f"{a.service} cannot perform {a.task}"
        out.append((a.task, a.service, tuple(a.inputs), tuple(a.expected)))
    return out


@dataclass(frozen=True)
class PlanBased:
    mode: str = "iddfs"  # or "greedy"
    bound: int = DEFAULT_MAX_LEN
    budget: int = 200_000

    def search(self, problem: PlanningProblem):
        if self.mode == "greedy":
            return plan_greedy(problem, budget=self.budget)
        return plan_iddfs(problem, max_len=self.bound)

    def adapt(self, inst: InstanceState, scenario: Scenario):
        return adapt(inst, self, scenario)


@dataclass(frozen=True)
class BuiltIn:
    """Bounded iterative deepening, as the interpreter-native strategy."""

    bound: int = DEFAULT_MAX_LEN

    def search(self, problem: PlanningProblem):
        return plan_iddfs(problem, max_len=self.bound)

    def adapt(self, inst: InstanceState, scenario: Scenario):
        return adapt(inst, self, scenario)


def adapt(inst: InstanceState, strategy, scenario: Scenario | None = None) -> InstanceState | NoPlan:
    """Drain started work, plan from the physical reality, splice the recovery."""
    if inst.mode != ADAPTING:
        raise ValueError("adapt needs an instance in mode Adapting")
    s = inst.clone()
    s.step_counter += 1
    drain(s, scenario or Scenario())
    s.snapshot = s.expected
    if same_state(s.realities):
        return splice_recovery(s, [])
    problem = build_problem(s.realities, s.domain, s.free_services())
    plan = strategy.search(problem)
    if isinstance(plan, NoPlan):
        return plan
    return splice_recovery(s, translate_plan(plan, s.domain))


def plan_text(plan: list[GroundAction]) -> list[str]:
    return [a.text() for a in plan]
