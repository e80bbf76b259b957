from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptpm.model import Cmp, Const, TermRef, make_and
from adaptpm.planner import (
    NoPlan,
    PlanningProblem,
    ground,
    parse_action,
    plan_greedy,
    plan_iddfs,
    simulate,
    validate_plan,
)
from adaptpm.state import Interpretation, eval_formula
from helpers import ground_actions, micro_problem, planner_oracle_violations, shortest_plan_length, successor

N_MICRO = 250


def test_iddfs_and_greedy_match_exhaustive_oracle():
    violations = {}
    lengths = []
    for seed in range(N_MICRO):
        bad = planner_oracle_violations(seed)
        if bad:
            violations[seed] = bad
        best = shortest_plan_length(micro_problem(random.Random(seed)), 4)
        if best is not None:
            lengths.append(best)
    assert violations == {}
    # the sample must exercise multi-step plans, not only trivial ones
    assert sum(1 for n in lengths if n >= 2) >= 20


def test_micro_domains_respect_size_limits():
    for seed in range(N_MICRO):
        assert len(ground_actions(micro_problem(random.Random(seed)))) <= 6


def test_goal_already_true_gives_empty_plan(case_domain, case_init):
    init = Interpretation.closed_world(case_domain, case_init.values)
    goal = Cmp(TermRef("at", (Const("act1"),)), "==", Const("loc00"))
    pb = PlanningProblem(case_domain, init, goal, frozenset(case_domain.services))
    assert plan_iddfs(pb) == []
    assert plan_greedy(pb) == []


def test_case_study_single_move(case_domain, case_init):
    init = Interpretation.closed_world(case_domain, case_init.values)
    init = init.updated({("at", "act1"): "loc03"})
    goal = make_and([Cmp(TermRef("at", (Const("act1"),)), "==", Const("loc33"))])
    pb = PlanningProblem(case_domain, init, goal, frozenset(case_domain.services))
    plan = plan_iddfs(pb)
    assert not isinstance(plan, NoPlan)
    assert validate_plan(pb, plan)
    assert eval_formula(goal, simulate(pb, plan), {})
    assert "go(act1,loc03,loc33)" in [a.text() for a in plan]


def test_busy_service_is_never_planned(case_domain, case_init):
    init = Interpretation.closed_world(case_domain, case_init.values).updated({("at", "act1"): "loc03"})
    goal = Cmp(TermRef("at", (Const("act1"),)), "==", Const("loc33"))
    pb = PlanningProblem(case_domain, init, goal, frozenset(s for s in case_domain.services if s != "act1"))
    assert isinstance(plan_iddfs(pb, max_len=3), NoPlan)


def test_bound_limits_iddfs():
    for seed in range(N_MICRO):
        pb = micro_problem(random.Random(seed))
        best = shortest_plan_length(pb, 4)
        if best is not None and best >= 2:
            assert isinstance(plan_iddfs(pb, max_len=best - 1), NoPlan)
            return
    pytest.fail("no multi-step micro problem found")


def test_parse_action_round_trip(case_domain, case_init):
    init = Interpretation.closed_world(case_domain, case_init.values)
    for a in ground(case_domain, init)[:200]:
        assert parse_action(a.text(), case_domain) == a


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_validate_rejects_inapplicable_prefix(seed):
    pb = micro_problem(random.Random(seed))
    plan = plan_greedy(pb)
    if isinstance(plan, NoPlan) or not plan:
        return
    # repeating a plan is valid exactly when the oracle agrees step by step
    doubled = plan + plan
    state = pb.init
    ok = True
    for a in doubled:
        state = successor(pb, state, a)
        if state is None:
            ok = False
            break
    ok = ok and eval_formula(pb.goal, state, {})
    assert validate_plan(pb, doubled) == ok
