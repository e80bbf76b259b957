"""Independent oracles shared by several test modules."""

from __future__ import annotations

import random
from collections import deque
from itertools import product

from adaptpm.errors import IntegerOutOfBounds, TypeMismatch
from adaptpm.model import (
    BOOLEAN,
    BOOLEAN_TYPE,
    CAPABILITY,
    INTEGER,
    INTEGER_TYPE,
    PARTICIPANT,
    Arith,
    AtomicTerm,
    Cmp,
    Const,
    DataType,
    DomainTheory,
    Effect,
    Not,
    Or,
    TaskDef,
    TermRef,
    capable,
    conjuncts,
    make_and,
)
from adaptpm.planner import GroundAction, NoPlan, PlanningProblem, ground, plan_greedy, plan_iddfs, validate_plan
from adaptpm.state import Interpretation, apply_effects, eval_expr, eval_formula, task_bindings

SMALL = "Small_type"


def _literal(rng: random.Random, n_bool: int):
    if rng.random() < 0.25:
        op = rng.choice(["==", "!=", "<", ">=", "<="])
        return Cmp(TermRef("c"), op, Const(rng.randint(0, 3)))
    return Cmp(TermRef(f"p{rng.randrange(n_bool)}"), "==", Const(rng.random() < 0.5))


def _formula(rng: random.Random, n_bool: int, max_parts: int, min_parts: int = 0):
    parts = []
    for _ in range(rng.randint(min_parts, max_parts)):
        lit = _literal(rng, n_bool)
        r = rng.random()
        if r < 0.15:
            lit = Not(lit)
        elif r < 0.3:
            lit = Or((lit, _literal(rng, n_bool)))
        parts.append(lit)
    return make_and(parts)


def micro_domain(rng: random.Random) -> DomainTheory:
    """Up to three parameterless tasks over booleans p_i and a counter c in 0..3."""
    n_bool = rng.randint(2, 3)
    services = ("s0", "s1")
    caps = ("k0", "k1")
    provides = frozenset((s, c) for s in services for c in caps if rng.random() < 0.75)
    terms = {f"p{i}": AtomicTerm(f"p{i}", (), BOOLEAN, True) for i in range(n_bool)}
    terms["c"] = AtomicTerm("c", (), SMALL, True)
    tasks = {}
    requires = set()
    for t in range(rng.randint(2, 3)):
        name = f"t{t}"
        effs = []
        for v in rng.sample(range(n_bool), rng.randint(1, 2)):
            effs.append(Effect(TermRef(f"p{v}"), "=", Const(rng.random() < 0.5), rng.choice(["supposed", "automatic"])))
        r = rng.random()
        if r < 0.35:
            effs.append(Effect(TermRef("c"), "+=", Const(1), "automatic"))
        elif r < 0.45:
            effs.append(Effect(TermRef("c"), "-=", Const(1), "automatic"))
        elif r < 0.55:
            effs.append(Effect(TermRef("c"), "=", Arith("+", TermRef("c"), Const(2)), "automatic"))
        if not effs:
            effs.append(Effect(TermRef("p0"), "=", Const(True), "supposed"))
        tasks[name] = TaskDef(name, (), _formula(rng, n_bool, 1), tuple(effs))
        requires.add((name, rng.choice(caps)))
    datatypes = {
        BOOLEAN: BOOLEAN_TYPE,
        INTEGER: INTEGER_TYPE,
        SMALL: DataType(SMALL, "integer", 0, 3),
        PARTICIPANT: DataType(PARTICIPANT, "enumerated", constants=services),
        CAPABILITY: DataType(CAPABILITY, "enumerated", constants=caps),
    }
    return DomainTheory(
        name="Micro",
        datatypes=datatypes,
        services=services,
        capabilities=caps,
        provides=provides,
        requires=frozenset(requires),
        terms=terms,
        complex_terms={},
        tasks=tasks,
        events={},
    )


def micro_problem(rng: random.Random) -> PlanningProblem:
    d = micro_domain(rng)
    # one effect literal from each of several tasks, so plans tend to need several steps
    lits: dict[str, object] = {}
    for t in rng.sample(sorted(d.tasks), rng.randint(1, len(d.tasks))):
        options = [e for e in d.tasks[t].effects if isinstance(e.expr, Const) and e.op == "="]
        if options:
            e = rng.choice(options)
            lits.setdefault(e.target.name, e.expr.value)
    parts = [Cmp(TermRef(n), "==", Const(v)) for n, v in lits.items()]
    if rng.random() < 0.3:
        parts.append(Cmp(TermRef("c"), rng.choice([">=", "<="]), Const(rng.randint(0, 3))))
    if rng.random() < 0.3:
        parts.extend(conjuncts(_formula(rng, len(d.terms) - 1, 1, 1)))
    goal = make_and(parts)
    # prefer a starting state where the goal does not already hold
    for _ in range(20):
        values = {(n,): (rng.random() < 0.5) for n in d.terms if n != "c"}
        values[("c",)] = rng.randint(0, 3)
        init = Interpretation(d, values)
        if not eval_formula(goal, init, {}):
            break
    free = frozenset(s for s in d.services if rng.random() < 0.85)
    return PlanningProblem(d, init, goal, free)


def ground_actions(problem: PlanningProblem) -> list[GroundAction]:
    """Parameterless tasks times free capable services, expected outputs from the effects."""
    d = problem.domain
    out = []
    for name in sorted(d.tasks):
        task = d.tasks[name]
        for s in sorted(problem.free):
            if capable(d, s, name):
                out.append(GroundAction(name, s, (), tuple(e.expr.value for e in task.supposed)))
    return out


def successor(problem: PlanningProblem, state: Interpretation, a: GroundAction) -> Interpretation | None:
    task = problem.domain.tasks[a.task]
    b = task_bindings(task, a.inputs, a.service)
    if not eval_formula(task.precondition, state, b):
        return None
    try:
        return apply_effects(state, task, a.inputs, a.expected, True, a.service)
    except (IntegerOutOfBounds, TypeMismatch):
        return None


def shortest_plan_length(problem: PlanningProblem, max_len: int | None = None) -> int | None:
    """Breadth-first enumeration of every action sequence, state-deduplicated."""
    acts = ground_actions(problem)
    start = problem.init
    if eval_formula(problem.goal, start, {}):
        return 0
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        s, n = frontier.popleft()
        if max_len is not None and n >= max_len:
            continue
        for a in acts:
            ns = successor(problem, s, a)
            if ns is None or ns in seen:
                continue
            if eval_formula(problem.goal, ns, {}):
                return n + 1
            seen.add(ns)
            frontier.append((ns, n + 1))
    return None


def planner_oracle_violations(seed: int) -> list[str]:
    """Compare both planners on one micro problem with exhaustive search."""
    pb = micro_problem(random.Random(seed))
    problems = []
    if not set(ground(pb.domain, pb.init, pb.free)) <= set(ground_actions(pb)):
        problems.append("grounding produced an action the oracle does not know")
    best = shortest_plan_length(pb, 4)
    plan = plan_iddfs(pb, max_len=4)
    if isinstance(plan, NoPlan):
        if best is not None:
            problems.append(f"iddfs missed a plan of length {best}")
    elif best is None or len(plan) != best or not validate_plan(pb, plan):
        problems.append(f"iddfs plan {plan} is not minimal/valid (oracle {best})")
    g = plan_greedy(pb)
    reachable = shortest_plan_length(pb) is not None
    if isinstance(g, NoPlan):
        if reachable:
            problems.append("greedy missed a reachable goal")
    elif not validate_plan(pb, g):
        problems.append("greedy plan does not validate")
    return problems


def random_dag(rng: random.Random) -> tuple[int, list[tuple[int, int]]]:
    """Up to 12 nodes numbered from 2, edges along a random topological order."""
    n = rng.randint(1, 12)
    p = rng.choice([0.1, 0.25, 0.5])
    perm = list(range(2, n + 2))
    rng.shuffle(perm)
    edges = [(perm[i], perm[j]) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return n, edges


# ---------------------------------------------------------------- traces

PHASES = ["assign", "readyToStart", "start", "finishedTask", "ackCompl", "release"]


def trace_violations(domain: DomainTheory, entries, unavailable=frozenset()) -> list[str]:
    """Life-cycle order, Free/Assigned and one-task-per-service checks on a parsed trace."""
    bad: list[str] = []
    phase: dict[str, int] = {}
    owner: dict[str, str] = {}
    busy: dict[str, str] = {}
    last_step = -1
    for st, action, args in entries:
        if st < last_step:
            bad.append(f"step {st} goes backwards")
        last_step = st
        if action not in PHASES:
            continue
        svc, wid = args[0], args[1]
        k = PHASES.index(action)
        if k == 0:
            if wid in phase:
                bad.append(f"{wid} assigned twice")
            if svc in busy:
                bad.append(f"{svc} assigned {wid} while holding {busy[svc]}")
            if svc in unavailable:
                bad.append(f"{svc} is not available but got {wid}")
            if not capable(domain, svc, args[2]):
                bad.append(f"{svc} is not capable of {args[2]}")
            busy[svc] = wid
            owner[wid] = svc
            phase[wid] = 0
            continue
        if phase.get(wid) != k - 1:
            bad.append(f"{action} of {wid} after phase {phase.get(wid)}")
        if owner.get(wid) != svc:
            bad.append(f"{action} of {wid} by {svc}, owner {owner.get(wid)}")
        phase[wid] = k
        if k == len(PHASES) - 1:
            if busy.get(svc) != wid:
                bad.append(f"{svc} releases {wid} but holds {busy.get(svc)}")
            busy.pop(svc, None)
    return bad


# ------------------------------------------------------------- templates

def run_order(domain: DomainTheory, state: Interpretation, graph, services: dict, order) -> Interpretation | None:
    """Execute template tasks in ``order`` with interpreter semantics; None if a step is not executable."""
    for nid in order:
        wi = graph.nodes[nid].workitem
        svc = services[nid]
        task = domain.tasks[wi.task]
        b = task_bindings(task, wi.inputs, svc)
        if not capable(domain, svc, wi.task) or not eval_formula(task.precondition, state, b):
            return None
        try:
            state = apply_effects(state, task, wi.inputs, wi.expected, True, svc)
        except (IntegerOutOfBounds, TypeMismatch):
            return None
    return state


def goal_reachable(domain: DomainTheory, init: Interpretation, goal, limit: int = 200_000) -> bool | None:
    """Breadth-first search over every ground task and capable service, interpreter semantics."""
    acts = []
    for name in sorted(domain.tasks):
        task = domain.tasks[name]
        for svc in domain.services:
            if not capable(domain, svc, name):
                continue
            for inputs in product(*(domain.datatypes[ty].values() for _, ty in task.params)):
                b = task_bindings(task, inputs, svc)
                expected = tuple(eval_expr(e.expr, {}, b, domain) for e in task.supposed)
                acts.append((task, svc, inputs, expected, b))
    seen = {init}
    frontier = deque([init])
    while frontier:
        s = frontier.popleft()
        if eval_formula(goal, s, {}):
            return True
        for task, svc, inputs, expected, b in acts:
            if not eval_formula(task.precondition, s, b):
                continue
            try:
                ns = apply_effects(s, task, inputs, expected, True, svc)
            except (IntegerOutOfBounds, TypeMismatch):
                continue
            if ns not in seen:
                if len(seen) >= limit:
                    return None
                seen.add(ns)
                frontier.append(ns)
    return False
