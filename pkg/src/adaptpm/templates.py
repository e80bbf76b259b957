"""Process templates from partial-order plans.

The pipeline compiles a domain to ground STRIPS actions (integers become value
facts), plans with a partial-order planner, extracts direct predecessors and
successors, wires a gateway graph, and infers the facts the template needs.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .dsl import PNode, ProcessGraph, check_gateways, render_dot, write_process
from .errors import (
    MissingIntegerInit,
    NegativePreconditionRejected,
    UnsupportedFeature,
    UnsupportedForTemplates,
)
from .model import (
    PROVIDES,
    Arith,
    Call,
    Cmp,
    Const,
    DomainTheory,
    Expr,
    Formula,
    Not,
    Or,
    Quant,
    TaskDef,
    TermRef,
    Truth,
    Var,
    WorkItem,
    capable,
    conjuncts,
    format_value,
)
from .planner import NoPlan
from .state import UNASSIGNED, Interpretation, compare, eval_expr, task_bindings

Fact = tuple  # (term, *args) for booleans, (term, *args, value) otherwise
MAX_INT_SPAN = 64
A0, AINF = 0, 1


# -------------------------------------------------------------- compilation

@dataclass(frozen=True)
class StripsAction:
    task: str
    service: str
    inputs: tuple
    expected: tuple
    pre: frozenset
    add: frozenset
    delete: frozenset
    ordinal: int = field(default=0, compare=False)

    def text(self) -> str:
        return f"{self.task}({','.join(format_value(v) for v in (self.service, *self.inputs))})"


@dataclass
class CompiledDomain:
    domain: DomainTheory
    actions: tuple[StripsAction, ...]
    by_add: dict[Fact, tuple[int, ...]]
    fingerprint: str

    def fact_text(self, f: Fact) -> str:
        return fact_text(self.domain, f)


def fact_text(domain: DomainTheory, f: Fact) -> str:
    name = f[0]
    if name == PROVIDES or domain.result_type(name).kind == "boolean":
        return f"{name}({','.join(format_value(a) for a in f[1:])})"
    return f"{name}({','.join(format_value(a) for a in f[1:-1])}) = {format_value(f[-1])}"


@dataclass(frozen=True)
class StripsProblem:
    init: frozenset
    goal: tuple


def _check_formula(f: Formula) -> None:
    for c in conjuncts(f):
        if isinstance(c, Not):
            raise NegativePreconditionRejected("negative preconditions are not admitted in templates")
        if isinstance(c, (Or, Quant, Call)):
            raise UnsupportedForTemplates(f"only conjunctions of comparisons are supported, got {type(c).__name__}")
        if isinstance(c, Truth):
            continue
        if not isinstance(c, Cmp):
            raise UnsupportedForTemplates(f"unsupported condition {c!r}")
        if c.op == "!=":
            raise NegativePreconditionRejected("inequality is a negative precondition")
        for side in (c.left, c.right):
            if isinstance(side, Const) and side.value is False:
                raise NegativePreconditionRejected("comparison with false is a negative precondition")
            for t in _terms(side):
                for a in t.args:
                    if not isinstance(a, (Var, Const)):
                        raise UnsupportedForTemplates("nested terms are not supported in templates")


def _terms(e: Expr):
    if isinstance(e, TermRef):
        yield e
    elif isinstance(e, Arith):
        yield from _terms(e.left)
        yield from _terms(e.right)


def _ground(t: TermRef, b: Mapping) -> tuple:
    return (t.name, *(b[a.name] if isinstance(a, Var) else a.value for a in t.args))


def _check_domain(domain: DomainTheory) -> None:
    if domain.complex_terms:
        raise UnsupportedForTemplates("complex terms are not supported in templates")
    for t in domain.terms.values():
        dt = domain.result_type(t.name)
        if dt.kind == "integer" and dt.hi - dt.lo > MAX_INT_SPAN:
            raise UnsupportedForTemplates(f"integer range of {t.name} exceeds {MAX_INT_SPAN}")
    for task in domain.tasks.values():
        _check_formula(task.precondition)
        for e in task.effects:
            if any(not isinstance(a, (Var, Const)) for a in e.target.args):
                raise UnsupportedForTemplates("nested terms in effect targets are not supported")


def _ground_task(domain: DomainTheory, task: TaskDef, svc: str, inputs: tuple):
    b = task_bindings(task, inputs, svc)
    pre = [c for c in conjuncts(task.precondition) if not isinstance(c, Truth)]
    reads: list[tuple] = []
    pinned: dict[tuple, object] = {}
    for c in pre:
        for side in (c.left, c.right):
            for t in _terms(side):
                key = _ground(t, b)
                if key not in reads:
                    reads.append(key)
        if c.op == "==":
            for t, v in ((c.left, c.right), (c.right, c.left)):
                if isinstance(t, TermRef) and isinstance(v, (Var, Const)):
                    pinned.setdefault(_ground(t, b), b[v.name] if isinstance(v, Var) else v.value)
    pre_reads = list(reads)
    for e in task.effects:
        key = _ground(e.target, b)
        if domain.result_type(e.target.name).kind != "boolean" and key not in reads:
            reads.append(key)
        for t in _terms(e.expr):
            k = _ground(t, b)
            if k not in reads:
                reads.append(k)
    choices = []
    for key in reads:
        if key[0] == PROVIDES:
            choices.append(((key[1], key[2]) in domain.provides,))
        elif key in pinned:
            choices.append((pinned[key],))
        else:
            choices.append(domain.result_type(key[0]).values())
    for combo in itertools.product(*choices):
        env = dict(zip(reads, combo))
        view = _Env(env, domain)
        if not all(compare(c.op, eval_expr(c.left, view, b, domain), eval_expr(c.right, view, b, domain)) for c in pre):
            continue
        pre_facts = set()
        for key in pre_reads:
            if key[0] == PROVIDES:
                pre_facts.add(key)
            elif domain.result_type(key[0]).kind == "boolean":
                if env[key] is True:
                    pre_facts.add(key)
            else:
                pre_facts.add((*key, env[key]))
        for key in reads:
            if key not in pre_reads and domain.result_type(key[0]).kind != "boolean":
                pre_facts.add((*key, env[key]))
        state = dict(env)
        ok = True
        for e in task.effects:
            key = _ground(e.target, b)
            rhs = eval_expr(e.expr, _Env(state, domain), b, domain)
            if e.op == "=":
                new = rhs
            else:
                new = state[key] + rhs if e.op == "+=" else state[key] - rhs
            if not domain.result_type(key[0]).contains(new):
                ok = False
                break
            state[key] = new
        if not ok:
            continue
        add, delete = set(), set()
        for key, new in state.items():
            if key in env and env[key] == new and type(env[key]) is type(new):
                continue
            if domain.result_type(key[0]).kind == "boolean":
                (add if new else delete).add(key)
            else:
                if key in env:
                    delete.add((*key, env[key]))
                add.add((*key, new))
        expected = tuple(eval_expr(e.expr, {}, b, domain) for e in task.supposed)
        yield frozenset(pre_facts), frozenset(add), frozenset(delete - add), expected


class _Env(Mapping):
    def __init__(self, values: dict, domain: DomainTheory):
        self.values, self.domain = values, domain

    def __getitem__(self, k):
        return self.values[k]

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


_CACHE: dict[int, tuple[DomainTheory, CompiledDomain]] = {}


def _compile(domain: DomainTheory) -> CompiledDomain:
    _check_domain(domain)
    actions: list[StripsAction] = []
    for task in domain.tasks.values():
        services = [s for s in domain.services if capable(domain, s, task.name)]
        doms = [domain.datatypes[t].values() for _, t in task.params]
        for svc in services:
            for inputs in itertools.product(*doms):
                for pre, add, delete, expected in _ground_task(domain, task, svc, tuple(inputs)):
                    pre = pre | {(PROVIDES, svc, c) for c in domain.required(task.name)}
                    actions.append(StripsAction(task.name, svc, tuple(inputs), expected, pre, add, delete, len(actions)))
    by_add: dict[Fact, list[int]] = {}
    for i, a in enumerate(actions):
        for f in a.add:
            by_add.setdefault(f, []).append(i)
    canon = "\n".join(
        sorted(
            f"{a.text()}|{sorted(map(repr, a.pre))}|{sorted(map(repr, a.add))}|{sorted(map(repr, a.delete))}"
            for a in actions
        )
    )
    fp = hashlib.sha256(canon.encode()).hexdigest()[:16]
    return CompiledDomain(domain, tuple(actions), {k: tuple(v) for k, v in by_add.items()}, fp)


def compile_domain(domain: DomainTheory) -> CompiledDomain:
    hit = _CACHE.get(id(domain))
    if hit is None or hit[0] is not domain:
        if len(_CACHE) > 16:
            _CACHE.clear()
        hit = (domain, _compile(domain))
        _CACHE[id(domain)] = hit
    return hit[1]


def _mentioned(values: Mapping) -> set:
    out = set()
    for key in values:
        out.update(a for a in key[1:] if isinstance(a, str))
    return out


def init_facts(domain: DomainTheory, values: Mapping) -> frozenset:
    """Closed-world fact set of a partial starting condition."""
    mentioned = _mentioned(values)
    facts = {(PROVIDES, s, c) for s, c in domain.provides}
    for key in domain.ground_instances():
        dt = domain.result_type(key[0])
        if key in values:
            v = values[key]
            if dt.kind == "boolean":
                if v:
                    facts.add(key)
            elif v is not UNASSIGNED:
                facts.add((*key, v))
        elif dt.kind == "integer" and all(a in mentioned for a in key[1:] if isinstance(a, str)):
            raise MissingIntegerInit(f"integer instance {fact_text(domain, (*key, 0)).rsplit(' =', 1)[0]} has no initial value")
    return frozenset(facts)


def goal_facts(domain: DomainTheory, goal: Formula) -> tuple:
    out = []
    for c in conjuncts(goal):
        if isinstance(c, Truth) and c.value:
            continue
        if not (isinstance(c, Cmp) and c.op == "==" and isinstance(c.left, TermRef) and isinstance(c.right, Const)):
            raise UnsupportedForTemplates("template goals must be a conjunction of term == constant")
        key = _ground(c.left, {})
        if domain.result_type(key[0]).kind == "boolean":
            if c.right.value is not True:
                raise NegativePreconditionRejected("negative goals are not admitted in templates")
            out.append(key)
        else:
            out.append((*key, c.right.value))
    return tuple(out)


def pc2pr(domain: DomainTheory, init: Mapping, goal: Formula) -> tuple[CompiledDomain, StripsProblem]:
    cd = compile_domain(domain)
    return cd, StripsProblem(init_facts(domain, init), goal_facts(domain, goal))


# ------------------------------------------------------------- execution

def apply(a: StripsAction, state: frozenset) -> frozenset | None:
    if not a.pre <= state:
        return None
    return (state - a.delete) | a.add


def _trigger_index(cd: CompiledDomain) -> tuple[dict, list]:
    """Each action keyed by one non-static precondition fact."""
    index: dict[Fact, list[StripsAction]] = {}
    always: list[StripsAction] = []
    for a in cd.actions:
        dyn = sorted((f for f in a.pre if f[0] != PROVIDES), key=repr)
        if dyn:
            index.setdefault(dyn[0], []).append(a)
        else:
            always.append(a)
    return index, always


def reachable(cd: CompiledDomain, pb: StripsProblem, limit: int = 30_000) -> bool | None:
    """Exact forward reachability of the goal; None if the state limit is hit."""
    goal = frozenset(pb.goal)
    if goal <= pb.init:
        return True
    index, always = _trigger_index(cd)
    seen = {pb.init}
    queue = deque([pb.init])
    while queue:
        s = queue.popleft()
        cands = list(always)
        for f in s:
            cands.extend(index.get(f, ()))
        for a in cands:
            n = apply(a, s)
            if n is None or n in seen:
                continue
            if goal <= n:
                return True
            if len(seen) >= limit:
                return None
            seen.add(n)
            queue.append(n)
    return False


def h_add_table(cd: CompiledDomain, init: frozenset) -> dict:
    cost = {f: 0 for f in init}
    changed = True
    while changed:
        changed = False
        for a in cd.actions:
            if all(p in cost for p in a.pre):
                c = 1 + sum(cost[p] for p in a.pre)
                for f in a.add:
                    if c < cost.get(f, 1 << 30):
                        cost[f] = c
                        changed = True
    return cost


# ------------------------------------------------------ partial-order plans

@dataclass(frozen=True)
class PartialPlan:
    steps: tuple  # step id -> StripsAction; ids 0 and 1 are the dummy start and end actions (None)
    orderings: frozenset  # (a, b): a before b
    links: frozenset  # (producer, fact, consumer)
    open: tuple = ()  # (fact, consumer), resolved first to last

    def real_steps(self) -> list[int]:
        return list(range(2, len(self.steps)))

    def action(self, i: int) -> StripsAction:
        return self.steps[i]

    def label(self, i: int) -> str:
        return {A0: "a0", AINF: "a_inf"}.get(i) or self.steps[i].text()


def _closure(n: int, orderings: Iterable[tuple[int, int]]) -> list[set[int]]:
    succ: list[set[int]] = [set() for _ in range(n)]
    for a, b in orderings:
        succ[a].add(b)
    out: list[set[int]] = []
    for s in range(n):
        seen: set[int] = set()
        stack = list(succ[s])
        while stack:
            x = stack.pop()
            if x not in seen:
                seen.add(x)
                stack.extend(succ[x])
        out.append(seen)
    return out


def _threats(p: PartialPlan, after: list[set[int]]):
    for prod, f, cons in sorted(p.links, key=repr):
        for t in range(2, len(p.steps)):
            if t in (prod, cons) or f not in p.steps[t].delete:
                continue
            if prod in after[t] or t in after[cons]:
                continue  # t before producer or after consumer
            yield (prod, f, cons), t


def _resolve(p: PartialPlan) -> list[PartialPlan]:
    after = _closure(len(p.steps), p.orderings)
    threat = next(_threats(p, after), None)
    if threat is None:
        return [p]
    (prod, _, cons), t = threat
    out = []
    for a, b in ((t, prod), (cons, t)):  # demotion, then promotion
        if a == b or a in after[b] or (b == A0) or (a == AINF):
            continue
        q = PartialPlan(p.steps, p.orderings | {(a, b)}, p.links, p.open)
        out.extend(_resolve(q))
    return out


def _refine(p: PartialPlan, cd: CompiledDomain, init: frozenset, cost: dict):
    """Children for the first open condition, with threats still unresolved."""
    (f, c), rest = p.open[0], p.open[1:]
    after = _closure(len(p.steps), p.orderings)
    if f in init:
        yield 0, PartialPlan(p.steps, p.orderings | {(A0, c)}, p.links | {(A0, f, c)}, rest)
    for s in range(2, len(p.steps)):
        if s != c and f in p.steps[s].add and s not in after[c]:
            yield 0, PartialPlan(p.steps, p.orderings | {(s, c)}, p.links | {(s, f, c)}, rest)
    for ai in cd.by_add.get(f, ()):
        a = cd.actions[ai]
        if any(q not in cost for q in a.pre):
            continue
        n = len(p.steps)
        pre = sorted(a.pre, key=repr)
        q = PartialPlan(
            p.steps + (a,),
            p.orderings | {(A0, n), (n, AINF), (n, c)},
            p.links | {(n, f, c)},
            rest + tuple((x, n) for x in pre),
        )
        yield 1 + sum(cost[x] for x in pre), q


def pop_plan(cd: CompiledDomain, pb: StripsProblem, budget: int = 200_000) -> PartialPlan | NoPlan:
    """Best-first partial-order planning on (steps + additive heuristic of open conditions)."""
    if reachable(cd, pb) is False:
        return NoPlan("goal unreachable from the starting condition")
    cost = h_add_table(cd, pb.init)
    if any(g not in cost for g in pb.goal):
        return NoPlan("goal unreachable in the relaxed problem")
    root = PartialPlan((None, None), frozenset({(A0, AINF)}), frozenset(), tuple((g, AINF) for g in pb.goal))
    counter = itertools.count()
    h0 = sum(cost[g] for g in pb.goal)
    heap = [(h0, h0, next(counter), root, False)]
    expansions = 0
    while heap:
        prio, h, _, p, dirty = heapq.heappop(heap)
        if dirty:
            for q in _resolve(p):
                heapq.heappush(heap, (prio, h, next(counter), q, False))
            continue
        if not p.open:
            return p
        if expansions >= budget:
            return NoPlan("partial-order search budget exhausted")
        expansions += 1
        base = h - cost[p.open[0][0]]
        for extra, q in _refine(p, cd, pb.init, cost):
            hq = base + extra
            heapq.heappush(heap, (len(q.steps) - 2 + hq, hq, next(counter), q, True))
    return NoPlan("partial-order search space exhausted")


# ------------------------------------------------------- PREC/NEXT and PT

def direct_relations(nodes: Iterable, orderings: Iterable[tuple]) -> tuple[dict, dict]:
    """Direct predecessors and successors: a directly precedes b iff a < b with nothing in between."""
    nodes = list(nodes)
    idx = {n: i for i, n in enumerate(nodes)}
    after = _closure(len(nodes), [(idx[a], idx[b]) for a, b in orderings])
    prec: dict = {n: set() for n in nodes}
    nxt: dict = {n: set() for n in nodes}
    for a in nodes:
        ia = idx[a]
        for ib in after[ia]:
            if not any(ib in after[ic] for ic in after[ia]):
                b = nodes[ib]
                nxt[a].add(b)
                prec[b].add(a)
    return prec, nxt


def find_prec_next(p: PartialPlan) -> tuple[dict[int, set[int]], dict[int, set[int]]]:
    real = p.real_steps()
    inner = [(a, b) for a, b in p.orderings if a >= 2 and b >= 2]
    prec, nxt = direct_relations(real, inner)
    for a in real:
        if not prec[a]:
            prec[a] = {A0}
        if not nxt[a]:
            nxt[a] = {AINF}
    prec[AINF] = {a for a in real if AINF in nxt[a]} or {A0}
    nxt[A0] = {a for a in real if A0 in prec[a]} or {AINF}
    return prec, nxt


def _topo_names(p: PartialPlan, prec: dict) -> dict[int, str]:
    depth: dict[int, int] = {}

    def d(i: int) -> int:
        if i == A0:
            return 0
        if i not in depth:
            depth[i] = 1 + max(d(j) for j in prec[i])
        return depth[i]

    order = sorted(p.real_steps(), key=lambda i: (d(i), i))
    return {s: f"id_{k}" for k, s in enumerate(order, 1)}


def build_pt(p: PartialPlan, prec: dict, nxt: dict) -> ProcessGraph:
    """Gateway graph: splits after steps with several successors, joins before steps with several predecessors."""
    names = _topo_names(p, prec)
    names[A0], names[AINF] = "start", "end"
    nodes: dict[str, PNode] = {"start": PNode("start", "start"), "end": PNode("end", "end")}
    for s in sorted(names, key=lambda s: names[s]):
        if s >= 2:
            a = p.steps[s]
            nodes[names[s]] = PNode(names[s], "task", WorkItem(a.task, names[s], a.inputs, a.expected))
    edges: list[tuple[str, str]] = []
    exit_of: dict[int, str] = {}
    entry_of: dict[int, str] = {}
    n_ps = itertools.count(1)
    n_pj = itertools.count(1)
    ordered = [A0] + sorted(p.real_steps(), key=lambda s: names[s]) + [AINF]
    for s in ordered:
        if s != AINF and len(nxt[s]) > 1:
            g = f"ps{next(n_ps)}"
            nodes[g] = PNode(g, "ps")
            edges.append((names[s], g))
            exit_of[s] = g
        else:
            exit_of[s] = names[s]
        if s != A0 and len(prec[s]) > 1:
            g = f"pj{next(n_pj)}"
            nodes[g] = PNode(g, "pj")
            entry_of[s] = g
        else:
            entry_of[s] = names[s]
    for a in ordered:
        if a == AINF:
            continue
        for b in sorted(nxt[a], key=lambda s: ordered.index(s)):
            edges.append((exit_of[a], entry_of[b]))
    for s in ordered:
        if entry_of[s] != names[s]:
            edges.append((entry_of[s], names[s]))
    g = ProcessGraph(nodes, edges, {})
    check_gateways(g)
    return g


def calc_wp(p: PartialPlan) -> frozenset:
    return frozenset(f for prod, f, _ in p.links if prod == A0)


# ------------------------------------------------------------- templates

@dataclass
class ProcessTemplate:
    graph: ProcessGraph
    wp: frozenset
    goal: frozenset
    fingerprint: str
    plan: PartialPlan | None = None
    services: dict[str, str] = field(default_factory=dict)  # task node id -> service the plan chose


def make_template(cd: CompiledDomain, pb: StripsProblem, p: PartialPlan) -> ProcessTemplate:
    prec, nxt = find_prec_next(p)
    names = _topo_names(p, prec)
    services = {names[s]: p.steps[s].service for s in p.real_steps()}
    return ProcessTemplate(build_pt(p, prec, nxt), calc_wp(p), frozenset(pb.goal), cd.fingerprint, p, services)


def graph_orders(g: ProcessGraph) -> dict[str, set[str]]:
    """Task-to-task reachability in a template graph."""
    succ: dict[str, list[str]] = {n: [] for n in g.nodes}
    for s, d in g.edges:
        succ[s].append(d)
    tasks = [n.id for n in g.task_nodes()]
    out: dict[str, set[str]] = {}
    for t in tasks:
        seen: set[str] = set()
        stack = list(succ[t])
        while stack:
            x = stack.pop()
            if x not in seen:
                seen.add(x)
                stack.extend(succ[x])
        out[t] = {x for x in seen if g.nodes[x].kind == "task"}
    return out


def linearizations(g: ProcessGraph):
    """Every task order compatible with the template graph."""
    after = graph_orders(g)
    tasks = sorted(after)
    before = {t: {u for u in tasks if t in after[u]} for t in tasks}

    def rec(done: list[str], left: set[str]):
        if not left:
            yield list(done)
            return
        for t in sorted(left):
            if before[t] <= set(done):
                done.append(t)
                left.remove(t)
                yield from rec(done, left)
                left.add(t)
                done.pop()

    yield from rec([], set(tasks))


def concurrent_pairs(g: ProcessGraph) -> list[tuple[str, str]]:
    after = graph_orders(g)
    tasks = sorted(after)
    return [(a, b) for a, b in itertools.combinations(tasks, 2) if b not in after[a] and a not in after[b]]


def facts_to_values(domain: DomainTheory, facts: Iterable[Fact]) -> dict:
    """Interpretation values of a fact set (provides facts are static and skipped)."""
    values: dict = {}
    for f in facts:
        if f[0] == PROVIDES:
            continue
        if domain.result_type(f[0]).kind == "boolean":
            values[f] = True
        else:
            values[f[:-1]] = f[-1]
    return values


def wp_interpretation(domain: DomainTheory, facts: Iterable[Fact]) -> Interpretation:
    return Interpretation.closed_world(domain, facts_to_values(domain, facts), unassigned_ok=True)


# --------------------------------------------------------------- library

class Library:
    """Templates on disk, one directory per entry."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _entries(self):
        if not self.root.exists():
            return
        for d in sorted(self.root.iterdir()):
            meta = d / "entry.json"
            if meta.exists():
                yield d, json.loads(meta.read_text())

    def put(self, fingerprint: str, goal: Iterable[Fact], template: ProcessTemplate) -> Path:
        goal_l = sorted((list(f) for f in goal), key=repr)
        key = hashlib.sha256(json.dumps([fingerprint, goal_l, sorted(map(list, template.wp), key=repr)]).encode())
        d = self.root / f"pt_{key.hexdigest()[:12]}"
        d.mkdir(parents=True, exist_ok=True)
        g = template.graph
        meta = {
            "fingerprint": fingerprint,
            "goal": goal_l,
            "wp": sorted((list(f) for f in template.wp), key=repr),
            "nodes": [
                [n.id, n.kind, None if n.workitem is None else [n.workitem.task, list(n.workitem.inputs), list(n.workitem.expected)]]
                for n in g.nodes.values()
            ],
            "edges": [list(e) for e in g.edges],
            "services": template.services,
        }
        (d / "entry.json").write_text(json.dumps(meta, indent=1) + "\n")
        (d / "template.dot").write_text(render_dot(g, "template"))
        try:
            (d / "template.proc").write_text(write_process(g))
        except UnsupportedFeature:  # not block structured
            pass
        return d

    def get(self, fingerprint: str, goal: Iterable[Fact], init: Iterable[Fact]) -> ProcessTemplate | None:
        goal_s = frozenset(tuple(f) for f in goal)
        init_s = frozenset(init)
        for _, meta in self._entries():
            if meta["fingerprint"] != fingerprint:
                continue
            if frozenset(tuple(f) for f in meta["goal"]) != goal_s:
                continue
            wp = frozenset(tuple(f) for f in meta["wp"])
            if not wp <= init_s:
                continue
            nodes = {}
            for nid, kind, wi in meta["nodes"]:
                item = None if wi is None else WorkItem(wi[0], nid, tuple(wi[1]), tuple(wi[2]))
                nodes[nid] = PNode(nid, kind, item)
            g = ProcessGraph(nodes, [tuple(e) for e in meta["edges"]], {})
            return ProcessTemplate(g, wp, goal_s, fingerprint, services=dict(meta.get("services", {})))
        return None


@dataclass
class SynthesisResult:
    template: ProcessTemplate
    from_library: bool


def synthesize(
    domain: DomainTheory,
    init: Mapping,
    goal: Formula,
    library: Library | None = None,
    budget: int = 200_000,
) -> SynthesisResult | NoPlan:
    cd, pb = pc2pr(domain, init, goal)
    if library is not None:
        hit = library.get(cd.fingerprint, pb.goal, pb.init)
        if hit is not None:
            return SynthesisResult(hit, True)
    plan = pop_plan(cd, pb, budget)
    if isinstance(plan, NoPlan):
        return plan
    pt = make_template(cd, pb, plan)
    if library is not None:
        library.put(cd.fingerprint, pb.goal, pt)
    return SynthesisResult(pt, False)
