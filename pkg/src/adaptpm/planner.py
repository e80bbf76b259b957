"""Grounded forward-search planner over the expected world.

States are tuples holding the values of the *dynamic* ground instances, i.e.
those some task or exogenous event can write. Everything else is folded into
the ground formulas at grounding time, and the residual formulas are compiled
to Python functions reading ``s[i]``.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .errors import IntegerOutOfBounds, TypeMismatch, UnboundVariable
from .model import (
    PROVIDES,
    PRT,
    And,
    Arith,
    Call,
    Cmp,
    Const,
    DomainTheory,
    Expr,
    Formula,
    GroundInstance,
    Not,
    Or,
    Quant,
    TermRef,
    Truth,
    Value,
    Var,
    capable,
    conjuncts,
    format_value,
)
from .state import Interpretation, apply_effects, compare, eval_formula, task_bindings

DEFAULT_MAX_LEN = 10


@dataclass(frozen=True)
class GroundAction:
    task: str
    service: str
    inputs: tuple[Value, ...]
    expected: tuple[Value, ...]
    ordinal: int = field(default=0, compare=False)

    def text(self) -> str:
        args = ",".join(format_value(v) for v in (self.service, *self.inputs))
        return f"{self.task}({args})"

    def __str__(self) -> str:
        return self.text()


@dataclass(frozen=True)
class PlanningProblem:
    domain: DomainTheory
    init: Interpretation
    goal: Formula
    free: frozenset[str]


@dataclass(frozen=True)
class NoPlan:
    reason: str = "no plan"

    def __bool__(self) -> bool:
        return False


Plan = list  # list[GroundAction]


# ------------------------------------------------------ partial evaluation
#
# Residual expressions:  ("c", v) | ("s", i) | ("st", name, args) | ("dy", name, args) | ("ar", op, a, b)
# Residual formulas:     True | False | ("and", items) | ("or", items) | ("not", f)
#                        | ("cmp", op, a, b) | ("call", key)


class _Grounder:
    def __init__(self, domain: DomainTheory, init: Interpretation):
        self.domain = domain
        written = {e.target.name for t in domain.tasks.values() for e in t.effects}
        written |= {e.target.name for ev in domain.events.values() for e in ev.effects}
        self.dynamic_terms = frozenset(written)
        self.slots: dict[GroundInstance, int] = {}
        self.slot_names: list[GroundInstance] = []
        for inst in domain.ground_instances():
            if inst[0] in self.dynamic_terms:
                self.slots[inst] = len(self.slot_names)
                self.slot_names.append(inst)
        self.static = {k: v for k, v in init.items() if k[0] not in self.dynamic_terms}
        self.call_memo: dict[tuple, object] = {}

    def state_of(self, I: Interpretation) -> tuple:
        return tuple(I[k] for k in self.slot_names)

    # expressions
    def expr(self, e: Expr, env: dict[str, tuple]):
        if isinstance(e, Const):
            return ("c", e.value)
        if isinstance(e, Var):
            try:
                return env[e.name]
            except KeyError:
                raise UnboundVariable(f"unbound variable {e.name!r}") from None
        if isinstance(e, TermRef):
            args = tuple(self.expr(a, env) for a in e.args)
            builtin = e.name == PROVIDES and PROVIDES not in self.domain.terms
            if all(a[0] == "c" for a in args):
                vals = tuple(a[1] for a in args)
                if builtin:
                    return ("c", vals in self.domain.provides)
                key = (e.name, *vals)
                if key in self.slots:
                    return ("s", self.slots[key])
                return ("c", self.static[key])
            if builtin:
                return ("st", PROVIDES, args)
            return ("dy" if e.name in self.dynamic_terms else "st", e.name, args)
        if isinstance(e, Arith):
            a, b = self.expr(e.left, env), self.expr(e.right, env)
            if a[0] == "c" and b[0] == "c":
                if isinstance(a[1], bool) or isinstance(b[1], bool):
                    raise TypeMismatch("arithmetic on booleans")
                return ("c", a[1] + b[1] if e.op == "+" else a[1] - b[1])
            return ("ar", e.op, a, b)
        raise TypeError(e)

    # formulas
    def formula(self, f: Formula, env: dict[str, tuple]):
        if isinstance(f, Cmp):
            a, b = self.expr(f.left, env), self.expr(f.right, env)
            if a[0] == "c" and b[0] == "c":
                return compare(f.op, a[1], b[1])
            return ("cmp", f.op, a, b)
        if isinstance(f, Truth):
            return f.value
        if isinstance(f, And):
            return _mk("and", [self.formula(i, env) for i in f.items])
        if isinstance(f, Or):
            return _mk("or", [self.formula(i, env) for i in f.items])
        if isinstance(f, Not):
            r = self.formula(f.item, env)
            if isinstance(r, bool):
                return not r
            return ("not", r)
        if isinstance(f, Quant):
            names = [n for n, _ in f.variables]
            doms = [self.domain.datatypes[t].values() for _, t in f.variables]
            parts = []
            for combo in itertools.product(*doms):
                sub = dict(env)
                sub.update({n: ("c", v) for n, v in zip(names, combo)})
                parts.append(self.formula(f.body, sub))
            return _mk("or" if f.kind == "exists" else "and", parts)
        if isinstance(f, Call):
            ct = self.domain.complex_terms[f.name]
            args = [self.expr(a, env) for a in f.args]
            sub = {n: a for (n, _), a in zip(ct.params, args)}
            if all(a[0] == "c" for a in args):
                key = (f.name, *(a[1] for a in args))
                if key not in self.call_memo:
                    self.call_memo[key] = self.formula(ct.body, sub)
                r = self.call_memo[key]
                return r if isinstance(r, bool) else ("call", key)
            return self.formula(ct.body, sub)
        raise TypeError(f)


def _mk(kind: str, items: list):
    absorb = kind == "or"  # True absorbs an Or, False absorbs an And
    out = []
    for it in items:
        if isinstance(it, bool):
            if it == absorb:
                return absorb
            continue
        if isinstance(it, tuple) and it[0] == kind:
            out.extend(it[1])
        else:
            out.append(it)
    if not out:
        return not absorb
    if len(out) == 1:
        return out[0]
    return (kind, tuple(out))


# ------------------------------------------------------------ code generation

class _Codegen:
    def __init__(self, g: _Grounder):
        self.g = g
        self.ns: dict[str, object] = {}
        self.defs: list[str] = []
        self.tables: dict[object, str] = {}
        self.calls: dict[tuple, str] = {}
        self.fn_cache: dict[str, str] = {}

    def table(self, key, build: Callable[[], object]) -> str:
        if key not in self.tables:
            name = f"_T{len(self.tables)}"
            self.ns[name] = build()
            self.tables[key] = name
        return self.tables[key]

    def static_table(self, term: str) -> str:
        def build():
            if term == PROVIDES:
                return {pair: True for pair in self.g.domain.provides}
            return {k[1:]: v for k, v in self.g.static.items() if k[0] == term}

        return self.table(("st", term), build)

    def index_table(self, term: str) -> str:
        return self.table(("dy", term), lambda: {k[1:]: i for k, i in self.g.slots.items() if k[0] == term})

    def static_set(self, term: str, value) -> str:
        def build():
            if term == PROVIDES:
                pairs = set(self.g.domain.provides)
                if value is True:
                    return frozenset(pairs)
                svc, caps = self.g.domain.services, self.g.domain.capabilities
                return frozenset((s, c) for s in svc for c in caps if (s, c) not in pairs)
            return frozenset(k[1:] for k, v in self.g.static.items() if k[0] == term and v == value and type(v) is type(value))

        return self.table(("set", term, value, type(value)), build)

    def expr(self, r, sv: str) -> str:
        kind = r[0]
        if kind == "c":
            return repr(r[1])
        if kind == "s":
            return f"{sv}[{r[1]}]"
        if kind == "st":
            t = self.static_table(r[1])
            default = "False" if r[1] == PROVIDES else "None"
            return f"{t}.get(({''.join(self.expr(a, sv) + ',' for a in r[2])}), {default})"
        if kind == "dy":
            t = self.index_table(r[1])
            return f"{sv}[{t}[({''.join(self.expr(a, sv) + ',' for a in r[2])})]]"
        if kind == "ar":
            return f"({self.expr(r[2], sv)} {r[1]} {self.expr(r[3], sv)})"
        raise ValueError(r)

    def formula(self, r, sv: str) -> str:
        if r is True:
            return "True"
        if r is False:
            return "False"
        kind = r[0]
        if kind == "and":
            return " and ".join(f"({self.formula(i, sv)})" for i in r[1])
        if kind == "or":
            return " or ".join(f"({self.formula(i, sv)})" for i in r[1])
        if kind == "not":
            return f"not ({self.formula(r[1], sv)})"
        if kind == "call":
            return f"{self.call(r[1])}({sv})"
        if kind == "cmp":
            op, a, b = r[1], r[2], r[3]
            if op in ("==", "!=") and b[0] == "c" and a[0] == "st":
                a, b = b, a
            if op in ("==", "!=") and a[0] == "c" and b[0] == "st":
                members = self.static_set(b[1], a[1])
                key = "(" + "".join(self.expr(x, sv) + "," for x in b[2]) + ")"
                return f"{key} {'in' if op == '==' else 'not in'} {members}"
            return f"{self.expr(a, sv)} {op} {self.expr(b, sv)}"
        raise ValueError(r)

    def call(self, key: tuple) -> str:
        if key not in self.calls:
            name = f"_C{len(self.calls)}"
            self.calls[key] = name
            body = self.formula(self.g.call_memo[key], "s")
            self.defs.append(f"def {name}(s):\n    return {body}\n")
        return self.calls[key]

    def function(self, body: str, prefix: str) -> str:
        if body not in self.fn_cache:
            name = f"_{prefix}{len(self.fn_cache)}"
            self.fn_cache[body] = name
            self.defs.append(f"def {name}(s):\n{body}")
        return self.fn_cache[body]

    def predicate(self, r) -> str:
        return self.function(f"    return {self.formula(r, 's')}\n", "P")

    def finish(self) -> dict[str, object]:
        src = "\n".join(self.defs)
        exec(compile(src, "<planner>", "exec"), self.ns)
        self.defs = []
        return self.ns


@dataclass
class _CAction:
    action: GroundAction
    pre: Callable | None
    apply: Callable


@dataclass
class CompiledDomain:
    grounder: _Grounder
    codegen: _Codegen
    actions: list[_CAction]
    keyed: dict[int, dict[object, list[int]]]
    unkeyed: list[int]

    def candidates(self, s: tuple) -> list[int]:
        out = list(self.unkeyed)
        for slot, table in self.keyed.items():
            hit = table.get(s[slot])
            if hit:
                out.extend(hit)
        out.sort()
        return out

    def successors(self, s: tuple, allowed: set[int] | None = None):
        acts = self.actions
        for i in self.candidates(s):
            if allowed is not None and i not in allowed:
                continue
            a = acts[i]
            if a.pre is not None and not a.pre(s):
                continue
            ns = a.apply(s)
            if ns is not None:
                yield a.action, ns


_CACHE: dict[tuple, CompiledDomain] = {}


def _cache_key(domain: DomainTheory, init: Interpretation, free: Iterable[str]) -> tuple:
    g_terms = {e.target.name for t in domain.tasks.values() for e in t.effects}
    g_terms |= {e.target.name for ev in domain.events.values() for e in ev.effects}
    statics = tuple(sorted((k, v) for k, v in init.items() if k[0] not in g_terms))
    return (id(domain), frozenset(free), hash(statics), statics)


def compile_domain(domain: DomainTheory, init: Interpretation, free: Iterable[str]) -> CompiledDomain:
    key = _cache_key(domain, init, free)
    hit = _CACHE.get(key)
    if hit is not None and hit.grounder.domain is domain:
        return hit
    g = _Grounder(domain, init)
    cg = _Codegen(g)
    free_set = frozenset(free)
    pending: list[tuple[GroundAction, str | None, str]] = []
    keys: list[tuple[int, object] | None] = []
    ordinal = 0
    for task in domain.tasks.values():
        services = [s for s in domain.services if s in free_set and capable(domain, s, task.name)]
        doms = [domain.datatypes[t].values() for _, t in task.params]
        for svc in services:
            for combo in itertools.product(*doms):
                env = {n: ("c", v) for (n, _), v in zip(task.params, combo)}
                env[PRT] = ("c", svc)
                pre = g.formula(task.precondition, env)
                if pre is False:
                    continue
                key, pre = _extract_key(pre)
                expected = tuple(g.expr(e.expr, env)[1] for e in task.supposed)
                body = _effect_body(g, cg, task, env)
                ga = GroundAction(task.name, svc, tuple(combo), expected, ordinal)
                ordinal += 1
                pre_name = None if pre is True else cg.predicate(pre)
                pending.append((ga, pre_name, cg.function(body, "A")))
                keys.append(key)
    ns = cg.finish()
    actions = [_CAction(ga, ns[p] if p else None, ns[a]) for ga, p, a in pending]
    keyed: dict[int, dict[object, list[int]]] = {}
    unkeyed: list[int] = []
    for i, k in enumerate(keys):
        if k is None:
            unkeyed.append(i)
        else:
            keyed.setdefault(k[0], {}).setdefault(k[1], []).append(i)
    cd = CompiledDomain(g, cg, actions, keyed, unkeyed)
    if len(_CACHE) > 32:
        _CACHE.clear()
    _CACHE[key] = cd
    return cd


def _extract_key(pre):
    """Split off one ``s[k] == const`` conjunct to index the action by."""
    items = list(pre[1]) if isinstance(pre, tuple) and pre[0] == "and" else [pre]
    for i, it in enumerate(items):
        if isinstance(it, tuple) and it[0] == "cmp" and it[1] == "==":
            a, b = it[2], it[3]
            if a[0] == "c" and b[0] == "s":
                a, b = b, a
            if a[0] == "s" and b[0] == "c":
                rest = items[:i] + items[i + 1:]
                return (a[1], b[1]), _mk("and", rest)
    return None, pre


def _effect_body(g: _Grounder, cg: _Codegen, task, env) -> str:
    lines = ["    l = list(s)"]
    out_iter = iter(task.supposed)
    for e in task.effects:
        target = g.expr(e.target, env)
        if target[0] == "s":
            idx = str(target[1])
        elif target[0] == "dy":
            idx = f"{cg.index_table(target[1])}[({''.join(cg.expr(a, 'l') + ',' for a in target[2])})]"
        else:
            raise TypeMismatch(f"effect target {e.target.name} is not writable")
        if e.mode == "supposed":
            next(out_iter)
            rhs = cg.expr(g.expr(e.expr, env), "l")
        else:
            rhs = cg.expr(g.expr(e.expr, env), "l")
            if e.op != "=":
                rhs = f"l[{idx}] {'+' if e.op == '+=' else '-'} {rhs}"
        dt = g.domain.result_type(e.target.name)
        if dt.kind == "integer":
            lines.append(f"    v = {rhs}")
            lines.append(f"    if not {dt.lo} <= v <= {dt.hi}:\n        return None")
            lines.append(f"    l[{idx}] = v")
        else:
            lines.append(f"    l[{idx}] = {rhs}")
    lines.append("    return tuple(l)")
    return "\n".join(lines) + "\n"


@dataclass
class CompiledProblem:
    domain: CompiledDomain
    init: tuple
    goal_parts: list[Callable]
    goal: Callable
    unsat: bool


def compile_problem(problem: PlanningProblem) -> CompiledProblem:
    cd = compile_domain(problem.domain, problem.init, problem.free)
    g, cg = cd.grounder, cd.codegen
    parts = []
    unsat = False
    for c in conjuncts(problem.goal):
        r = g.formula(c, {})
        if r is False:
            unsat = True
        elif r is not True:
            parts.append(r)
    srcs = [cg.formula(r, "s") for r in parts]
    # cheap atoms first, complex-term calls last
    order = sorted(range(len(parts)), key=lambda i: ("_C" in srcs[i], len(srcs[i])))
    names = [cg.predicate(parts[i]) for i in order]
    whole = cg.function(
        "    return " + (" and ".join(f"{n}(s)" for n in names) if names else "True") + "\n", "G"
    )
    ns = cg.finish()
    return CompiledProblem(cd, g.state_of(problem.init), [ns[n] for n in names], ns[whole], unsat)  # type: ignore[list-item]


# ------------------------------------------------------------------- search

def _allowed(cp: CompiledProblem, actions: Sequence[GroundAction] | None) -> set[int] | None:
    if actions is None:
        return None
    wanted = set(actions)
    return {i for i, a in enumerate(cp.domain.actions) if a.action in wanted}


def ground(domain: DomainTheory, init: Interpretation, free: Iterable[str] | None = None) -> list[GroundAction]:
    """Every admissible ground action whose precondition is not statically false."""
    cd = compile_domain(domain, init, domain.services if free is None else free)
    return [a.action for a in cd.actions]


def plan_iddfs(
    problem: PlanningProblem,
    actions: Sequence[GroundAction] | None = None,
    max_len: int = DEFAULT_MAX_LEN,
) -> list[GroundAction] | NoPlan:
    """Shortest plan by iterative deepening with a transposition table."""
    cp = compile_problem(problem)
    if cp.unsat:
        return NoPlan("goal is statically false")
    goal = cp.goal
    if goal(cp.init):
        return []
    allowed = _allowed(cp, actions)
    succ = cp.domain.successors
    path: list[GroundAction] = []

    def dfs(s: tuple, rem: int, seen: dict) -> bool:
        for a, ns in succ(s, allowed):
            if rem == 1:
                if goal(ns):
                    path.append(a)
                    return True
                continue
            prev = seen.get(ns)
            if prev is not None and prev >= rem - 1:
                continue
            seen[ns] = rem - 1
            path.append(a)
            if goal(ns) or dfs(ns, rem - 1, seen):
                return True
            path.pop()
        return False

    for depth in range(1, max_len + 1):
        seen = {cp.init: depth}
        if dfs(cp.init, depth, seen):
            return list(path)
    return NoPlan(f"no plan of length <= {max_len}")


def plan_greedy(
    problem: PlanningProblem,
    actions: Sequence[GroundAction] | None = None,
    budget: int = 200_000,
) -> list[GroundAction] | NoPlan:
    """Best-first search on the number of unsatisfied goal conjuncts."""
    cp = compile_problem(problem)
    if cp.unsat:
        return NoPlan("goal is statically false")
    parts = cp.goal_parts
    allowed = _allowed(cp, actions)

    def h(s: tuple) -> int:
        return sum(1 for p in parts if not p(s))

    start = cp.init
    parent: dict[tuple, tuple | None] = {start: None}
    counter = itertools.count()
    heap = [(h(start), next(counter), start)]
    expansions = 0
    while heap:
        hv, _, s = heapq.heappop(heap)
        if hv == 0:
            plan = []
            cur = s
            while parent[cur] is not None:
                prev, act = parent[cur]  # type: ignore[misc]
                plan.append(act)
                cur = prev
            plan.reverse()
            return plan
        if expansions >= budget:
            return NoPlan("search budget exhausted")
        expansions += 1
        for a, ns in cp.domain.successors(s, allowed):
            if ns not in parent:
                parent[ns] = (s, a)
                heapq.heappush(heap, (h(ns), next(counter), ns))
    return NoPlan("search space exhausted")


def validate_plan(problem: PlanningProblem, plan: Sequence[GroundAction]) -> bool:
    """Reference simulation with the interpreter semantics, independent of compiled code."""
    dom = problem.domain
    I = problem.init
    for a in plan:
        if a.task not in dom.tasks or a.service not in problem.free:
            return False
        if not capable(dom, a.service, a.task):
            return False
        task = dom.tasks[a.task]
        b = task_bindings(task, a.inputs, a.service)
        if not eval_formula(task.precondition, I, b):
            return False
        try:
            I = apply_effects(I, task, a.inputs, a.expected, True, a.service)
        except (IntegerOutOfBounds, TypeMismatch):
            return False
    return eval_formula(problem.goal, I, {})


def simulate(problem: PlanningProblem, plan: Sequence[GroundAction]) -> Interpretation:
    I = problem.init
    for a in plan:
        I = apply_effects(I, problem.domain.tasks[a.task], a.inputs, a.expected, True, a.service)
    return I


def parse_action(text: str, domain: DomainTheory) -> GroundAction:
    """Inverse of ``GroundAction.text``: ``task(service,arg,...)``."""
    from .errors import ArityMismatch, UnknownAction

    t = text.strip()
    if "(" not in t or not t.endswith(")"):
        raise UnknownAction(f"malformed action {text!r}")
    name, rest = t.split("(", 1)
    parts = [p.strip() for p in rest[:-1].split(",") if p.strip()]
    if name not in domain.tasks or not parts:
        raise UnknownAction(f"unknown action {name!r}")
    task = domain.tasks[name]
    if len(parts) != len(task.params) + 1:
        raise ArityMismatch(f"{name} takes {len(task.params)} inputs plus a service")
    from .dsl import parse_value

    svc = parts[0]
    if svc not in domain.services:
        raise UnknownAction(f"unknown service {svc!r}")
    try:
        inputs = tuple(parse_value(p, ty, domain) for p, (_, ty) in zip(parts[1:], task.params))
    except Exception as exc:  # noqa: BLE001 - any bad constant is an unknown action
        raise UnknownAction(str(exc)) from None
    b = task_bindings(task, inputs, svc)
    from .state import eval_expr

    expected = tuple(eval_expr(e.expr, {}, b, domain) for e in task.supposed)
    return GroundAction(name, svc, inputs, expected)
