"""PDDL 2.2 emission of domains and problems, and parsing of external plans."""

from __future__ import annotations

import itertools
import re

from .errors import DslSyntaxError, UnsupportedFeature
from .model import (
    CAPABILITY,
    PARTICIPANT,
    PROVIDES,
    PRT,
    And,
    Arith,
    Call,
    Cmp,
    Const,
    DomainTheory,
    Effect,
    Expr,
    Formula,
    Not,
    Or,
    Quant,
    TaskDef,
    TermRef,
    Truth,
    Var,
    conjuncts,
    format_value,
)
from .planner import GroundAction, PlanningProblem, parse_action
from .state import UNASSIGNED

REQUIREMENTS = "(:requirements :derived-predicates :typing :fluents :equality)"


def pddl_type(name: str) -> str:
    if name == PARTICIPANT:
        return "service"
    if name == CAPABILITY:
        return "capability"
    return name.lower()


def _enum_types(domain: DomainTheory) -> list[str]:
    return [n for n, dt in domain.datatypes.items() if dt.kind == "enumerated"]


class _Translator:
    """Formula and effect translation under a variable naming scheme."""

    def __init__(self, domain: DomainTheory, names: dict[str, str]):
        self.d = domain
        self.names = dict(names)
        self.fresh = itertools.count(1)

    # -- helpers
    def kind(self, term: str) -> str:
        if term == PROVIDES:
            return "boolean"
        return self.d.result_type(term).kind

    def arg(self, e: Expr) -> str:
        if isinstance(e, Var):
            return self.names.get(e.name, "?" + e.name)
        if isinstance(e, Const):
            return format_value(e.value)
        raise UnsupportedFeature(f"cannot use {e!r} as an object argument")

    def unnest(self, e: Expr, defs: list[tuple[str, str, str]]) -> str:
        """Object-valued expression as a PDDL argument; nested terms get fresh variables."""
        if isinstance(e, (Var, Const)):
            return self.arg(e)
        if isinstance(e, TermRef) and self.kind(e.name) == "enumerated":
            args = [self.unnest(a, defs) for a in e.args]
            v = f"?v{next(self.fresh)}"
            defs.append((v, pddl_type(self.d.terms[e.name].result), f"({' '.join([e.name, *args, v])})"))
            return v
        raise UnsupportedFeature(f"cannot use {e!r} as an object argument")

    def num(self, e: Expr, defs: list) -> str:
        if isinstance(e, Const):
            return str(e.value)
        if isinstance(e, TermRef):
            args = [self.unnest(a, defs) for a in e.args]
            return "(" + " ".join([e.name, *args]) + ")"
        if isinstance(e, Arith):
            return f"({e.op} {self.num(e.left, defs)} {self.num(e.right, defs)})"
        if isinstance(e, Var):
            raise UnsupportedFeature("integer-valued variables are not expressible in PDDL")
        raise UnsupportedFeature(f"unsupported numeric expression {e!r}")

    @staticmethod
    def wrap(defs: list, core: str) -> str:
        if not defs:
            return core
        vs = " ".join(f"{v} - {t}" for v, t, _ in defs)
        body = " ".join([*(a for _, _, a in defs), core])
        return f"(exists ({vs}) (and {body}))"

    # -- formulas
    def formula(self, f: Formula) -> str:
        if isinstance(f, And):
            if not f.items:
                return "(and)"
            return "(and " + " ".join(self.formula(i) for i in f.items) + ")"
        if isinstance(f, Or):
            if not f.items:
                return "(or)"
            return "(or " + " ".join(self.formula(i) for i in f.items) + ")"
        if isinstance(f, Not):
            return f"(not {self.formula(f.item)})"
        if isinstance(f, Truth):
            return "(and)" if f.value else "(or)"
        if isinstance(f, Quant):
            saved = dict(self.names)
            parts = []
            for v, t in f.variables:
                self.names[v] = "?" + v
                parts.append(f"?{v} - {pddl_type(t)}")
            body = self.formula(f.body)
            self.names = saved
            return f"({f.kind} ({' '.join(parts)}) {body})"
        if isinstance(f, Call):
            defs: list = []
            args = [self.unnest(a, defs) for a in f.args]
            return self.wrap(defs, "(" + " ".join([f.name, *args]) + ")")
        if isinstance(f, Cmp):
            return self.cmp(f)
        raise UnsupportedFeature(f"unsupported formula {f!r}")

    def cmp(self, f: Cmp) -> str:
        left, right, op = f.left, f.right, f.op
        if isinstance(right, TermRef) and not isinstance(left, TermRef):
            left, right = right, left
        defs: list = []
        numeric = self._numeric(left) or self._numeric(right)
        if numeric:
            pop = "=" if op in ("==", "!=") else op
            core = f"({pop} {self.num(left, defs)} {self.num(right, defs)})"
            return self.wrap(defs, f"(not {core})" if op == "!=" else core)
        if op not in ("==", "!="):
            raise UnsupportedFeature(f"operator {op} on non-numeric values")
        negate = op == "!="
        if isinstance(left, TermRef) and self.kind(left.name) == "boolean":
            if isinstance(right, Const) and isinstance(right.value, bool):
                negate ^= not right.value
                args = [self.unnest(a, defs) for a in left.args]
                atom = "(" + " ".join([left.name, *args]) + ")"
            else:
                raise UnsupportedFeature("boolean comparison against a non-constant")
        elif isinstance(left, TermRef):
            args = [self.unnest(a, defs) for a in left.args]
            val = self.unnest(right, defs)
            atom = "(" + " ".join([left.name, *args, val]) + ")"
        else:
            atom = f"(= {self.arg(left)} {self.arg(right)})"
        core = f"(not {atom})" if negate else atom
        return self.wrap(defs, core)

    def _numeric(self, e: Expr) -> bool:
        if isinstance(e, Arith):
            return True
        if isinstance(e, Const):
            return isinstance(e.value, int) and not isinstance(e.value, bool)
        if isinstance(e, TermRef) and e.name != PROVIDES:
            return self.kind(e.name) == "integer"
        return False

    # -- effects
    def effects(self, task: TaskDef) -> list[str]:
        pinned: dict[TermRef, Expr] = {}
        for c in conjuncts(task.precondition):
            if isinstance(c, Cmp) and c.op == "==":
                for t, v in ((c.left, c.right), (c.right, c.left)):
                    if isinstance(t, TermRef) and isinstance(v, (Var, Const)):
                        pinned.setdefault(t, v)
        out: list[str] = []
        for e in task.effects:
            out.extend(self.effect(e, pinned))
        return out

    def effect(self, e: Effect, pinned: dict) -> list[str]:
        t = e.target
        if any(not isinstance(a, (Var, Const)) for a in t.args):
            raise UnsupportedFeature(f"nested term in effect target {e.text()}")
        args = [self.arg(a) for a in t.args]
        kind = self.kind(t.name)
        head = " ".join([t.name, *args])
        if kind == "integer":
            op = {"=": "assign", "+=": "increase", "-=": "decrease"}[e.op]
            return [f"({op} ({head}) {self.num(e.expr, [])})"]
        if kind == "boolean":
            if not (isinstance(e.expr, Const) and isinstance(e.expr.value, bool)):
                raise UnsupportedFeature(f"boolean effect with non-constant value {e.text()}")
            return [f"({head})" if e.expr.value else f"(not ({head}))"]
        new = self.arg(e.expr)
        old = pinned.get(t)
        if old is None:
            raise UnsupportedFeature(f"effect {e.text()} overwrites a value the precondition does not fix")
        old_s = self.arg(old)
        if old_s == new:
            return [f"({head} {new})"]
        return [f"(not ({head} {old_s}))", f"({head} {new})"]


def _service_var(task: TaskDef) -> str:
    names = {n for n, _ in task.params}
    return "?x" if "x" not in names else "?prt"


def export_domain(domain: DomainTheory) -> str:
    lines = [f"(define (domain {domain.name})", REQUIREMENTS]
    lines.append("(:types " + " ".join(pddl_type(t) for t in _enum_types(domain)) + ")")
    lines.append("")
    lines.append("(:predicates")
    lines.append("(free ?x - service)")
    lines.append("(provides ?x - service ?c - capability)")
    for t in domain.terms.values():
        kind = domain.result_type(t.name).kind
        if kind == "integer":
            continue
        types = list(t.arg_types) + ([t.result] if kind == "enumerated" else [])
        params = " ".join(f"?a{i} - {pddl_type(ty)}" for i, ty in enumerate(types, 1))
        lines.append(f"({t.name}{' ' + params if params else ''})")
    for ct in domain.complex_terms.values():
        params = " ".join(f"?{n} - {pddl_type(ty)}" for n, ty in ct.params)
        lines.append(f"({ct.name}{' ' + params if params else ''})")
    lines.append(")")
    lines.append("")
    lines.append("(:functions")
    for t in domain.terms.values():
        if domain.result_type(t.name).kind == "integer":
            params = " ".join(f"?a{i} - {pddl_type(ty)}" for i, ty in enumerate(t.arg_types, 1))
            lines.append(f"({t.name}{' ' + params if params else ''})")
    lines.append(")")
    for task in domain.tasks.values():
        sv = _service_var(task)
        names = {PRT: sv, **{n: "?" + n for n, _ in task.params}}
        tr = _Translator(domain, names)
        params = " ".join([f"{sv} - service", *(f"?{n} - {pddl_type(ty)}" for n, ty in task.params)])
        pre = [f"(provides {sv} {c})" for c in sorted(domain.required(task.name))]
        pre.append(f"(free {sv})")
        pre.extend(tr.formula(c) for c in conjuncts(task.precondition))
        effs = tr.effects(task)
        lines.append("")
        lines.append(f"(:action {task.name}")
        lines.append(f":parameters ({params})")
        lines.append(f":precondition (and {' '.join(pre)})")
        lines.append(f":effect (and {' '.join(effs)})")
        lines.append(")")
    for ct in domain.complex_terms.values():
        tr = _Translator(domain, {n: "?" + n for n, _ in ct.params})
        params = " ".join(f"?{n} - {pddl_type(ty)}" for n, ty in ct.params)
        lines.append("")
        lines.append(f"(:derived ({ct.name}{' ' + params if params else ''})")
        lines.append(f"  {tr.formula(ct.body)})")
    lines.append(")")
    return "\n".join(lines) + "\n"


def export_problem(problem: PlanningProblem, domain: DomainTheory | None = None, name: str = "EM1") -> str:
    d = domain or problem.domain
    lines = [f"(define (problem {name}) (:domain {d.name})", "(:objects"]
    for tname in _enum_types(d):
        for c in d.datatypes[tname].constants:
            lines.append(f"{c} - {pddl_type(tname)}")
    lines.append(")")
    lines.append("(:init")
    for s in d.services:
        if s in problem.free:
            lines.append(f"(free {s})")
    for s in d.services:
        for c in d.capabilities:
            if (s, c) in d.provides:
                lines.append(f"(provides {s} {c})")
    for key, v in problem.init.items():
        if v is UNASSIGNED:
            continue
        kind = d.result_type(key[0]).kind
        args = " ".join([key[0], *(format_value(a) for a in key[1:])])
        if kind == "boolean":
            if v:
                lines.append(f"({args})")
        elif kind == "integer":
            lines.append(f"(= ({args}) {v})")
        else:
            lines.append(f"({args} {v})")
    lines.append(")")
    tr = _Translator(d, {})
    goal = [tr.formula(c) for c in conjuncts(problem.goal)]
    lines.append("(:goal (and")
    lines.extend(goal)
    lines.append("))")
    lines.append("(:metric minimize (total-time))")
    lines.append(")")
    return "\n".join(lines) + "\n"


_PLAN_LINE = re.compile(r"^\s*(?:[\d.]+\s*:\s*)?\(([^()]*)\)\s*(?:\[[^\]]*\])?\s*$")


def parse_external_plan(text: str, domain: DomainTheory) -> list[GroundAction]:
    """Read ``<idx>: (task svc arg ...)`` lines; ``;`` starts a comment.

    Names are matched case-insensitively, since external planners often upcase them.
    """
    consts = {c.lower(): c for dt in domain.datatypes.values() if dt.kind == "enumerated" for c in dt.constants}
    plan: list[GroundAction] = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        m = _PLAN_LINE.match(line)
        if not m:
            raise DslSyntaxError(f"line {n}: cannot read plan step {raw.strip()!r}")
        parts = m.group(1).split()
        if not parts:
            raise DslSyntaxError(f"line {n}: empty action")
        name = parts[0].lower()
        task = next((t for t in domain.tasks if t.lower() == name), parts[0])
        args = [consts.get(a.lower(), a) for a in parts[1:]]
        plan.append(parse_action(f"{task}({','.join(args)})", domain))
    return plan


def write_external_plan(plan: list[GroundAction]) -> str:
    return "".join(
        f"{i}: ({' '.join([a.task, a.service, *(format_value(v) for v in a.inputs)])})\n"
        for i, a in enumerate(plan)
    )


def name_sets(pddl_domain: str) -> dict[str, set[str]]:
    """Action, predicate, function and derived names declared in a PDDL domain text."""
    out = {"actions": set(), "predicates": set(), "functions": set(), "derived": set()}
    out["actions"] = set(re.findall(r"\(:action\s+([^\s()]+)", pddl_domain))
    out["derived"] = set(re.findall(r"\(:derived\s+\(([^\s()]+)", pddl_domain))
    for section in ("predicates", "functions"):
        m = re.search(rf"\(:{section}(.*?)\n\)", pddl_domain, re.S)
        if m:
            out[section] = set(re.findall(r"\(([^\s()]+)", m.group(1)))
    return out

