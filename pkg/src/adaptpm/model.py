"""Domain vocabulary: data types, terms, formulas, tasks and the domain theory."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Iterator, Union

from .errors import UnknownName

BOOLEAN = "Boolean_type"
INTEGER = "Integer_type"
PARTICIPANT = "Participant"
CAPABILITY = "Capability"
PRT = "PRT"  # implicit parameter bound to the executing service
PROVIDES = "provides"

Value = Union[bool, int, str]


@dataclass(frozen=True)
class DataType:
    name: str
    kind: str  # "boolean" | "integer" | "enumerated"
    lo: int = 0
    hi: int = 30
    constants: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind == "enumerated":
            if not self.constants:
                raise ValueError(f"enumerated type {self.name} has no constants")
            if len(set(self.constants)) != len(self.constants):
                raise ValueError(f"enumerated type {self.name} has duplicate constants")
        elif self.kind == "integer":
            if self.lo > self.hi:
                raise ValueError(f"integer type {self.name} has lo > hi")
        elif self.kind != "boolean":
            raise ValueError(f"unknown kind {self.kind!r}")

    def values(self) -> tuple[Value, ...]:
        if self.kind == "boolean":
            return (False, True)
        if self.kind == "integer":
            return tuple(range(self.lo, self.hi + 1))
        return self.constants

    def contains(self, value: object) -> bool:
        if self.kind == "boolean":
            return isinstance(value, bool)
        if self.kind == "integer":
            return isinstance(value, int) and not isinstance(value, bool) and self.lo <= value <= self.hi
        return isinstance(value, str) and value in self.constants


BOOLEAN_TYPE = DataType(BOOLEAN, "boolean")
INTEGER_TYPE = DataType(INTEGER, "integer", 0, 30)


# ---------------------------------------------------------------- formulas

@dataclass(frozen=True)
class Const:
    value: Value


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class TermRef:
    name: str
    args: tuple["Expr", ...] = ()


@dataclass(frozen=True)
class Arith:
    op: str  # "+" | "-"
    left: "Expr"
    right: "Expr"


Expr = Union[Const, Var, TermRef, Arith]


@dataclass(frozen=True)
class Truth:
    value: bool


@dataclass(frozen=True)
class Cmp:
    left: Expr
    op: str  # == != < > <= >=
    right: Expr


@dataclass(frozen=True)
class And:
    items: tuple["Formula", ...]


@dataclass(frozen=True)
class Or:
    items: tuple["Formula", ...]


@dataclass(frozen=True)
class Not:
    item: "Formula"


@dataclass(frozen=True)
class Quant:
    kind: str  # "exists" | "forall"
    variables: tuple[tuple[str, str], ...]
    body: "Formula"


@dataclass(frozen=True)
class Call:
    """Application of a complex term."""

    name: str
    args: tuple[Expr, ...] = ()


Formula = Union[Truth, Cmp, And, Or, Not, Quant, Call]

TRUE = And(())


def conjuncts(f: Formula) -> tuple[Formula, ...]:
    if isinstance(f, And):
        return f.items
    if isinstance(f, Truth) and f.value:
        return ()
    return (f,)


def make_and(items: list[Formula] | tuple[Formula, ...]) -> Formula:
    flat: list[Formula] = []
    for it in items:
        flat.extend(conjuncts(it))
    if len(flat) == 1:
        return flat[0]
    return And(tuple(flat))


def format_value(v: Value) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def format_expr(e: Expr) -> str:
    if isinstance(e, Const):
        return format_value(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, TermRef):
        return f"{e.name}[{','.join(format_expr(a) for a in e.args)}]"
    if isinstance(e, Arith):
        return f"{format_expr(e.left)} {e.op} {format_expr(e.right)}"
    raise TypeError(e)


def format_formula(f: Formula) -> str:
    if isinstance(f, Truth):
        return "true" if f.value else "false"
    if isinstance(f, Cmp):
        return f"{format_expr(f.left)} {f.op} {format_expr(f.right)}"
    if isinstance(f, Call):
        return f"{f.name}[{','.join(format_expr(a) for a in f.args)}] == true"
    if isinstance(f, And):
        if not f.items:
            return "true"
        return " AND ".join(_wrap(i, (Or, Quant)) for i in f.items)
    if isinstance(f, Or):
        return " OR ".join(_wrap(i, (And, Quant)) for i in f.items)
    if isinstance(f, Not):
        return f"NOT ({format_formula(f.item)})"
    if isinstance(f, Quant):
        vs = ", ".join(f"{n}:{t}" for n, t in f.variables)
        return f"{f.kind.upper()}({vs}).({format_formula(f.body)})"
    raise TypeError(f)


def _wrap(f: Formula, kinds: tuple[type, ...]) -> str:
    text = format_formula(f)
    return f"({text})" if isinstance(f, kinds) else text


def expr_terms(e: Expr) -> Iterator[TermRef]:
    if isinstance(e, TermRef):
        yield e
        for a in e.args:
            yield from expr_terms(a)
    elif isinstance(e, Arith):
        yield from expr_terms(e.left)
        yield from expr_terms(e.right)


def formula_terms(f: Formula) -> Iterator[TermRef]:
    """Atomic term references occurring directly in f (complex calls not expanded)."""
    if isinstance(f, Cmp):
        yield from expr_terms(f.left)
        yield from expr_terms(f.right)
    elif isinstance(f, (And, Or)):
        for i in f.items:
            yield from formula_terms(i)
    elif isinstance(f, Not):
        yield from formula_terms(f.item)
    elif isinstance(f, Quant):
        yield from formula_terms(f.body)
    elif isinstance(f, Call):
        for a in f.args:
            yield from expr_terms(a)


def formula_calls(f: Formula) -> Iterator[str]:
    if isinstance(f, Call):
        yield f.name
    elif isinstance(f, (And, Or)):
        for i in f.items:
            yield from formula_calls(i)
    elif isinstance(f, Not):
        yield from formula_calls(f.item)
    elif isinstance(f, Quant):
        yield from formula_calls(f.body)


def has_negation(f: Formula) -> bool:
    if isinstance(f, Not):
        return True
    if isinstance(f, (And, Or)):
        return any(has_negation(i) for i in f.items)
    if isinstance(f, Quant):
        return has_negation(f.body)
    return False


# ------------------------------------------------------------------- terms

@dataclass(frozen=True)
class AtomicTerm:
    name: str
    arg_types: tuple[str, ...]
    result: str
    relevant: bool = False


@dataclass(frozen=True)
class ComplexTerm:
    name: str
    params: tuple[tuple[str, str], ...]
    body: Formula


@dataclass(frozen=True)
class Effect:
    target: TermRef
    op: str  # "=" | "+=" | "-="
    expr: Expr
    mode: str  # "supposed" | "automatic"

    def text(self) -> str:
        return f"{format_expr(self.target)} {self.op} {format_expr(self.expr)}"


@dataclass(frozen=True)
class TaskDef:
    name: str
    params: tuple[tuple[str, str], ...]
    precondition: Formula
    effects: tuple[Effect, ...]

    @property
    def supposed(self) -> tuple[Effect, ...]:
        return tuple(e for e in self.effects if e.mode == "supposed")

    @property
    def automatic(self) -> tuple[Effect, ...]:
        return tuple(e for e in self.effects if e.mode == "automatic")


@dataclass(frozen=True)
class ExogenousEventDef:
    name: str
    params: tuple[tuple[str, str], ...]
    effects: tuple[Effect, ...]


@dataclass(frozen=True)
class WorkItem:
    task: str
    id: str
    inputs: tuple[Value, ...]
    expected: tuple[Value, ...]

    def text(self) -> str:
        ins = ",".join(format_value(v) for v in self.inputs)
        outs = ",".join(format_value(v) for v in self.expected)
        return f"{self.task}#{self.id}[{ins}]->[{outs}]"


GroundInstance = tuple  # (term name, args...)


@dataclass(frozen=True, eq=True)
class DomainTheory:
    name: str
    datatypes: dict[str, DataType]
    services: tuple[str, ...]
    capabilities: tuple[str, ...]
    provides: frozenset[tuple[str, str]]
    requires: frozenset[tuple[str, str]]
    terms: dict[str, AtomicTerm]
    complex_terms: dict[str, ComplexTerm]
    tasks: dict[str, TaskDef]
    events: dict[str, ExogenousEventDef]
    adaptation_goals: tuple[Formula, ...] = ()
    const_types: dict[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if not self.const_types:
            table: dict[str, str] = {}
            for dt in self.datatypes.values():
                if dt.kind == "enumerated":
                    for c in dt.constants:
                        table[c] = dt.name
            object.__setattr__(self, "const_types", table)

    # vocabulary helpers
    def type_of_const(self, c: str) -> str:
        try:
            return self.const_types[c]
        except KeyError:
            raise UnknownName(f"unknown constant {c!r}") from None

    def dtype(self, name: str) -> DataType:
        return self.datatypes[name]

    def required(self, task: str) -> frozenset[str]:
        return frozenset(c for t, c in self.requires if t == task)

    def instances(self, term: str) -> Iterator[tuple[Value, ...]]:
        t = self.terms[term]
        doms = [self.datatypes[a].values() for a in t.arg_types]
        yield from product(*doms)

    def ground_instances(self, relevant_only: bool = False) -> Iterator[GroundInstance]:
        for t in self.terms.values():
            if relevant_only and not t.relevant:
                continue
            for args in self.instances(t.name):
                yield (t.name, *args)

    def relevant_instances(self) -> list[GroundInstance]:
        return list(self.ground_instances(relevant_only=True))

    def result_type(self, term: str) -> DataType:
        return self.datatypes[self.terms[term].result]

    def static_terms(self) -> frozenset[str]:
        """Terms never written by any task or exogenous event."""
        written = {e.target.name for t in self.tasks.values() for e in t.effects}
        written |= {e.target.name for ev in self.events.values() for e in ev.effects}
        return frozenset(n for n in self.terms if n not in written)


def capable(domain: DomainTheory, service: str, task: str) -> bool:
    """True iff service provides every capability the task requires."""
    if service not in domain.services:
        raise UnknownName(f"unknown service {service!r}")
    if task not in domain.tasks:
        raise UnknownName(f"unknown task {task!r}")
    need = domain.required(task)
    return all((service, c) in domain.provides for c in need)
