"""Interpretations, formula evaluation, effect application and reality comparison."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Iterable, Iterator, Mapping

from .errors import IncompleteInit, IntegerOutOfBounds, TypeMismatch, UnboundVariable, UnknownName
from .model import (
    PROVIDES,
    PRT,
    And,
    Arith,
    Call,
    Cmp,
    Const,
    DomainTheory,
    Effect,
    ExogenousEventDef,
    Expr,
    Formula,
    GroundInstance,
    Not,
    Or,
    Quant,
    TaskDef,
    TermRef,
    Truth,
    Value,
    Var,
    format_value,
)


class _Unassigned:
    """Value of a functional term nobody initialised; fails every comparison."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "UNASSIGNED"

    def __reduce__(self):
        return (_Unassigned, ())


UNASSIGNED = _Unassigned()


def instance_text(inst: GroundInstance) -> str:
    name, *args = inst
    return f"{name}({','.join(format_value(a) for a in args)})"


class Interpretation(Mapping):
    """Immutable assignment of values to ground term instances.

    Keys are tuples ``(term, arg1, ..., argn)``.
    """

    __slots__ = ("domain", "_values", "_hash")

    def __init__(self, domain: DomainTheory, values: Mapping[GroundInstance, object]):
        self.domain = domain
        self._values = dict(values)
        self._hash: int | None = None

    # Mapping protocol
    def __getitem__(self, key: GroundInstance):
        return self._values[key]

    def __iter__(self) -> Iterator[GroundInstance]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Interpretation):
            return self._values == other._values
        return NotImplemented

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._values.items()))
        return self._hash

    def __repr__(self) -> str:
        return f"Interpretation({len(self._values)} instances)"

    def updated(self, changes: Mapping[GroundInstance, object]) -> "Interpretation":
        if not changes:
            return self
        vals = dict(self._values)
        vals.update(changes)
        return Interpretation(self.domain, vals)

    def restrict(self, keys: Iterable[GroundInstance]) -> "Interpretation":
        return Interpretation(self.domain, {k: self._values[k] for k in keys})

    def relevant_part(self) -> "Interpretation":
        return self.restrict(self.domain.relevant_instances())

    @classmethod
    def closed_world(
        cls,
        domain: DomainTheory,
        values: Mapping[GroundInstance, object],
        *,
        unassigned_ok: bool = False,
    ) -> "Interpretation":
        """Complete ``values``: missing booleans become false.

        Missing non-boolean instances raise IncompleteInit, or become
        UNASSIGNED when ``unassigned_ok`` is set.
        """
        out: dict[GroundInstance, object] = {}
        missing: list[str] = []
        for inst in domain.ground_instances():
            if inst in values:
                v = values[inst]
                dt = domain.result_type(inst[0])
                if not dt.contains(v):
                    raise TypeMismatch(f"value {v!r} is not a {dt.name} for {instance_text(inst)}")
                out[inst] = v
            elif domain.result_type(inst[0]).kind == "boolean":
                out[inst] = False
            elif unassigned_ok:
                out[inst] = UNASSIGNED
            else:
                missing.append(instance_text(inst))
        extra = [k for k in values if k not in out]
        if extra:
            raise UnknownName(f"unknown ground instance {instance_text(extra[0])}")
        if missing:
            raise IncompleteInit(missing)
        return cls(domain, out)


@dataclass(frozen=True)
class RealityPair:
    physical: Interpretation
    expected: Interpretation


# ------------------------------------------------------------- evaluation

def eval_expr(e: Expr, I: Mapping, bindings: Mapping[str, Value], domain: DomainTheory | None = None):
    dom = domain if domain is not None else I.domain  # type: ignore[attr-defined]
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return bindings[e.name]
        except KeyError:
            raise UnboundVariable(f"unbound variable {e.name!r}") from None
    if isinstance(e, TermRef):
        args = tuple(eval_expr(a, I, bindings, dom) for a in e.args)
        if any(a is UNASSIGNED for a in args):
            return UNASSIGNED
        if e.name == PROVIDES and PROVIDES not in dom.terms:
            return (args[0], args[1]) in dom.provides
        return I[(e.name, *args)]
    if isinstance(e, Arith):
        a = eval_expr(e.left, I, bindings, dom)
        b = eval_expr(e.right, I, bindings, dom)
        if a is UNASSIGNED or b is UNASSIGNED:
            return UNASSIGNED
        if not (_is_int(a) and _is_int(b)):
            raise TypeMismatch(f"arithmetic on non-integers {a!r}, {b!r}")
        return a + b if e.op == "+" else a - b
    raise TypeError(f"not an expression: {e!r}")


def _is_int(v: object) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def compare(op: str, a, b) -> bool:
    if a is UNASSIGNED or b is UNASSIGNED:
        return False
    if op == "==":
        return a == b and type(a) is type(b)
    if op == "!=":
        return not (a == b and type(a) is type(b))
    if not (_is_int(a) and _is_int(b)):
        raise TypeMismatch(f"operator {op} on non-integers {a!r}, {b!r}")
    if op == "<":
        return a < b
    if op == ">":
        return a > b
    if op == "<=":
        return a <= b
    if op == ">=":
        return a >= b
    raise ValueError(op)


def eval_formula(f: Formula, I: Mapping, bindings: Mapping[str, Value] | None = None, domain: DomainTheory | None = None) -> bool:
    """Finite-model truth of ``f``. Quantifiers range over the declared constants."""
    dom = domain if domain is not None else I.domain  # type: ignore[attr-defined]
    b = bindings or {}
    if isinstance(f, Cmp):
        return compare(f.op, eval_expr(f.left, I, b, dom), eval_expr(f.right, I, b, dom))
    if isinstance(f, And):
        return all(eval_formula(i, I, b, dom) for i in f.items)
    if isinstance(f, Or):
        return any(eval_formula(i, I, b, dom) for i in f.items)
    if isinstance(f, Not):
        return not eval_formula(f.item, I, b, dom)
    if isinstance(f, Truth):
        return f.value
    if isinstance(f, Quant):
        names = [n for n, _ in f.variables]
        doms = [dom.datatypes[t].values() for _, t in f.variables]
        test = any if f.kind == "exists" else all
        return test(
            eval_formula(f.body, I, {**b, **dict(zip(names, combo))}, dom) for combo in product(*doms)
        )
    if isinstance(f, Call):
        ct = dom.complex_terms[f.name]
        args = [eval_expr(a, I, b, dom) for a in f.args]
        if any(a is UNASSIGNED for a in args):
            return False
        return eval_formula(ct.body, I, {n: v for (n, _), v in zip(ct.params, args)}, dom)
    raise TypeError(f"not a formula: {f!r}")


# ------------------------------------------------------------- effects

def task_bindings(task: TaskDef | ExogenousEventDef, inputs, service: str | None) -> dict[str, Value]:
    if len(inputs) != len(task.params):
        raise TypeMismatch(f"{task.name} expects {len(task.params)} inputs, got {len(inputs)}")
    b: dict[str, Value] = {n: v for (n, _), v in zip(task.params, inputs)}
    if service is not None:
        b[PRT] = service
    return b


def _ground_target(e: Effect, I: Mapping, b: Mapping[str, Value], dom: DomainTheory) -> GroundInstance:
    return (e.target.name, *(eval_expr(a, I, b, dom) for a in e.target.args))


def _new_value(e: Effect, inst: GroundInstance, current, rhs, dom: DomainTheory):
    if e.op == "=":
        v = rhs
    elif current is UNASSIGNED or rhs is UNASSIGNED:
        raise TypeMismatch(f"{e.op} on {instance_text(inst)}, which has no value")
    else:
        v = current + rhs if e.op == "+=" else current - rhs
    dt = dom.result_type(inst[0])
    if dt.kind == "integer" and _is_int(v) and not dt.lo <= v <= dt.hi:
        raise IntegerOutOfBounds(instance_text(inst), v)
    if not dt.contains(v):
        raise TypeMismatch(f"value {v!r} is not a {dt.name} for {instance_text(inst)}")
    return v


class _Overlay(Mapping):
    """Read view of ``top`` falling back to ``base`` for missing keys."""

    def __init__(self, top: Mapping, base: Mapping | None, domain: DomainTheory):
        self.top, self.base, self.domain = top, base, domain

    def __getitem__(self, k):
        if k in self.top:
            return self.top[k]
        if self.base is None:
            raise KeyError(k)
        return self.base[k]

    def __iter__(self):
        return iter(self.top)

    def __len__(self):
        return len(self.top)


def apply_effects(
    I: Interpretation,
    task: TaskDef,
    inputs,
    physical_outputs,
    automatic_too: bool = True,
    service: str | None = None,
) -> Interpretation:
    """Physical update at task completion.

    Supposed effects take the reported outputs in declaration order; automatic
    effects are evaluated in list order, each seeing the earlier updates.
    """
    dom = I.domain
    sup = task.supposed
    if len(physical_outputs) != len(sup):
        raise TypeMismatch(f"{task.name} has {len(sup)} supposed effects, got {len(physical_outputs)} outputs")
    b = task_bindings(task, inputs, service)
    changes: dict[GroundInstance, object] = {}
    view = _Overlay(changes, I, dom)
    outs = iter(physical_outputs)
    for e in task.effects:
        if e.mode == "supposed":
            inst = _ground_target(e, view, b, dom)
            changes[inst] = _new_value(e, inst, None, next(outs), dom)
        elif automatic_too:
            inst = _ground_target(e, view, b, dom)
            changes[inst] = _new_value(e, inst, view[inst], eval_expr(e.expr, view, b, dom), dom)
    return I.updated(changes)


def apply_expected(
    psi: Interpretation,
    task: TaskDef,
    inputs,
    expected_outputs,
    service: str | None = None,
    physical: Mapping | None = None,
) -> Interpretation:
    """Expected update: the task is assumed to succeed.

    Only instances present in ``psi`` change. Reads of non-relevant terms fall
    back to ``physical`` when given.
    """
    dom = psi.domain
    sup = task.supposed
    if len(expected_outputs) != len(sup):
        raise TypeMismatch(f"{task.name} has {len(sup)} supposed effects, got {len(expected_outputs)} outputs")
    b = task_bindings(task, inputs, service)
    changes: dict[GroundInstance, object] = {}
    view = _Overlay(changes, _Overlay(psi, physical, dom), dom)
    outs = iter(expected_outputs)
    for e in task.effects:
        rel = dom.terms[e.target.name].relevant
        if e.mode == "supposed":
            v = next(outs)
            if rel:
                inst = _ground_target(e, view, b, dom)
                changes[inst] = _new_value(e, inst, None, v, dom)
        elif rel:
            inst = _ground_target(e, view, b, dom)
            changes[inst] = _new_value(e, inst, view[inst], eval_expr(e.expr, view, b, dom), dom)
    return psi.updated({k: v for k, v in changes.items() if k in psi})


def apply_exogenous(phi: Interpretation, ev: ExogenousEventDef, args) -> Interpretation:
    dom = phi.domain
    b = task_bindings(ev, args, None)
    for (n, t), v in zip(ev.params, args):
        if not dom.datatypes[t].contains(v):
            raise TypeMismatch(f"{ev.name}: {v!r} is not a {t}")
    changes: dict[GroundInstance, object] = {}
    view = _Overlay(changes, phi, dom)
    for e in ev.effects:
        inst = _ground_target(e, view, b, dom)
        changes[inst] = _new_value(e, inst, view[inst], eval_expr(e.expr, view, b, dom), dom)
    return phi.updated(changes)


def same_state(pair: RealityPair) -> bool:
    phys = pair.physical
    return all(phys[k] == v and type(phys[k]) is type(v) for k, v in pair.expected.items())


def deviations(pair: RealityPair) -> list[tuple[GroundInstance, object, object]]:
    phys = pair.physical
    return [(k, phys[k], v) for k, v in pair.expected.items() if not (phys[k] == v and type(phys[k]) is type(v))]
