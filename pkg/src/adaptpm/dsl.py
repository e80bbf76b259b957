"""Readers and writers for the on-disk formats.

* domain files: an XML dialect (see ``README.md``)
* process files: ``seq(...)``, ``par(...)``, ``xor(when f: ..., else: ...)``
  and ``task#id[inputs]->[expected]``
* scenario files: ``outcome``, ``exog`` and ``seed`` directives
* init files: ``term(args) = value`` lines
"""

from __future__ import annotations

import re
import xml.parsers.expat
from dataclasses import dataclass, field
from html import escape
from typing import Iterable

from .errors import (
    ArityMismatch,
    BadArity,
    DslSyntaxError,
    DuplicateWorkItemId,
    GatewayArityViolation,
    RecursiveComplexTerm,
    SourceSpan,
    TypeMismatch,
    UnknownConstant,
    UnknownTask,
    UnknownType,
    UnknownWorkItemId,
    UnsupportedFeature,
)
from .model import (
    And,
    BOOLEAN,
    BOOLEAN_TYPE,
    CAPABILITY,
    INTEGER,
    INTEGER_TYPE,
    PARTICIPANT,
    PRT,
    AtomicTerm,
    ComplexTerm,
    DataType,
    DomainTheory,
    ExogenousEventDef,
    Formula,
    GroundInstance,
    TaskDef,
    Value,
    WorkItem,
    format_formula,
    format_value,
    formula_calls,
)
from .syntax import Origin, parse_effect, parse_formula

BUILTIN_TYPES = (BOOLEAN, INTEGER, PARTICIPANT, CAPABILITY)


# ------------------------------------------------------------------ XML

@dataclass
class Node:
    tag: str
    attrs: dict[str, str]
    line: int
    column: int
    children: list["Node"] = field(default_factory=list)
    text: str = ""
    text_line: int = 0
    text_column: int = 0

    def span(self, file: str) -> SourceSpan:
        return SourceSpan(file, self.line, self.column, len(self.tag) + 1)

    def origin(self, file: str) -> Origin:
        if self.text_line:
            return Origin(file, self.text_line, self.text_column)
        return Origin(file, self.line, self.column)

    def find(self, tag: str) -> "Node | None":
        for c in self.children:
            if c.tag == tag:
                return c
        return None


def parse_xml(text: str, file: str = "<domain>") -> Node:
    parser = xml.parsers.expat.ParserCreate()
    stack: list[Node] = []
    root: list[Node] = []

    def start(tag, attrs):
        n = Node(tag, dict(attrs), parser.CurrentLineNumber, parser.CurrentColumnNumber + 1)
        if stack:
            stack[-1].children.append(n)
        else:
            root.append(n)
        stack.append(n)

    def end(tag):
        stack.pop()

    def chars(data):
        if not stack:
            return
        n = stack[-1]
        if not n.text_line:
            n.text_line = parser.CurrentLineNumber
            n.text_column = parser.CurrentColumnNumber + 1
        n.text += data

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    parser.CharacterDataHandler = chars
    try:
        parser.Parse(text, True)
    except xml.parsers.expat.ExpatError as exc:
        raise DslSyntaxError(
            f"malformed XML: {xml.parsers.expat.ErrorString(exc.code)}",
            SourceSpan(file, exc.lineno, exc.offset + 1),
        ) from None
    return root[0]


def _typed_args(nodes: Iterable[Node], file: str, types: dict[str, DataType]) -> tuple[tuple[str, str], ...]:
    out = []
    for a in nodes:
        if " - " not in a.text:
            raise DslSyntaxError("argument must read 'name - Type'", a.span(file))
        name, ty = (s.strip() for s in a.text.split(" - ", 1))
        if ty not in types:
            raise UnknownType(f"unknown type {ty!r}", a.span(file))
        if types[ty].kind != "enumerated":
            raise TypeMismatch(f"parameter {name} must have an enumerated type", a.span(file))
        out.append((name, ty))
    return tuple(out)


def parse_domain(text: str, file: str = "<domain>") -> DomainTheory:
    root = parse_xml(text, file)
    if root.tag != "domain":
        raise DslSyntaxError("root element must be <domain>", root.span(file))
    by_tag: dict[str, list[Node]] = {}
    for c in root.children:
        by_tag.setdefault(c.tag, []).append(c)
    known = {
        "datatype", "service", "capability", "provides", "requires", "term",
        "complex-term", "task", "ex-event", "adaptation-goal",
    }
    for c in root.children:
        if c.tag not in known:
            raise DslSyntaxError(f"unknown element <{c.tag}>", c.span(file))

    services = tuple(n.text.strip() for n in by_tag.get("service", []))
    capabilities = tuple(n.text.strip() for n in by_tag.get("capability", []))
    types: dict[str, DataType] = {BOOLEAN: BOOLEAN_TYPE, INTEGER: INTEGER_TYPE}
    if services:
        types[PARTICIPANT] = DataType(PARTICIPANT, "enumerated", constants=services)
    if capabilities:
        types[CAPABILITY] = DataType(CAPABILITY, "enumerated", constants=capabilities)
    owner: dict[str, str] = {}
    for tname, dt in list(types.items()):
        for c in dt.constants:
            if c in owner:
                raise DslSyntaxError(f"constant {c!r} declared twice")
            owner[c] = tname
    for n in by_tag.get("datatype", []):
        name = n.attrs.get("name", "")
        kind = n.attrs.get("kind", "enumerated")
        if not name or name in types:
            raise DslSyntaxError(f"bad or duplicate datatype name {name!r}", n.span(file))
        try:
            if kind == "integer":
                dt = DataType(name, "integer", int(n.attrs.get("lo", "0")), int(n.attrs.get("hi", "30")))
            elif kind == "enumerated":
                dt = DataType(name, "enumerated", constants=tuple(n.text.split()))
            else:
                raise ValueError(f"unknown datatype kind {kind!r}")
        except ValueError as exc:
            raise DslSyntaxError(str(exc), n.span(file)) from None
        for c in dt.constants:
            if c in owner or c in ("true", "false"):
                raise DslSyntaxError(f"constant {c!r} declared twice", n.span(file))
            owner[c] = name
        types[name] = dt

    provides = set()
    for n in by_tag.get("provides", []):
        s, c = n.attrs.get("service"), n.attrs.get("capability")
        if s not in services or c not in capabilities:
            raise UnknownConstant(f"provides({s},{c}) names an undeclared service or capability", n.span(file))
        provides.add((s, c))

    terms: dict[str, AtomicTerm] = {}
    for n in by_tag.get("term", []):
        name = n.attrs.get("name", "")
        args = tuple(a for a in n.attrs.get("args", "").replace(",", " ").split())
        result = n.attrs.get("result", "")
        for ty in (*args, result):
            if ty not in types:
                raise UnknownType(f"unknown type {ty!r}", n.span(file))
        for ty in args:
            if types[ty].kind != "enumerated":
                raise TypeMismatch(f"term {name}: argument types must be enumerated", n.span(file))
        if name in terms or name in owner:
            raise DslSyntaxError(f"duplicate name {name!r}", n.span(file))
        terms[name] = AtomicTerm(name, args, result, n.attrs.get("relevant", "false") == "true")

    # two passes over complex terms so bodies may reference each other
    ct_nodes = by_tag.get("complex-term", [])
    ct_params = {}
    for n in ct_nodes:
        name = n.attrs.get("name", "")
        if name in terms or name in ct_params:
            raise DslSyntaxError(f"duplicate name {name!r}", n.span(file))
        pnode = n.find("parameters")
        ct_params[name] = _typed_args(pnode.children if pnode else [], file, types)
    skeleton_cts = {k: ComplexTerm(k, p, parse_formula("", _skeleton(types, services, capabilities, provides, terms, {}))) for k, p in ct_params.items()}
    base = _skeleton(types, services, capabilities, provides, terms, skeleton_cts)
    complex_terms: dict[str, ComplexTerm] = {}
    for n in ct_nodes:
        name = n.attrs["name"]
        body_node = n.find("body")
        if body_node is None:
            raise DslSyntaxError(f"complex term {name} has no <body>", n.span(file))
        scope = dict(ct_params[name])
        body = parse_formula(body_node.text, base, scope, body_node.origin(file))
        complex_terms[name] = ComplexTerm(name, ct_params[name], body)
    _check_acyclic(complex_terms, {n.attrs["name"]: n.span(file) for n in ct_nodes})
    base = _skeleton(types, services, capabilities, provides, terms, complex_terms)

    tasks: dict[str, TaskDef] = {}
    for n in by_tag.get("task", []):
        t = _parse_task(n, file, base, types)
        if t.name in tasks:
            raise DslSyntaxError(f"duplicate task {t.name!r}", n.span(file))
        tasks[t.name] = t
    events: dict[str, ExogenousEventDef] = {}
    for n in by_tag.get("ex-event", []):
        ev = _parse_event(n, file, base, types)
        if ev.name in events:
            raise DslSyntaxError(f"duplicate exogenous event {ev.name!r}", n.span(file))
        events[ev.name] = ev

    requires = set()
    for n in by_tag.get("requires", []):
        t, c = n.attrs.get("task"), n.attrs.get("capability")
        if t not in tasks:
            raise UnknownTask(f"requires names unknown task {t!r}", n.span(file))
        if c not in capabilities:
            raise UnknownConstant(f"requires names unknown capability {c!r}", n.span(file))
        requires.add((t, c))

    goals = tuple(
        parse_formula(n.text, base, {}, n.origin(file)) for n in by_tag.get("adaptation-goal", [])
    )
    return DomainTheory(
        name=root.attrs.get("name", "domain"),
        datatypes=types,
        services=services,
        capabilities=capabilities,
        provides=frozenset(provides),
        requires=frozenset(requires),
        terms=terms,
        complex_terms=complex_terms,
        tasks=tasks,
        events=events,
        adaptation_goals=goals,
    )


def _skeleton(types, services, capabilities, provides, terms, cts) -> DomainTheory:
    return DomainTheory("skeleton", types, services, capabilities, frozenset(provides), frozenset(), terms, cts, {}, {})


def _check_acyclic(cts: dict[str, ComplexTerm], spans: dict[str, SourceSpan]) -> None:
    state: dict[str, int] = {}

    def visit(name: str, path: list[str]) -> None:
        if state.get(name) == 2:
            return
        if state.get(name) == 1:
            cycle = " -> ".join(path[path.index(name):] + [name])
            raise RecursiveComplexTerm(f"recursive complex term: {cycle}", spans.get(name))
        state[name] = 1
        for callee in formula_calls(cts[name].body):
            visit(callee, path + [name])
        state[name] = 2

    for name in cts:
        visit(name, [])


def _parse_task(n: Node, file: str, base: DomainTheory, types) -> TaskDef:
    name_node = n.find("name")
    if name_node is None:
        raise DslSyntaxError("<task> needs a <name>", n.span(file))
    name = name_node.text.strip()
    pnode = n.find("parameters")
    params = _typed_args(pnode.children if pnode else [], file, types)
    scope = dict(params)
    scope[PRT] = PARTICIPANT
    pre_node = n.find("precondition")
    pre = parse_formula(pre_node.text, base, scope, pre_node.origin(file)) if pre_node else parse_formula("", base)
    effects = []
    eff_node = n.find("effects")
    for e in eff_node.children if eff_node else []:
        if e.tag not in ("supposed", "automatic"):
            raise DslSyntaxError(f"unknown effect kind <{e.tag}>", e.span(file))
        eff = parse_effect(e.text, base, scope, e.tag, e.origin(file))
        if e.tag == "supposed":
            if eff.op != "=":
                raise DslSyntaxError("supposed effects must use '='", e.span(file))
            from .model import Const, Var

            if not isinstance(eff.expr, (Const, Var)):
                raise DslSyntaxError("a supposed effect must assign a parameter or a constant", e.span(file))
        effects.append(eff)
    return TaskDef(name, params, pre, tuple(effects))


def _parse_event(n: Node, file: str, base: DomainTheory, types) -> ExogenousEventDef:
    name_node = n.find("name")
    if name_node is None:
        raise DslSyntaxError("<ex-event> needs a <name>", n.span(file))
    if n.find("precondition") is not None:
        raise DslSyntaxError("exogenous events have no precondition", n.find("precondition").span(file))
    pnode = n.find("parameters")
    params = _typed_args(pnode.children if pnode else [], file, types)
    effects = []
    eff_node = n.find("effects")
    for e in eff_node.children if eff_node else []:
        if e.tag != "automatic":
            raise DslSyntaxError("exogenous events only have automatic effects", e.span(file))
        effects.append(parse_effect(e.text, base, dict(params), "automatic", e.origin(file)))
    return ExogenousEventDef(name_node.text.strip(), params, tuple(effects))


def write_domain(d: DomainTheory) -> str:
    """Serialize a domain so that ``parse_domain`` gives it back."""
    x = escape
    out = [f'<domain name="{x(d.name)}">']
    for dt in d.datatypes.values():
        if dt.name in BUILTIN_TYPES:
            if dt.name == INTEGER and (dt.lo, dt.hi) != (0, 30):
                raise ValueError("the builtin Integer_type is fixed to 0..30")
            continue
        if dt.kind == "integer":
            out.append(f'  <datatype name="{x(dt.name)}" kind="integer" lo="{dt.lo}" hi="{dt.hi}"/>')
        else:
            out.append(f'  <datatype name="{x(dt.name)}" kind="enumerated">{" ".join(dt.constants)}</datatype>')
    for s in d.services:
        out.append(f"  <service>{x(s)}</service>")
    for c in d.capabilities:
        out.append(f"  <capability>{x(c)}</capability>")
    for s, c in sorted(d.provides):
        out.append(f'  <provides service="{x(s)}" capability="{x(c)}"/>')
    for t in d.terms.values():
        rel = ' relevant="true"' if t.relevant else ""
        out.append(f'  <term name="{x(t.name)}" args="{" ".join(t.arg_types)}" result="{x(t.result)}"{rel}/>')
    for ct in d.complex_terms.values():
        out.append(f'  <complex-term name="{x(ct.name)}">')
        out.append("    <parameters>" + "".join(f"<arg>{n} - {ty}</arg>" for n, ty in ct.params) + "</parameters>")
        out.append(f"    <body>{x(format_formula(ct.body))}</body>")
        out.append("  </complex-term>")
    for t in d.tasks.values():
        out.append("  <task>")
        out.append(f"    <name>{x(t.name)}</name>")
        out.append("    <parameters>" + "".join(f"<arg>{n} - {ty}</arg>" for n, ty in t.params) + "</parameters>")
        if t.precondition != And(()):
            out.append(f"    <precondition>{x(format_formula(t.precondition))}</precondition>")
        out.append("    <effects>")
        for e in t.effects:
            out.append(f"      <{e.mode}>{x(e.text())}</{e.mode}>")
        out.append("    </effects>")
        out.append("  </task>")
    for ev in d.events.values():
        out.append("  <ex-event>")
        out.append(f"    <name>{x(ev.name)}</name>")
        out.append("    <parameters>" + "".join(f"<arg>{n} - {ty}</arg>" for n, ty in ev.params) + "</parameters>")
        out.append("    <effects>")
        for e in ev.effects:
            out.append(f"      <automatic>{x(e.text())}</automatic>")
        out.append("    </effects>")
        out.append("  </ex-event>")
    for t, c in sorted(d.requires):
        out.append(f'  <requires task="{x(t)}" capability="{x(c)}"/>')
    for g in d.adaptation_goals:
        out.append(f"  <adaptation-goal>{x(format_formula(g))}</adaptation-goal>")
    out.append("</domain>")
    return "\n".join(out) + "\n"


# ------------------------------------------------------------- values

def parse_value(text: str, type_name: str, domain: DomainTheory, span: SourceSpan | None = None) -> Value:
    dt = domain.datatypes[type_name]
    t = text.strip()
    if dt.kind == "boolean":
        if t not in ("true", "false"):
            raise TypeMismatch(f"expected true/false, got {t!r}", span)
        return t == "true"
    if dt.kind == "integer":
        try:
            v = int(t)
        except ValueError:
            raise TypeMismatch(f"expected an integer, got {t!r}", span) from None
        if not dt.contains(v):
            raise TypeMismatch(f"{v} outside {dt.name} {dt.lo}..{dt.hi}", span)
        return v
    if t not in dt.constants:
        if t in domain.const_types:
            raise TypeMismatch(f"{t!r} is not a {dt.name}", span)
        raise UnknownConstant(f"unknown constant {t!r}", span)
    return t


def supposed_types(domain: DomainTheory, task: TaskDef) -> list[str]:
    return [domain.terms[e.target.name].result for e in task.supposed]


# -------------------------------------------------------------- process

@dataclass(frozen=True)
class PNode:
    id: str
    kind: str  # start | end | task | ps | pj | xs | xj
    workitem: WorkItem | None = None


@dataclass
class ProcessGraph:
    nodes: dict[str, PNode]
    edges: list[tuple[str, str]]
    guards: dict[int, Formula | None] = field(default_factory=dict)  # xs out-edge -> guard (None = else)

    def out_edges(self, node: str) -> list[int]:
        return [i for i, (s, _) in enumerate(self.edges) if s == node]

    def in_edges(self, node: str) -> list[int]:
        return [i for i, (_, d) in enumerate(self.edges) if d == node]

    def task_nodes(self) -> list[PNode]:
        return [n for n in self.nodes.values() if n.kind == "task"]

    def workitems(self) -> dict[str, WorkItem]:
        return {n.id: n.workitem for n in self.nodes.values() if n.workitem is not None}


_ARITY = {
    "start": ((0, 0), (1, 1)),
    "end": ((1, 1), (0, 0)),
    "task": ((1, 1), (1, 1)),
    "ps": ((1, 1), (2, None)),
    "pj": ((2, None), (1, 1)),
    "xs": ((1, 1), (2, None)),
    "xj": ((2, None), (1, 1)),
}


def check_gateways(g: ProcessGraph) -> None:
    """Raise GatewayArityViolation unless every node meets its in/out rule."""
    ins = {n: 0 for n in g.nodes}
    outs = {n: 0 for n in g.nodes}
    for s, d in g.edges:
        outs[s] += 1
        ins[d] += 1
    for n in g.nodes.values():
        (ilo, ihi), (olo, ohi) = _ARITY[n.kind]
        for count, lo, hi, what in ((ins[n.id], ilo, ihi, "incoming"), (outs[n.id], olo, ohi, "outgoing")):
            if count < lo or (hi is not None and count > hi):
                raise GatewayArityViolation(f"node {n.id} ({n.kind}) has {count} {what} flows")
    for i, (s, _) in enumerate(g.edges):
        if g.nodes[s].kind == "xs" and i not in g.guards:
            raise GatewayArityViolation(f"exclusive split {s} has an unguarded flow")
    for xs in (n for n in g.nodes.values() if n.kind == "xs"):
        elses = [i for i in g.out_edges(xs.id) if g.guards.get(i) is None]
        if len(elses) != 1:
            raise GatewayArityViolation(f"exclusive split {xs.id} needs exactly one else flow")


@dataclass
class _Tree:
    kind: str  # seq | par | xor | task
    children: list = field(default_factory=list)
    guards: list = field(default_factory=list)
    workitem: WorkItem | None = None


_WS = re.compile(r"\s*")


class _ProcParser:
    def __init__(self, text: str, domain: DomainTheory, file: str):
        self.text, self.domain, self.file = text, domain, file
        self.pos = 0
        self.ids: set[str] = set()

    def span(self, pos: int | None = None) -> SourceSpan:
        return Origin(self.file).span(self.text, self.pos if pos is None else pos)

    def skip_ws(self) -> None:
        # '#' starts a comment only as the first non-blank character of a line
        while True:
            m = _WS.match(self.text, self.pos)
            self.pos = m.end()
            if self.text.startswith("#", self.pos):
                line_start = self.text.rfind("\n", 0, self.pos) + 1
                if not self.text[line_start:self.pos].strip():
                    nl = self.text.find("\n", self.pos)
                    self.pos = len(self.text) if nl < 0 else nl
                    continue
            return

    def peek_char(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, s: str) -> None:
        self.skip_ws()
        if not self.text.startswith(s, self.pos):
            found = self.text[self.pos:self.pos + 8] or "end of input"
            raise DslSyntaxError(f"expected {s!r} near {found!r}", self.span())
        self.pos += len(s)

    def ident(self) -> str:
        self.skip_ws()
        m = re.compile(r"[A-Za-z_][A-Za-z0-9_]*|\d+").match(self.text, self.pos)
        if not m:
            raise DslSyntaxError("expected an identifier", self.span())
        self.pos = m.end()
        return m.group()

    def node(self) -> _Tree:
        start = self.pos
        name = self.ident()
        if name in ("seq", "par", "xor") and self.peek_char() == "(":
            self.expect("(")
            if name == "xor":
                return self.xor(start)
            kids = []
            if self.peek_char() != ")":
                while True:
                    kids.append(self.node())
                    if self.peek_char() == ",":
                        self.expect(",")
                        continue
                    break
            self.expect(")")
            return _Tree(name, kids)
        return self.task(name, start)

    def xor(self, start: int) -> _Tree:
        tree = _Tree("xor")
        seen_else = False
        while True:
            self.skip_ws()
            kw_pos = self.pos
            kw = self.ident()
            if seen_else:
                raise GatewayArityViolation("else must be the last branch of xor", self.span(kw_pos))
            if kw == "when":
                ftext, fpos = self.until_colon()
                guard = parse_formula(ftext, self.domain, {}, _origin_at(self.file, self.text, fpos))
                tree.guards.append(guard)
            elif kw == "else":
                self.expect(":")
                tree.guards.append(None)
                seen_else = True
            else:
                raise DslSyntaxError("xor branches start with 'when' or 'else'", self.span(kw_pos))
            tree.children.append(self.node())
            if self.peek_char() == ",":
                self.expect(",")
                continue
            break
        self.expect(")")
        if not seen_else or len(tree.guards) < 2:
            raise GatewayArityViolation("xor needs at least one 'when' branch and a final 'else'", self.span(start))
        return tree

    def until_colon(self) -> tuple[str, int]:
        depth = 0
        begin = self.pos
        i = self.pos
        while i < len(self.text):
            ch = self.text[i]
            if ch in "([":
                depth += 1
            elif ch in ")]":
                depth -= 1
            elif ch == ":" and depth == 0:
                self.pos = i + 1
                return self.text[begin:i], begin
            i += 1
        raise DslSyntaxError("missing ':' after xor guard", self.span(begin))

    def values(self) -> list[tuple[str, int]]:
        self.expect("[")
        out: list[tuple[str, int]] = []
        if self.peek_char() == "]":
            self.expect("]")
            return out
        while True:
            self.skip_ws()
            p = self.pos
            out.append((self.ident(), p))
            if self.peek_char() == ",":
                self.expect(",")
                continue
            self.expect("]")
            return out

    def task(self, name: str, start: int) -> _Tree:
        self.expect("#")
        self.skip_ws()
        id_pos = self.pos
        wid = self.ident()
        ins = self.values()
        self.expect("->")
        outs = self.values()
        if name not in self.domain.tasks:
            raise UnknownTask(f"unknown task {name!r}", self.span(start))
        if wid in self.ids:
            raise DuplicateWorkItemId(f"duplicate workitem id {wid!r}", self.span(id_pos))
        self.ids.add(wid)
        t = self.domain.tasks[name]
        if len(ins) != len(t.params):
            raise ArityMismatch(f"{name} takes {len(t.params)} inputs, got {len(ins)}", self.span(start))
        otypes = supposed_types(self.domain, t)
        if len(outs) != len(otypes):
            raise ArityMismatch(f"{name} has {len(otypes)} expected outputs, got {len(outs)}", self.span(start))
        inputs = tuple(parse_value(v, ty, self.domain, self.span(p)) for (v, p), (_, ty) in zip(ins, t.params))
        expected = tuple(parse_value(v, ty, self.domain, self.span(p)) for (v, p), ty in zip(outs, otypes))
        return _Tree("task", workitem=WorkItem(name, wid, inputs, expected))


def _origin_at(file: str, text: str, pos: int) -> Origin:
    s = Origin(file).span(text, pos)
    return Origin(file, s.line, s.column)


def _normalize(t: _Tree) -> _Tree | None:
    if t.kind == "task":
        return t
    kids = [_normalize(c) for c in t.children]
    if t.kind == "seq":
        flat: list[_Tree] = []
        for k in kids:
            if k is None:
                continue
            flat.extend(k.children if k.kind == "seq" else [k])
        if not flat:
            return None
        return flat[0] if len(flat) == 1 else _Tree("seq", flat)
    if t.kind == "par":
        kids_nn = [k for k in kids if k is not None]
        if not kids_nn:
            return None
        if len(kids_nn) == 1:
            return kids_nn[0]
        return _Tree("par", kids_nn)
    return _Tree("xor", kids, t.guards)


class _Builder:
    def __init__(self) -> None:
        self.nodes: dict[str, PNode] = {}
        self.edges: list[tuple[str, str]] = []
        self.guards: dict[int, Formula | None] = {}
        self.counters = {"ps": 0, "pj": 0, "xs": 0, "xj": 0}

    def gateway(self, kind: str) -> str:
        self.counters[kind] += 1
        nid = f"{kind}{self.counters[kind]}"
        self.nodes[nid] = PNode(nid, kind)
        return nid

    def edge(self, s: str, d: str, guard: object = "none") -> None:
        self.edges.append((s, d))
        if guard != "none":
            self.guards[len(self.edges) - 1] = guard  # type: ignore[assignment]

    def build(self, t: _Tree | None, entry: str, guard: object = "none") -> str:
        """Wire ``t`` after ``entry``; return the node its flow leaves from."""
        if t is None:
            return entry
        if t.kind == "task":
            wi = t.workitem
            assert wi is not None
            self.nodes[wi.id] = PNode(wi.id, "task", wi)
            self.edge(entry, wi.id, guard)
            return wi.id
        if t.kind == "seq":
            cur = self.build(t.children[0], entry, guard)
            for c in t.children[1:]:
                cur = self.build(c, cur)
            return cur
        split_kind, join_kind = ("ps", "pj") if t.kind == "par" else ("xs", "xj")
        split = self.gateway(split_kind)
        self.edge(entry, split, guard)
        ends = []
        for i, c in enumerate(t.children):
            g = t.guards[i] if t.kind == "xor" else "none"
            if c is None:
                ends.append((split, g))
            else:
                ends.append((self.build(c, split, g), "none"))
        join = self.gateway(join_kind)
        for src, g in ends:
            self.edge(src, join, g)
        return join


def parse_process(text: str, domain: DomainTheory, file: str = "<process>") -> ProcessGraph:
    p = _ProcParser(text, domain, file)
    if not p.peek_char():
        raise DslSyntaxError("empty process file", p.span())
    tree = p.node()
    if p.peek_char():
        raise DslSyntaxError("trailing input after process", p.span())
    return build_graph(_normalize(tree))


def build_graph(tree: _Tree | None) -> ProcessGraph:
    b = _Builder()
    b.nodes["start"] = PNode("start", "start")
    last = b.build(tree, "start")
    b.nodes["end"] = PNode("end", "end")
    b.edge(last, "end")
    g = ProcessGraph(b.nodes, b.edges, b.guards)
    check_gateways(g)
    return g


def graph_from_workitems(items: list[WorkItem]) -> ProcessGraph:
    return build_graph(_normalize(_Tree("seq", [_Tree("task", workitem=w) for w in items])))


def graph_from_branches(branches: list[list[WorkItem]]) -> ProcessGraph:
    """Parallel composition of sequences (a single branch is a plain sequence)."""
    seqs = [_Tree("seq", [_Tree("task", workitem=w) for w in b]) for b in branches]
    return build_graph(_normalize(_Tree("par", seqs)))


def write_process(g: ProcessGraph) -> str:
    """Render a graph back into the process DSL.

    Raises UnsupportedFeature when the graph is not block structured.
    """
    written: list[str] = []

    def walk(node: str, stop: str | None) -> tuple[list[str], str]:
        parts: list[str] = []
        cur = node
        while cur != stop and g.nodes[cur].kind != "end":
            n = g.nodes[cur]
            if n.kind == "task":
                parts.append(n.workitem.text())  # type: ignore[union-attr]
                written.append(cur)
                cur = g.edges[g.out_edges(cur)[0]][1]
            elif n.kind in ("ps", "xs"):
                join = _matching_join(g, cur)
                branches = []
                for ei in g.out_edges(cur):
                    dst = g.edges[ei][1]
                    sub, _ = walk(dst, join) if dst != join else ([], join)
                    body = _seq_text(sub)
                    if n.kind == "xs":
                        guard = g.guards.get(ei)
                        body = f"else: {body}" if guard is None else f"when {format_formula(guard)}: {body}"
                    branches.append(body)
                parts.append(("par(" if n.kind == "ps" else "xor(") + ", ".join(branches) + ")")
                cur = g.edges[g.out_edges(join)[0]][1]
            elif n.kind == "start":
                cur = g.edges[g.out_edges(cur)[0]][1]
            else:
                break
        return parts, cur

    try:
        parts, _ = walk("start", None)
    except (IndexError, KeyError) as e:
        raise UnsupportedFeature("graph is not block structured and has no process DSL form") from e
    tasks = [n.id for n in g.task_nodes()]
    if sorted(written) != sorted(tasks):
        raise UnsupportedFeature("graph is not block structured and has no process DSL form")
    return _seq_text(parts) + "\n"


def _seq_text(parts: list[str]) -> str:
    if len(parts) == 1:
        return parts[0]
    return "seq(" + ", ".join(parts) + ")"


def _matching_join(g: ProcessGraph, split: str) -> str:
    kind = {"ps": "pj", "xs": "xj"}[g.nodes[split].kind]
    depth = 0
    # follow the first branch until the join at the same nesting depth
    cur = g.edges[g.out_edges(split)[0]][1]
    while True:
        n = g.nodes[cur]
        if n.kind in ("ps", "xs"):
            depth += 1
        elif n.kind in ("pj", "xj"):
            if depth == 0 and n.kind == kind:
                return cur
            depth -= 1
        cur = g.edges[g.out_edges(cur)[0]][1]


def render_dot(g: ProcessGraph, name: str = "process") -> str:
    shapes = {
        "start": 'shape=circle,label=""',
        "end": 'shape=doublecircle,label=""',
        "ps": 'shape=diamond,label="+"',
        "pj": 'shape=diamond,label="+"',
        "xs": 'shape=diamond,label="x"',
        "xj": 'shape=diamond,label="x"',
    }
    lines = [f'digraph "{name}" {{', "  rankdir=LR;"]
    for nid in sorted(g.nodes, key=_dot_order(g)):
        n = g.nodes[nid]
        if n.kind == "task":
            label = n.workitem.text().replace('"', '\\"')  # type: ignore[union-attr]
            lines.append(f'  "{nid}" [shape=box,label="{label}"];')
        else:
            lines.append(f'  "{nid}" [{shapes[n.kind]}];')
    for i, (s, d) in enumerate(g.edges):
        if i in g.guards:
            guard = g.guards[i]
            text = "else" if guard is None else format_formula(guard).replace('"', '\\"')
            lines.append(f'  "{s}" -> "{d}" [label="{text}"];')
        else:
            lines.append(f'  "{s}" -> "{d}";')
    lines.append("}")
    return "\n".join(lines) + "\n"


def _dot_order(g: ProcessGraph):
    order = {"start": 0, "end": 2}
    return lambda nid: (order.get(g.nodes[nid].kind, 1), nid)


# ------------------------------------------------------------- scenario

@dataclass(frozen=True)
class ExogDirective:
    step: int
    name: str
    args: tuple[Value, ...]


@dataclass(frozen=True)
class Scenario:
    outcomes: dict[str, tuple[Value, ...]] = field(default_factory=dict)
    exogenous: tuple[ExogDirective, ...] = ()
    seed: int | None = None


_OUTCOME = re.compile(r"^outcome\s+(\S+)\s*(.*)$")
_EXOG = re.compile(r"^exog\s+([A-Za-z_]\w*)\s*\(([^)]*)\)\s+at-step\s+(\d+)$")
_SEED = re.compile(r"^seed\s+(-?\d+)$")


def parse_scenario(
    text: str,
    process: ProcessGraph | None = None,
    domain: DomainTheory | None = None,
    file: str = "<scenario>",
) -> Scenario:
    outcomes: dict[str, tuple[Value, ...]] = {}
    exogs: list[ExogDirective] = []
    seed = None
    items = process.workitems() if process is not None else {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        span = SourceSpan(file, ln, len(raw) - len(raw.lstrip()) + 1, len(line))
        if m := _OUTCOME.match(line):
            wid, vals = m.group(1), [v.strip() for v in m.group(2).split(",") if v.strip()]
            if process is not None and wid not in items and not wid.startswith("id_adapt_"):
                raise UnknownWorkItemId(f"unknown workitem id {wid!r}", span)
            if wid in items and domain is not None:
                task = domain.tasks[items[wid].task]
                types = supposed_types(domain, task)
                if len(vals) != len(types):
                    raise BadArity(f"{wid} ({task.name}) has {len(types)} outputs, got {len(vals)}", span)
                outcomes[wid] = tuple(parse_value(v, t, domain, span) for v, t in zip(vals, types))
            else:
                outcomes[wid] = tuple(_literal(v) for v in vals)
        elif m := _EXOG.match(line):
            name = m.group(1)
            args = [a.strip() for a in m.group(2).split(",") if a.strip()]
            if domain is not None:
                if name not in domain.events:
                    raise UnknownConstant(f"unknown exogenous event {name!r}", span)
                ev = domain.events[name]
                if len(args) != len(ev.params):
                    raise BadArity(f"{name} takes {len(ev.params)} arguments, got {len(args)}", span)
                vals = tuple(parse_value(a, t, domain, span) for a, (_, t) in zip(args, ev.params))
            else:
                vals = tuple(_literal(a) for a in args)
            exogs.append(ExogDirective(int(m.group(3)), name, vals))
        elif m := _SEED.match(line):
            seed = int(m.group(1))
        else:
            raise DslSyntaxError(f"unrecognised directive {line!r}", span)
    exogs.sort(key=lambda d: d.step)
    return Scenario(outcomes, tuple(exogs), seed)


def _literal(v: str) -> Value:
    if v == "true":
        return True
    if v == "false":
        return False
    if re.fullmatch(r"-?\d+", v):
        return int(v)
    return v


def write_scenario(s: Scenario) -> str:
    lines = []
    if s.seed is not None:
        lines.append(f"seed {s.seed}")
    for wid, vals in s.outcomes.items():
        lines.append(f"outcome {wid} {','.join(format_value(v) for v in vals)}")
    for d in s.exogenous:
        lines.append(f"exog {d.name}({','.join(format_value(a) for a in d.args)}) at-step {d.step}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ init

@dataclass(frozen=True)
class InitSpec:
    values: dict[GroundInstance, Value]
    free: dict[str, bool]


_INIT = re.compile(r"^([A-Za-z_]\w*)\s*(?:\(([^)]*)\)|\[([^\]]*)\])?\s*=\s*(\S+)$")


def parse_init(text: str, domain: DomainTheory, file: str = "<init>") -> InitSpec:
    values: dict[GroundInstance, Value] = {}
    free: dict[str, bool] = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        span = SourceSpan(file, ln, 1, len(line))
        m = _INIT.match(line)
        if not m:
            raise DslSyntaxError(f"expected 'term(args) = value', got {line!r}", span)
        name = m.group(1)
        argtext = m.group(2) if m.group(2) is not None else (m.group(3) or "")
        args = [a.strip() for a in argtext.split(",") if a.strip()]
        if name == "free":
            if len(args) != 1 or args[0] not in domain.services:
                raise UnknownConstant(f"free() needs one declared service, got {args}", span)
            free[args[0]] = parse_value(m.group(4), BOOLEAN, domain, span)  # type: ignore[assignment]
            continue
        if name not in domain.terms:
            raise UnknownConstant(f"unknown term {name!r}", span)
        term = domain.terms[name]
        if len(args) != len(term.arg_types):
            raise ArityMismatch(f"{name} takes {len(term.arg_types)} arguments", span)
        key = (name, *(parse_value(a, t, domain, span) for a, t in zip(args, term.arg_types)))
        values[key] = parse_value(m.group(4), term.result, domain, span)
    return InitSpec(values, free)


def write_init(values: dict[GroundInstance, Value], free: dict[str, bool] | None = None, skip_false: bool = True) -> str:
    lines = []
    for key, v in values.items():
        if skip_false and v is False:
            continue
        name, *args = key
        lines.append(f"{name}({','.join(format_value(a) for a in args)}) = {format_value(v)}")
    for s, f in (free or {}).items():
        lines.append(f"free({s}) = {format_value(f)}")
    return "\n".join(lines) + "\n"
