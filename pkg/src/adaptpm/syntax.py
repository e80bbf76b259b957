"""Tokenizer and recursive-descent parser for formulas, expressions and effects.

A bare identifier resolves, in order, to a bound variable (task parameter,
quantified variable or ``PRT``), an enumerated constant, or a nullary term.
Bare boolean terms stand for ``term == true``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import (
    ArityMismatch,
    DslSyntaxError,
    SourceSpan,
    TypeMismatch,
    UnknownConstant,
    UnknownType,
)
from .model import (
    BOOLEAN,
    PROVIDES,
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
    TermRef,
    Truth,
    Var,
)

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|!=|<=|>=|\+=|-=|<|>|=|\+|-)
  | (?P<punct>[()\[\],.:])
    """,
    re.VERBOSE,
)

KEYWORDS = {"and", "or", "not", "exists", "forall", "true", "false"}
CMP_OPS = ("==", "!=", "<", ">", "<=", ">=")


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int


def tokenize(text: str, origin: "Origin | None" = None) -> list[Token]:
    out: list[Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            span = origin.span(text, pos) if origin else None
            raise DslSyntaxError(f"unexpected character {text[pos]!r}", span)
        kind = m.lastgroup or ""
        if kind != "ws":
            out.append(Token(kind, m.group(), pos))
        pos = m.end()
    out.append(Token("eof", "", len(text)))
    return out


@dataclass(frozen=True)
class Origin:
    """Where a fragment of text starts inside its source file."""

    file: str = "<string>"
    line: int = 1
    column: int = 1

    def span(self, text: str, pos: int, length: int = 1) -> SourceSpan:
        before = text[:pos]
        nl = before.count("\n")
        if nl == 0:
            return SourceSpan(self.file, self.line, self.column + pos, length)
        col = pos - before.rfind("\n")
        return SourceSpan(self.file, self.line + nl, col, length)


class _Parser:
    def __init__(self, text: str, domain: DomainTheory, scope: dict[str, str], origin: Origin | None):
        self.text = text
        self.domain = domain
        self.origin = origin or Origin()
        self.toks = tokenize(text, self.origin)
        self.i = 0
        self.scopes: list[dict[str, str]] = [dict(scope)]

    # -- token helpers
    def peek(self, k: int = 0) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def span(self, tok: Token) -> SourceSpan:
        return self.origin.span(self.text, tok.pos, max(1, len(tok.text)))

    def fail(self, msg: str, tok: Token | None = None, cls: type = DslSyntaxError):
        raise cls(msg, self.span(tok or self.peek()))

    def next(self) -> Token:
        t = self.peek()
        self.i += 1
        return t

    def accept(self, text: str) -> bool:
        t = self.peek()
        if t.kind != "eof" and (t.text == text or (t.kind == "ident" and t.text.lower() == text)):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        t = self.peek()
        if not self.accept(text):
            self.fail(f"expected {text!r} but found {t.text or 'end of input'!r}", t)
        return t

    def is_kw(self, tok: Token, kw: str) -> bool:
        return tok.kind == "ident" and tok.text.lower() == kw

    def lookup_var(self, name: str) -> str | None:
        for sc in reversed(self.scopes):
            if name in sc:
                return sc[name]
        return None

    def done(self) -> None:
        if self.peek().kind != "eof":
            self.fail(f"unexpected {self.peek().text!r}")

    # -- formulas
    def formula(self) -> Formula:
        items = [self.conj()]
        while self.is_kw(self.peek(), "or"):
            self.next()
            items.append(self.conj())
        return items[0] if len(items) == 1 else Or(tuple(_flatten(items, Or)))

    def conj(self) -> Formula:
        items = [self.unary()]
        while self.is_kw(self.peek(), "and"):
            self.next()
            items.append(self.unary())
        return items[0] if len(items) == 1 else And(tuple(_flatten(items, And)))

    def unary(self) -> Formula:
        t = self.peek()
        if self.is_kw(t, "not"):
            self.next()
            return Not(self.unary())
        if self.is_kw(t, "exists") or self.is_kw(t, "forall"):
            return self.quant()
        if t.text == "(":
            self.next()
            f = self.formula()
            self.expect(")")
            return f
        return self.atom()

    def quant(self) -> Formula:
        kind = self.next().text.lower()
        self.expect("(")
        variables: list[tuple[str, str]] = []
        while True:
            vt = self.next()
            if vt.kind != "ident" or vt.text.lower() in KEYWORDS:
                self.fail("expected a variable name", vt)
            self.expect(":")
            tt = self.next()
            if tt.text not in self.domain.datatypes:
                self.fail(f"unknown type {tt.text!r}", tt, UnknownType)
            variables.append((vt.text, tt.text))
            if not self.accept(","):
                break
        self.expect(")")
        self.accept(".")
        self.scopes.append(dict(variables))
        try:
            self.expect("(")
            body = self.formula()
            self.expect(")")
        finally:
            self.scopes.pop()
        return Quant(kind, tuple(variables), body)

    def atom(self) -> Formula:
        t = self.peek()
        if self.is_kw(t, "true") and not self._cmp_follows(1):
            self.next()
            return Truth(True)
        if self.is_kw(t, "false") and not self._cmp_follows(1):
            self.next()
            return Truth(False)
        left = self.expr()
        op_tok = self.peek()
        if op_tok.text in CMP_OPS or op_tok.text == "=":
            self.next()
            op = "==" if op_tok.text == "=" else op_tok.text
            right = self.expr()
            return self.make_cmp(left, op, right, op_tok)
        # bare boolean term or complex term
        if isinstance(left, _CallExpr):
            return left.call
        if isinstance(left, TermRef) and self.expr_type(left, t) == BOOLEAN:
            return Cmp(left, "==", Const(True))
        self.fail("expected a comparison", op_tok)
        raise AssertionError

    def _cmp_follows(self, k: int) -> bool:
        return self.peek(k).text in CMP_OPS or self.peek(k).text == "="

    def make_cmp(self, left, op: str, right, tok: Token) -> Formula:
        if isinstance(left, _CallExpr) or isinstance(right, _CallExpr):
            call, other = (left, right) if isinstance(left, _CallExpr) else (right, left)
            if not (isinstance(other, Const) and isinstance(other.value, bool)) or op not in ("==", "!="):
                self.fail("complex terms may only be compared with true/false", tok, TypeMismatch)
            positive = other.value == (op == "==")
            return call.call if positive else Not(call.call)
        lt = self.expr_type(left, tok)
        rt = self.expr_type(right, tok)
        if not self.compatible(lt, rt):
            self.fail(f"cannot compare {lt} with {rt}", tok, TypeMismatch)
        if op in ("<", ">", "<=", ">=") and not self.is_int(lt):
            self.fail(f"operator {op} needs integer operands", tok, TypeMismatch)
        return Cmp(left, op, right)

    # -- expressions
    def expr(self):
        left = self.primary()
        while self.peek().text in ("+", "-"):
            op_tok = self.next()
            right = self.primary()
            for side in (left, right):
                if isinstance(side, _CallExpr) or not self.is_int(self.expr_type(side, op_tok)):
                    self.fail("arithmetic needs integer operands", op_tok, TypeMismatch)
            left = Arith(op_tok.text, left, right)
        return left

    def primary(self):
        t = self.next()
        if t.kind == "int":
            return Const(int(t.text))
        if t.kind != "ident":
            self.fail(f"unexpected {t.text or 'end of input'!r}", t)
        low = t.text.lower()
        if low == "true":
            return Const(True)
        if low == "false":
            return Const(False)
        if self.peek().text in ("[", "("):
            close = "]" if self.next().text == "[" else ")"
            args: list = []
            if not self.accept(close):
                while True:
                    args.append(self.expr())
                    if self.accept(close):
                        break
                    self.expect(",")
            return self.application(t, tuple(args))
        vtype = self.lookup_var(t.text)
        if vtype is not None:
            return Var(t.text)
        if t.text in self.domain.const_types:
            return Const(t.text)
        if t.text in self.domain.terms or t.text in self.domain.complex_terms:
            return self.application(t, ())
        self.fail(f"unknown name {t.text!r}", t, UnknownConstant)

    def application(self, t: Token, args: tuple):
        name = t.text
        if name in self.domain.complex_terms:
            ct = self.domain.complex_terms[name]
            self.check_args(t, [ty for _, ty in ct.params], args)
            return _CallExpr(Call(name, args))
        if name == PROVIDES and name not in self.domain.terms:
            self.check_args(t, ["Participant", "Capability"], args)
            return TermRef(name, args)
        if name in self.domain.terms:
            term = self.domain.terms[name]
            self.check_args(t, list(term.arg_types), args)
            return TermRef(name, args)
        self.fail(f"unknown term {name!r}", t, UnknownConstant)

    def check_args(self, t: Token, types: list[str], args: tuple) -> None:
        if len(types) != len(args):
            self.fail(f"{t.text} expects {len(types)} arguments, got {len(args)}", t, ArityMismatch)
        for want, a in zip(types, args):
            if isinstance(a, _CallExpr):
                self.fail("complex terms cannot be arguments", t, TypeMismatch)
            got = self.expr_type(a, t)
            if not self.compatible(want, got):
                self.fail(f"argument of {t.text} should be {want}, got {got}", t, TypeMismatch)

    # -- typing
    def expr_type(self, e, tok: Token) -> str:
        if isinstance(e, Const):
            v = e.value
            if isinstance(v, bool):
                return BOOLEAN
            if isinstance(v, int):
                return "#int"
            return self.domain.const_types[v]
        if isinstance(e, Var):
            vt = self.lookup_var(e.name)
            assert vt is not None
            return vt
        if isinstance(e, TermRef):
            if e.name == PROVIDES and e.name not in self.domain.terms:
                return BOOLEAN
            return self.domain.terms[e.name].result
        if isinstance(e, Arith):
            return "#int"
        self.fail("complex term used as a value", tok, TypeMismatch)
        raise AssertionError

    def is_int(self, ty: str) -> bool:
        return ty == "#int" or (ty in self.domain.datatypes and self.domain.datatypes[ty].kind == "integer")

    def compatible(self, a: str, b: str) -> bool:
        if a == b:
            return True
        return self.is_int(a) and self.is_int(b)


@dataclass(frozen=True)
class _CallExpr:
    call: Call


def _flatten(items: list[Formula], cls: type) -> list[Formula]:
    out: list[Formula] = []
    for it in items:
        if isinstance(it, cls):
            out.extend(it.items)
        else:
            out.append(it)
    return out


def parse_formula(
    text: str,
    domain: DomainTheory,
    scope: dict[str, str] | None = None,
    origin: Origin | None = None,
) -> Formula:
    """Parse a closed formula. An empty text denotes the true formula."""
    if not text.strip():
        return And(())
    p = _Parser(text, domain, scope or {}, origin)
    f = p.formula()
    p.done()
    return f


def parse_expr(text: str, domain: DomainTheory, scope: dict[str, str] | None = None, origin: Origin | None = None) -> Expr:
    p = _Parser(text, domain, scope or {}, origin)
    e = p.expr()
    if isinstance(e, _CallExpr):
        p.fail("complex term used as a value", cls=TypeMismatch)
    p.done()
    return e


def parse_effect(
    text: str,
    domain: DomainTheory,
    scope: dict[str, str],
    mode: str,
    origin: Origin | None = None,
) -> Effect:
    p = _Parser(text, domain, scope, origin)
    first = p.peek()
    target = p.primary()
    if isinstance(target, _CallExpr):
        p.fail("complex terms cannot be assigned", first, TypeMismatch)
    if not isinstance(target, TermRef) or target.name not in domain.terms:
        p.fail("effect target must be an atomic term", first, TypeMismatch)
    op_tok = p.next()
    if op_tok.text not in ("=", "+=", "-=", "=="):
        p.fail("expected =, += or -=", op_tok)
    op = "=" if op_tok.text == "==" else op_tok.text
    expr = p.expr()
    if isinstance(expr, _CallExpr):
        p.fail("complex term used as a value", op_tok, TypeMismatch)
    p.done()
    ttype = domain.terms[target.name].result
    if op in ("+=", "-=") and not p.is_int(ttype):
        p.fail(f"{op} needs an integer-valued target, {target.name} is {ttype}", op_tok, ArityMismatch)
    etype = p.expr_type(expr, op_tok)
    if not p.compatible(ttype, etype):
        p.fail(f"cannot assign {etype} to {target.name} ({ttype})", op_tok, TypeMismatch)
    return Effect(target, op, expr, mode)
