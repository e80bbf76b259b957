"""Exception hierarchy shared by every module."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int
    column: int
    length: int = 1

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.column}"


class ArtifactError(Exception):
    """Base class. Carries an optional source span for diagnostics."""

    def __init__(self, message: str, span: SourceSpan | None = None):
        super().__init__(message)
        self.message = message
        self.span = span

    def __str__(self) -> str:
        if self.span is None:
            return self.message
        return f"{self.span}: {self.message}"


class ParseError(ArtifactError):
    pass


class DslSyntaxError(ParseError):
    pass


class UnknownType(ParseError):
    pass


class UnknownConstant(ParseError):
    pass


class RecursiveComplexTerm(ParseError):
    pass


class ArityMismatch(ParseError):
    pass


class TypeMismatch(ParseError):
    pass


class UnboundVariable(ParseError):
    pass


class GatewayArityViolation(ParseError):
    pass


class UnknownTask(ParseError):
    pass


class DuplicateWorkItemId(ParseError):
    pass


class UnknownWorkItemId(ParseError):
    pass


class BadArity(ParseError):
    pass


class UnknownName(ArtifactError, NameError):
    pass


class IntegerOutOfBounds(ArtifactError):
    def __init__(self, term: str, value: int):
        super().__init__(f"value {value} out of bounds for {term}")
        self.term = term
        self.value = value


class IncompleteInit(ArtifactError):
    def __init__(self, missing: list[str]):
        shown = ", ".join(missing[:10])
        more = "" if len(missing) <= 10 else f" (+{len(missing) - 10} more)"
        super().__init__(f"initial state misses {len(missing)} ground instances: {shown}{more}")
        self.missing = missing


class UnsupportedFeature(ArtifactError):
    pass


class NegativePreconditionRejected(ArtifactError):
    pass


class MissingIntegerInit(ArtifactError):
    pass


class UnsupportedForTemplates(ArtifactError):
    pass


class UnknownAction(ParseError):
    pass
