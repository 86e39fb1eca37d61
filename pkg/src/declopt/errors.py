"""Exception hierarchy and source-position tracking."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Span:
    """Position of a token or construct inside the model source text."""

    line: int
    col: int
    pos: int
    length: int = 1

    def __str__(self):
        return f"line {self.line}, column {self.col}"


class DeclOptError(Exception):
    """Base class for all errors raised by this package."""


class ModelError(DeclOptError):
    """An error in user-supplied model text or data, with an optional span."""

    def __init__(self, message, span=None):
        self.span = span
        if span is not None:
            message = f"{message} (at {span})"
        super().__init__(message)


# --- lexing / parsing ---

class LexError(ModelError):
    pass


class ParseError(ModelError):
    pass


class DuplicateName(ParseError):
    pass


class MissingObjective(ParseError):
    pass


# --- shape checking ---

class UnknownName(ModelError):
    pass


class ShapeMismatch(ModelError):
    pass


class NonScalarObjective(ShapeMismatch):
    pass


# --- evaluation ---

class DimensionError(DeclOptError):
    """Bound data shapes conflict with each other or with declarations."""


class NumericError(DeclOptError):
    """A dense linear-algebra operation failed (e.g. inverting a singular matrix)."""


# --- differentiation ---

class NonSmoothNode(ModelError):
    """A non-differentiable operator reached the differentiator."""


class NonScalarSource(ModelError):
    pass


# --- reformulation / compilation ---

class NonConvexNonSmooth(ModelError):
    """A non-smooth operator sits in a position the epigraph rewrite cannot handle."""


class NonSmoothResidue(DeclOptError):
    """Internal guard: a non-smooth node survived the rewrite pass."""


class ShapeUnificationError(DeclOptError):
    pass


class CompileError(DeclOptError):
    pass


# --- data files ---

class FormatError(ModelError):
    pass


class NonNumericCell(FormatError):
    pass


class LineSearchError(DeclOptError):
    """Internal: the line search exhausted its trial budget."""
