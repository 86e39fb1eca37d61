"""Tokenizer, parser, and validator for the four-block modeling language.

A model has up to four blocks, in order: ``parameters``, ``variables``, an
objective introduced by ``min`` or ``max``, and an optional ``st`` block of
constraints.  The grammar is newline-insensitive; `#` starts a line comment.
Strict ``<`` / ``>`` in constraints are accepted and treated as their
non-strict counterparts.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import (
    DuplicateName,
    LexError,
    MissingObjective,
    NonScalarObjective,
    ParseError,
    Span,
)
from .expr import DimEnv, Expr, Shape, canonicalize, infer_shape

BLOCK_KEYWORDS = ("parameters", "variables", "min", "max", "st")
TYPE_KEYWORDS = ("Matrix", "Vector", "Scalar")

_TWO_CHAR = {".*": "DOTSTAR", "./": "DOTSLASH", ".^": "DOTCARET",
             "==": "EQEQ", "<=": "LE", ">=": "GE"}
_ONE_CHAR = {"+": "PLUS", "-": "MINUS", "*": "STAR", "/": "SLASH",
             "^": "CARET", "'": "TICK", "(": "LPAREN", ")": "RPAREN",
             "<": "LT", ">": "GT"}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int
    pos: int
    value: float = None

    @property
    def span(self):
        return Span(self.line, self.col, self.pos, len(self.text))


def tokenize(text):
    """Split model text into a token list ending with an EOF token."""
    tokens = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        start, sline, scol = i, line, col
        two = text[i:i + 2]
        if two in _TWO_CHAR:
            tokens.append(Token(_TWO_CHAR[two], two, sline, scol, start))
            i += 2
            col += 2
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == ".":
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            lit = text[i:j]
            tokens.append(Token("NUMBER", lit, sline, scol, start,
                                value=float(lit)))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            kind = "KW" if word in BLOCK_KEYWORDS else "IDENT"
            tokens.append(Token(kind, word, sline, scol, start))
            col += j - i
            i = j
            continue
        if ch in _ONE_CHAR:
            tokens.append(Token(_ONE_CHAR[ch], ch, sline, scol, start))
            i += 1
            col += 1
            continue
        if ch == "=":
            raise LexError("'=' is not an operator; use '==' for equality",
                           Span(sline, scol, start))
        raise LexError(f"illegal character {ch!r}",
                       Span(sline, scol, start))
    tokens.append(Token("EOF", "", line, col, n))
    return tokens


@dataclass(frozen=True)
class ParamDecl:
    name: str
    kind: str
    symmetric: bool = False
    span: Span = None


@dataclass(frozen=True)
class VarDecl:
    name: str
    kind: str
    span: Span = None


@dataclass(frozen=True)
class Constraint:
    lhs: Expr
    relation: str  # "==", "<=", ">="
    rhs: Expr
    origin: Span = None


@dataclass(frozen=True)
class ProblemSpec:
    parameters: tuple
    variables: tuple
    sense: str
    objective: Expr
    constraints: tuple
    shapes: dict = None          # set by validate: name -> canonical Shape
    aux_names: frozenset = frozenset()  # epigraph variables added later
    aux_args: dict = None        # aux name -> the expression it majorizes

    @property
    def validated(self):
        return self.shapes is not None

    def declared_kind(self, name):
        for d in self.parameters:
            if d.name == name:
                return d.kind
        for d in self.variables:
            if d.name == name:
                return d.kind
        raise KeyError(name)


_MAX_DEPTH = 100


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0
        self.depth = 0

    def peek(self, ahead=0):
        j = min(self.i + ahead, len(self.tokens) - 1)
        return self.tokens[j]

    def advance(self):
        tok = self.tokens[self.i]
        if tok.kind != "EOF":
            self.i += 1
        return tok

    def expect(self, kind, what):
        tok = self.peek()
        if tok.kind != kind:
            raise ParseError(f"expected {what}, found {tok.text or 'end of input'!r}",
                             tok.span)
        return self.advance()

    # --- blocks ---

    def model(self):
        params = []
        variables = []
        if self.peek().kind == "KW" and self.peek().text == "parameters":
            self.advance()
            params = self.decls(allow_symmetric=True)
        if self.peek().kind == "KW" and self.peek().text == "variables":
            self.advance()
            variables = self.decls(allow_symmetric=False)
        tok = self.peek()
        if not (tok.kind == "KW" and tok.text in ("min", "max")):
            raise MissingObjective(
                f"expected 'min' or 'max', found {tok.text or 'end of input'!r}",
                tok.span)
        sense = self.advance().text
        objective = self.expr()
        constraints = []
        if self.peek().kind == "KW" and self.peek().text == "st":
            self.advance()
            constraints = self.constraints()
        tok = self.peek()
        if tok.kind != "EOF":
            raise ParseError(f"unexpected {tok.text!r} after the model",
                             tok.span)
        seen = {}
        for d in list(params) + list(variables):
            if d.name in seen:
                raise DuplicateName(f"{d.name!r} declared more than once",
                                    d.span)
            seen[d.name] = d
        return ProblemSpec(tuple(params), tuple(variables), sense, objective,
                           tuple(constraints))

    def decls(self, allow_symmetric):
        out = []
        while self.peek().kind == "IDENT" and self.peek().text in TYPE_KEYWORDS:
            kw = self.advance()
            name_tok = self.expect("IDENT", "a name")
            if name_tok.text in TYPE_KEYWORDS or name_tok.text == "symmetric":
                raise ParseError(f"{name_tok.text!r} cannot be used as a name",
                                 name_tok.span)
            symmetric = False
            nxt = self.peek()
            if nxt.kind == "IDENT" and nxt.text == "symmetric":
                if not allow_symmetric:
                    raise ParseError("'symmetric' is only allowed on "
                                     "parameter declarations", nxt.span)
                if kw.text != "Matrix":
                    raise ParseError("'symmetric' only applies to Matrix "
                                     "parameters", nxt.span)
                self.advance()
                symmetric = True
            if allow_symmetric:
                out.append(ParamDecl(name_tok.text, kw.text, symmetric,
                                     name_tok.span))
            else:
                out.append(VarDecl(name_tok.text, kw.text, name_tok.span))
        return out

    def constraints(self):
        out = []
        first = True
        while True:
            tok = self.peek()
            if tok.kind == "EOF":
                if first:
                    raise ParseError("expected at least one constraint after "
                                     "'st'", tok.span)
                break
            lhs = self.expr()
            rel = self.peek()
            if rel.kind not in ("EQEQ", "LE", "GE", "LT", "GT"):
                raise ParseError(
                    f"expected a relation ('==', '<=', '>='), found "
                    f"{rel.text or 'end of input'!r}", rel.span)
            self.advance()
            rhs = self.expr()
            nxt = self.peek()
            if nxt.kind in ("EQEQ", "LE", "GE", "LT", "GT"):
                raise ParseError("chained relations are not supported; write "
                                 "two constraints", nxt.span)
            relation = {"EQEQ": "==", "LE": "<=", "GE": ">=",
                        "LT": "<=", "GT": ">="}[rel.kind]
            out.append(Constraint(lhs, relation, rhs, rel.span))
            first = False
        return out

    # --- expressions ---
    # additive  :=  multiplicative (('+'|'-') multiplicative)*
    # multiplicative := unary (('*'|'/'|'.*'|'./') unary)*
    # unary     :=  '-' unary | postfix
    # postfix   :=  atom ("'" | ('^'|'.^') unary)*
    # atom      :=  NUMBER | IDENT | IDENT '(' additive ')' | '(' additive ')'

    def expr(self):
        node = self.mul_expr()
        while self.peek().kind in ("PLUS", "MINUS"):
            op_tok = self.advance()
            rhs = self.mul_expr()
            op = "add" if op_tok.kind == "PLUS" else "sub"
            node = Expr(op, (node, rhs), span=op_tok.span)
        return node

    def mul_expr(self):
        node = self.unary()
        ops = {"STAR": "mul", "SLASH": "div", "DOTSTAR": "emul",
               "DOTSLASH": "ediv"}
        while self.peek().kind in ops:
            op_tok = self.advance()
            rhs = self.unary()
            node = Expr(ops[op_tok.kind], (node, rhs), span=op_tok.span)
        return node

    def unary(self):
        minus = 0
        first = None
        while self.peek().kind == "MINUS":
            tok = self.advance()
            if first is None:
                first = tok
            minus += 1
        node = self.postfix()
        if minus:
            if node.op == "const" and minus:
                node = Expr("const", value=node.value * (-1.0) ** minus,
                            span=node.span)
            else:
                for _ in range(minus):
                    node = Expr("neg", (node,), span=first.span)
        return node

    def postfix(self):
        node = self.atom()
        while True:
            tok = self.peek()
            if tok.kind == "TICK":
                self.advance()
                node = Expr("transpose", (node,), span=tok.span)
            elif tok.kind in ("CARET", "DOTCARET"):
                self.advance()
                exponent = self.unary()
                op = "pow" if tok.kind == "CARET" else "epow"
                node = Expr(op, (node, exponent), span=tok.span)
            else:
                return node

    FUNCTIONS = ("log", "exp", "sin", "cos", "tanh", "abs", "norm1", "norm2",
                 "sum", "tr", "det", "inv")

    def atom(self):
        tok = self.peek()
        if tok.kind == "NUMBER":
            self.advance()
            return Expr("const", value=tok.value, span=tok.span)
        if tok.kind == "LPAREN":
            self.depth += 1
            if self.depth > _MAX_DEPTH:
                raise ParseError("expression nesting too deep", tok.span)
            self.advance()
            node = self.expr()
            self.expect("RPAREN", "')'")
            self.depth -= 1
            return node
        if tok.kind == "IDENT":
            self.advance()
            if tok.text == "vector":
                self.expect("LPAREN", "'(' after vector")
                arg = self.expr()
                self.expect("RPAREN", "')'")
                return Expr("bcast", (arg,), span=tok.span)
            if tok.text in self.FUNCTIONS:
                if self.peek().kind == "LPAREN":
                    self.advance()
                    arg = self.expr()
                    self.expect("RPAREN", "')'")
                    return Expr(tok.text, (arg,), span=tok.span)
                # a function name used as a plain identifier
            return Expr("var", name=tok.text, span=tok.span)
        raise ParseError(f"expected an expression, found "
                         f"{tok.text or 'end of input'!r}", tok.span)


def parse(tokens):
    """Parse a token stream into a ProblemSpec (names not yet resolved)."""
    return _Parser(list(tokens)).model()


def parse_model(text):
    return parse(tokenize(text))


def _declared_shape(name, kind):
    if kind == "Scalar":
        return Shape(1, 1)
    if kind == "Vector":
        return Shape(f"rows({name})", 1)
    return Shape(f"rows({name})", f"cols({name})")


def validate(spec):
    """Shape-check a parsed spec; returns an annotated copy.

    Every expression is re-annotated (leaf `var` nodes are classified as
    parameter or variable references), symbolic dimensions are unified
    across the objective and all constraints, and the objective is required
    to be scalar.  Mathematical validity beyond shapes is not checked.
    """
    decls = {}
    symmetric = set()
    for d in spec.parameters:
        decls[d.name] = _declared_shape(d.name, d.kind)
        if d.symmetric:
            symmetric.add(d.name)
    for d in spec.variables:
        decls[d.name] = _declared_shape(d.name, d.kind)

    param_names = {d.name for d in spec.parameters}

    def classify(e):
        # the grammar emits every reference as "var"; split by declaration
        new = {}
        from .expr import postorder
        for node in postorder(e):
            args = tuple(new[id(a)] for a in node.args)
            op = node.op
            if op == "var" and node.name in param_names:
                op = "param"
            new[id(node)] = Expr(op, args, value=node.value, name=node.name,
                                 span=node.span)
        return new[id(e)]

    dims = DimEnv()
    for shp in decls.values():
        for dname in (shp.rows, shp.cols):
            if isinstance(dname, str):
                dims.fresh(dname, anchored=True)

    objective, _ = infer_shape(classify(spec.objective), decls, dims,
                               symmetric)
    annotated_cons = []
    for con in spec.constraints:
        lhs, _ = infer_shape(classify(con.lhs), decls, dims, symmetric)
        rhs, _ = infer_shape(classify(con.rhs), decls, dims, symmetric)
        # relations are componentwise; a scalar side compares against every
        # component of the other side, so only two non-scalar sides unify
        if not (lhs.shape.is_scalar or rhs.shape.is_scalar):
            dims.unify(lhs.shape.rows, rhs.shape.rows,
                       context=f"'{con.relation}' constraint", span=con.origin)
            dims.unify(lhs.shape.cols, rhs.shape.cols,
                       context=f"'{con.relation}' constraint", span=con.origin)
        annotated_cons.append((lhs, rhs, con))

    objective = canonicalize(objective, dims)
    if not objective.shape.is_scalar:
        raise NonScalarObjective(
            f"objective must be scalar, got {objective.shape}",
            spec.objective.span)

    constraints = tuple(
        Constraint(canonicalize(lhs, dims), con.relation,
                   canonicalize(rhs, dims), con.origin)
        for lhs, rhs, con in annotated_cons)

    shapes = {name: Shape(dims.resolve(s.rows), dims.resolve(s.cols))
              for name, s in decls.items()}
    return replace(spec, objective=objective, constraints=constraints,
                   shapes=shapes)


# ---------------------------------------------------------------------------
# Pretty printing (structure-preserving: output reparses identically)
# ---------------------------------------------------------------------------

_LEVEL = {"add": 1, "sub": 1, "mul": 2, "div": 2, "emul": 2, "ediv": 2,
          "neg": 3, "pow": 4, "epow": 4, "transpose": 4}
_BINOP = {"add": "+", "sub": "-", "mul": "*", "div": "/", "emul": ".*",
          "ediv": "./"}


def format_expr(e, parent_level=0):
    op = e.op
    if op == "const":
        text = repr(e.value)
        if text.endswith(".0"):
            text = text[:-2]
        return text
    if op in ("param", "var"):
        return e.name
    if op == "bcast":
        return f"vector({format_expr(e.args[0])})"
    if op in ("log", "exp", "sin", "cos", "tanh", "abs", "norm1", "norm2",
              "sum", "tr", "det", "inv"):
        return f"{op}({format_expr(e.args[0])})"
    if op in _BINOP:
        lvl = _LEVEL[op]
        left = format_expr(e.args[0], lvl)
        right = format_expr(e.args[1], lvl + 1)
        text = f"{left} {_BINOP[op]} {right}"
        return f"({text})" if lvl < parent_level else text
    if op == "neg":
        text = f"-{format_expr(e.args[0], 4)}"
        return f"({text})" if parent_level > 3 else text
    if op == "transpose":
        return f"{format_expr(e.args[0], 5)}'"
    if op in ("pow", "epow"):
        sym = "^" if op == "pow" else ".^"
        base = format_expr(e.args[0], 5)
        exponent = format_expr(e.args[1], 5)
        text = f"{base} {sym} {exponent}"
        return f"({text})" if parent_level >= 5 else text
    raise ValueError(f"cannot print operator {op!r}")


def format_model(spec):
    """Render a ProblemSpec back to model text."""
    lines = []
    if spec.parameters:
        lines.append("parameters")
        for d in spec.parameters:
            sym = " symmetric" if d.symmetric else ""
            lines.append(f"    {d.kind} {d.name}{sym}")
    if spec.variables:
        lines.append("variables")
        for d in spec.variables:
            lines.append(f"    {d.kind} {d.name}")
    lines.append(spec.sense)
    lines.append(f"    {format_expr(spec.objective)}")
    if spec.constraints:
        lines.append("st")
        for con in spec.constraints:
            lines.append(f"    {format_expr(con.lhs)} {con.relation} "
                         f"{format_expr(con.rhs)}")
    return "\n".join(lines) + "\n"
