"""Expression IR: shapes, immutable trees, and the dense numeric evaluator.

Every value is a dense 64-bit float scalar, vector, or matrix.  Internally a
shape is a (rows, cols) pair where each dimension is either a concrete
positive integer or a symbolic name; scalars are (1, 1) and column vectors
are (n, 1), so a transposed vector is simply a (1, n) matrix and one matrix
product rule covers inner products, outer products, and matrix-vector
products alike.

Symbolic dimensions are unified while shapes are inferred and resolved to
concrete sizes only when data is bound.  Unification failure is always an
error; there is no silent broadcasting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    NumericError,
    ShapeMismatch,
    UnknownName,
)


@dataclass(frozen=True)
class Shape:
    """(rows, cols) where each is a concrete int or a symbolic name."""

    rows: object
    cols: object

    @property
    def kind(self):
        if self.rows == 1 and self.cols == 1:
            return "Scalar"
        if self.cols == 1:
            return "Vector"
        if self.rows == 1:
            return "RowVector"
        return "Matrix"

    @property
    def is_scalar(self):
        return self.rows == 1 and self.cols == 1

    @property
    def is_vector_like(self):
        return self.rows == 1 or self.cols == 1

    def transposed(self):
        return Shape(self.cols, self.rows)

    def __str__(self):
        if self.is_scalar:
            return "Scalar"
        if self.cols == 1:
            return f"Vector({self.rows})"
        return f"Matrix({self.rows}, {self.cols})"


SCALAR = Shape(1, 1)


# Operator tags.  The surface language exposes everything except "bcast" with
# cols > 1, "eye", which only appear in generated gradient expressions.
ELEMENTWISE_UNARY = ("log", "exp", "sin", "cos", "tanh", "abs")
NONSMOOTH_OPS = ("abs", "norm1")


@dataclass(frozen=True, eq=False)
class Expr:
    """One node of an expression tree.  Immutable; hashed by identity."""

    op: str
    args: tuple = ()
    value: float = None
    name: str = None
    shape: Shape = None
    span: object = None
    symmetric: bool = False

    def __repr__(self):
        if self.op == "const":
            return f"const({self.value})"
        if self.op in ("param", "var"):
            return f"{self.op}({self.name})"
        return f"{self.op}({', '.join(repr(a) for a in self.args)})"


def walk(e):
    """Yield every node of the tree once (shared subtrees visited once)."""
    seen = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        yield node
        stack.extend(node.args)


def postorder(root):
    """Children-before-parents order over the DAG, each node once."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, ready = stack.pop()
        if ready:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for a in node.args:
            if id(a) not in seen:
                stack.append((a, False))
    return order


def contains_op(e, ops):
    for node in walk(e):
        if node.op in ops:
            return node
    return None


def structurally_equal(a, b):
    """Deep equality of two trees (shapes ignored)."""
    stack = [(a, b)]
    while stack:
        x, y = stack.pop()
        if x.op != y.op or x.name != y.name or len(x.args) != len(y.args):
            return False
        if x.op == "const" and x.value != y.value:
            return False
        stack.extend(zip(x.args, y.args))
    return True


# ---------------------------------------------------------------------------
# Symbolic dimension unification
# ---------------------------------------------------------------------------

class DimEnv:
    """Union-find over symbolic dimension names.

    A class is *anchored* once it contains a dimension that originates from a
    parameter or variable declaration (or a concrete value); only anchored
    dimensions can be resolved when data is bound.
    """

    def __init__(self):
        self._parent = {}
        self._value = {}    # root -> concrete int
        self._anchor = {}   # root -> earliest anchored member name, or None
        self._order = {}    # name -> registration index

    def fresh(self, name, anchored):
        if name in self._parent:
            raise ValueError(f"dimension {name!r} registered twice")
        self._parent[name] = name
        self._order[name] = len(self._order)
        self._anchor[name] = name if anchored else None

    def _find(self, name):
        root = name
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[name] != root:
            self._parent[name], name = root, self._parent[name]
        return root

    def unify(self, a, b, context="", span=None):
        if isinstance(a, int) and isinstance(b, int):
            if a != b:
                raise ShapeMismatch(
                    f"dimension mismatch in {context}: {a} vs {b}", span)
            return
        if isinstance(a, int):
            a, b = b, a
        ra = self._find(a)
        if isinstance(b, int):
            have = self._value.get(ra)
            if have is not None and have != b:
                raise ShapeMismatch(
                    f"dimension mismatch in {context}: {a} is both "
                    f"{have} and {b}", span)
            self._value[ra] = b
            return
        rb = self._find(b)
        if ra == rb:
            return
        va, vb = self._value.get(ra), self._value.get(rb)
        if va is not None and vb is not None and va != vb:
            raise ShapeMismatch(
                f"dimension mismatch in {context}: {va} vs {vb}", span)
        # attach the younger root under the older one
        if self._order[ra] > self._order[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        if va is None and vb is not None:
            self._value[ra] = vb
        aa, ab = self._anchor[ra], self._anchor[rb]
        if aa is None:
            self._anchor[ra] = ab
        elif ab is not None and self._order[ab] < self._order[aa]:
            self._anchor[ra] = ab

    def resolve(self, d):
        """Canonical form of a dimension: concrete int, or anchor name."""
        if isinstance(d, int):
            return d
        root = self._find(d)
        v = self._value.get(root)
        if v is not None:
            return v
        return self._anchor[root]  # None when the class is unanchored


# ---------------------------------------------------------------------------
# Shape rules (shared between inference and annotated construction)
# ---------------------------------------------------------------------------

def _op_shape(op, node, shapes, unify):
    """Result shape of `op` applied to children with `shapes`.

    `unify(a, b)` either records a constraint (inference) or asserts equality
    (annotated construction).
    """
    if op in ("add", "sub", "emul", "ediv"):
        a, b = shapes
        unify(a.rows, b.rows)
        unify(a.cols, b.cols)
        return a
    if op == "mul":
        a, b = shapes
        if a.is_scalar:
            return b
        if b.is_scalar:
            return a
        unify(a.cols, b.rows)
        return Shape(a.rows, b.cols)
    if op == "div":
        a, b = shapes
        if not b.is_scalar:
            raise ShapeMismatch(
                "'/' requires a scalar divisor; use './' for elementwise "
                "division", node.span)
        return a
    if op == "pow":
        a, b = shapes
        if not b.is_scalar:
            raise ShapeMismatch("'^' requires a scalar exponent", node.span)
        if not a.is_scalar:
            raise ShapeMismatch(
                "matrix power is not supported; use '.^' for elementwise "
                "power", node.span)
        return SCALAR
    if op == "epow":
        a, b = shapes
        if not b.is_scalar:
            raise ShapeMismatch("'.^' requires a scalar exponent", node.span)
        return a
    if op == "neg" or op in ELEMENTWISE_UNARY:
        return shapes[0]
    if op == "norm1":
        a = shapes[0]
        if not a.is_vector_like:
            raise ShapeMismatch("norm1 expects a vector", node.span)
        return SCALAR
    if op in ("norm2", "sum"):
        return SCALAR
    if op in ("tr", "det"):
        a = shapes[0]
        unify(a.rows, a.cols)
        return SCALAR
    if op == "inv":
        a = shapes[0]
        unify(a.rows, a.cols)
        return a
    if op == "transpose":
        return shapes[0].transposed()
    if op == "bcast":
        a = shapes[0]
        if not a.is_scalar:
            raise ShapeMismatch("vector(...) expects a scalar argument",
                                node.span)
        return node.shape  # preset with a fresh dimension
    if op == "eye":
        return node.shape
    raise ValueError(f"unknown operator {op!r}")


_BCAST_COUNTER = [0]


def infer_shape(e, decls, dims=None, symmetric=frozenset()):
    """Annotate every node of `e` with a shape, unifying symbolic dims.

    `decls` maps declared names to shapes whose symbolic dimensions have been
    registered in `dims`.  Returns the annotated tree; pass the same DimEnv
    across several expressions to unify dimensions between them.  Use
    `canonicalize` afterwards to rewrite dimensions to their representatives.
    """
    if dims is None:
        dims = DimEnv()
        for shp in decls.values():
            for d in (shp.rows, shp.cols):
                if isinstance(d, str) and d not in dims._parent:
                    dims.fresh(d, anchored=True)

    def build(node, args):
        if node.op == "const":
            return Expr("const", value=node.value, shape=SCALAR,
                        span=node.span)
        if node.op in ("param", "var"):
            if node.name not in decls:
                raise UnknownName(f"unknown name {node.name!r}", node.span)
            return Expr(node.op, name=node.name, shape=decls[node.name],
                        span=node.span, symmetric=node.name in symmetric)
        if node.op == "bcast" and node.shape is None:
            _BCAST_COUNTER[0] += 1
            d = f"?broadcast{_BCAST_COUNTER[0]}"
            dims.fresh(d, anchored=False)
            fixed = Expr("bcast", tuple(args), shape=Shape(d, 1),
                         span=node.span)
            return fixed
        shaped = Expr(node.op, tuple(args), value=node.value, name=node.name,
                      shape=node.shape, span=node.span,
                      symmetric=node.symmetric)
        unify = lambda a, b: dims.unify(a, b, context=node.op, span=node.span)
        shape = _op_shape(node.op, shaped, [a.shape for a in args], unify)
        return Expr(node.op, tuple(args), value=node.value, name=node.name,
                    shape=shape, span=node.span, symmetric=node.symmetric)

    new = {}
    for node in postorder(e):
        new[id(node)] = build(node, [new[id(a)] for a in node.args])
    return new[id(e)], dims


def canonicalize(e, dims):
    """Rewrite every dimension in `e` to its canonical representative.

    Raises ShapeMismatch for broadcast dimensions that no consuming context
    determined (they would be unresolvable at data-bind time).
    """
    def canon_shape(node):
        shp = node.shape
        r, c = dims.resolve(shp.rows), dims.resolve(shp.cols)
        if r is None or c is None:
            raise ShapeMismatch(
                "cannot infer the dimension of vector(...) from its context",
                node.span)
        return Shape(r, c)

    new = {}
    for node in postorder(e):
        args = tuple(new[id(a)] for a in node.args)
        new[id(node)] = Expr(node.op, args, value=node.value, name=node.name,
                             shape=canon_shape(node), span=node.span,
                             symmetric=node.symmetric)
    return new[id(e)]


# ---------------------------------------------------------------------------
# Environments and evaluation
# ---------------------------------------------------------------------------

class Env:
    """Bindings from declared names to dense float64 values."""

    def __init__(self, values=None, symmetric=()):
        self._values = {}
        self.symmetric = frozenset(symmetric)
        if values:
            for name, v in values.items():
                self._values[name] = _coerce(v)

    def bind(self, name, value):
        """Return a new Env with one binding added or replaced."""
        out = Env.__new__(Env)
        out._values = dict(self._values)
        out.symmetric = self.symmetric
        out._values[name] = _coerce(value)
        return out

    def merged(self, other_values):
        out = Env.__new__(Env)
        out._values = dict(self._values)
        out.symmetric = self.symmetric
        for name, v in other_values.items():
            out._values[name] = _coerce(v)
        return out

    def __contains__(self, name):
        return name in self._values

    def value(self, name):
        try:
            return self._values[name]
        except KeyError:
            raise UnknownName(f"no value bound for {name!r}") from None

    def names(self):
        return self._values.keys()


def _coerce(v):
    if np.isscalar(v) or isinstance(v, (int, float)):
        return float(v)
    a = np.asarray(v, dtype=np.float64)
    if a.ndim == 0:
        return float(a)
    if a.ndim > 2:
        raise DimensionError(f"values must have at most 2 axes, got {a.ndim}")
    return a


def _as_column(v):
    """Internal 2-D form: scalars are (1, 1), vectors are (n, 1)."""
    if isinstance(v, float):
        return np.array([[v]])
    if v.ndim == 1:
        return v.reshape(-1, 1)
    return v


def _concrete_dims(v):
    if isinstance(v, float):
        return (1, 1)
    if v.ndim == 1:
        return (v.shape[0], 1)
    return v.shape


def bind_dims(exprs, env, binds=None, skip_missing=False):
    """Bind the symbolic dims appearing in `exprs` to env value sizes."""
    if binds is None:
        binds = {}

    def bind_one(d, c, name):
        if isinstance(d, int):
            if d != c:
                raise DimensionError(
                    f"{name!r} has size {c} where {d} is required")
        else:
            have = binds.get(d)
            if have is None:
                binds[d] = c
            elif have != c:
                raise DimensionError(
                    f"conflicting sizes for dimension {d!r}: "
                    f"{have} vs {c} (from {name!r})")

    for e in exprs:
        for node in walk(e):
            if node.op in ("param", "var"):
                if skip_missing and node.name not in env:
                    continue
                r, c = _concrete_dims(env.value(node.name))
                bind_one(node.shape.rows, r, node.name)
                bind_one(node.shape.cols, c, node.name)
    return binds


def resolve_shape(shape, binds):
    def res(d):
        if isinstance(d, int):
            return d
        try:
            return binds[d]
        except KeyError:
            raise DimensionError(f"dimension {d!r} is not determined by the "
                                 "bound data") from None
    return (res(shape.rows), res(shape.cols))


def _apply(node, vals, env, binds):
    op = node.op
    if op == "add":
        return vals[0] + vals[1]
    if op == "sub":
        return vals[0] - vals[1]
    if op == "mul":
        a, b = vals
        if a.shape == (1, 1) or b.shape == (1, 1):
            return a * b
        return a @ b
    if op == "emul":
        return vals[0] * vals[1]
    if op in ("div", "ediv"):
        return vals[0] / vals[1]
    if op in ("pow", "epow"):
        return vals[0] ** vals[1]
    if op == "neg":
        return -vals[0]
    if op == "log":
        return np.log(vals[0])
    if op == "exp":
        return np.exp(vals[0])
    if op == "sin":
        return np.sin(vals[0])
    if op == "cos":
        return np.cos(vals[0])
    if op == "tanh":
        return np.tanh(vals[0])
    if op == "abs":
        return np.abs(vals[0])
    if op == "norm1":
        return np.array([[np.abs(vals[0]).sum()]])
    if op == "norm2":
        return np.array([[np.linalg.norm(vals[0])]])
    if op == "sum":
        return np.array([[vals[0].sum()]])
    if op == "tr":
        return np.array([[np.trace(vals[0])]])
    if op == "det":
        return np.array([[np.linalg.det(vals[0])]])
    if op == "inv":
        try:
            return np.linalg.inv(vals[0])
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"matrix inverse failed: {exc}") from None
    if op == "transpose":
        return vals[0].T
    if op == "bcast":
        return np.full(resolve_shape(node.shape, binds), vals[0][0, 0])
    if op == "eye":
        return np.eye(resolve_shape(node.shape, binds)[0])
    if op == "const":
        return np.array([[node.value]])
    if op in ("param", "var"):
        return _as_column(env.value(node.name))
    raise ValueError(f"unknown operator {op!r}")


def eval_many(exprs, env, binds=None):
    """Evaluate several expressions, computing shared subtrees once."""
    binds = bind_dims(exprs, env, binds)
    memo = {}
    out = []
    with np.errstate(all="ignore"):
        for root in exprs:
            for node in postorder(root):
                if id(node) in memo:
                    continue
                vals = [memo[id(a)] for a in node.args]
                memo[id(node)] = _apply(node, vals, env, binds)
            out.append(_unpack(memo[id(root)], root.shape, binds))
    return out


def _unpack(v, shape, binds):
    r, c = resolve_shape(shape, binds)
    if r == 1 and c == 1:
        return float(v[0, 0])
    if c == 1:
        return v[:, 0].copy() if v.base is not None else v[:, 0]
    return v


def eval_expr(e, env):
    """Evaluate one shape-annotated expression against an environment."""
    return eval_many([e], env)[0]


def eval_batch(e, env, also=()):
    """Evaluate `e` plus extra expressions, sharing common subtrees."""
    return eval_many([e, *also], env)


# ---------------------------------------------------------------------------
# Annotated constructors (shapes checked eagerly; light simplification)
# ---------------------------------------------------------------------------

def _strict_unify(a, b):
    if a != b:
        raise ShapeMismatch(f"incompatible dimensions {a} and {b} in a "
                            "generated expression")


def _mk(op, *args, shape=None):
    node = Expr(op, tuple(args), shape=shape)
    if shape is None:
        shape = _op_shape(op, node, [a.shape for a in args], _strict_unify)
        node = Expr(op, tuple(args), shape=shape)
    return node


def e_const(v):
    return Expr("const", value=float(v), shape=SCALAR)


def is_zero(e):
    if e.op == "const":
        return e.value == 0.0
    if e.op == "bcast":
        return is_zero(e.args[0])
    return False


def is_const_scalar(e, v):
    return e.op == "const" and e.value == v


def zero_like(shape):
    if shape.is_scalar:
        return e_const(0.0)
    return Expr("bcast", (e_const(0.0),), shape=shape)


def e_add(a, b):
    if a is None:
        return b
    if is_zero(a):
        return b
    if is_zero(b):
        return a
    if a.op == "const" and b.op == "const":
        return e_const(a.value + b.value)
    return _mk("add", a, b)


def e_sub(a, b):
    if is_zero(b):
        return a
    if a.op == "const" and b.op == "const":
        return e_const(a.value - b.value)
    if is_zero(a):
        return e_neg(b)
    return _mk("sub", a, b)


def e_neg(a):
    if a.op == "neg":
        return a.args[0]
    if a.op == "const":
        return e_const(-a.value)
    return _mk("neg", a)


def e_mul(a, b):
    if is_zero(a) or is_zero(b):
        shape = _op_shape("mul", Expr("mul", (a, b)), [a.shape, b.shape],
                          _strict_unify)
        return zero_like(shape)
    if is_const_scalar(a, 1.0):
        return b
    if is_const_scalar(b, 1.0):
        return a
    if a.op == "const" and b.op == "const":
        return e_const(a.value * b.value)
    return _mk("mul", a, b)


def e_div(a, b):
    if is_zero(a):
        return zero_like(a.shape)
    if is_const_scalar(b, 1.0):
        return a
    return _mk("div", a, b)


def e_emul(a, b):
    if is_zero(a) or is_zero(b):
        return zero_like(a.shape)
    if a.shape.is_scalar and b.shape.is_scalar:
        return e_mul(a, b)
    return _mk("emul", a, b)


def e_ediv(a, b):
    if is_zero(a):
        return zero_like(a.shape)
    if a.shape.is_scalar and b.shape.is_scalar:
        return e_div(a, b)
    return _mk("ediv", a, b)


def e_sum(a):
    if a.shape.is_scalar:
        return a
    return _mk("sum", a)


def e_inner(a, b):
    """Total inner product sum(a .* b) as a scalar expression."""
    return e_sum(e_emul(a, b))


def e_transpose(a):
    if a.shape.is_scalar:
        return a
    if a.op == "transpose":
        return a.args[0]
    if a.op == "param" and a.symmetric:
        return a
    return _mk("transpose", a)


def e_bcast(scalar, shape):
    if shape.is_scalar:
        return scalar
    if scalar.op == "bcast":
        scalar = scalar.args[0]
    return Expr("bcast", (scalar,), shape=shape)


def e_eye(dim):
    return Expr("eye", shape=Shape(dim, dim))


def e_unary(op, a):
    return _mk(op, a)
