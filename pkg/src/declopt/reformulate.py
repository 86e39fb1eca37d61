"""Rewriting models into the standard smooth constrained form.

`desmooth` removes `norm1` and `abs` by epigraph auxiliary variables;
`compile_problem` binds data, flattens all variables into one vector,
extracts simple bounds into a box, stacks the remaining constraints into
equality and inequality residual maps, and generates symbolic gradients.

The compiled form is: minimize f(x) subject to h(x) = 0, g(x) <= 0 and
lower <= x <= upper, with f, h, g smooth.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .diff import differentiate
from .errors import (
    CompileError,
    DimensionError,
    NonConvexNonSmooth,
    NonSmoothResidue,
    ShapeUnificationError,
    UnknownName,
)
from .expr import (
    Expr,
    Shape,
    bind_dims,
    contains_op,
    e_bcast,
    e_emul,
    e_mul,
    e_sub,
    e_sum,
    eval_expr,
    eval_many,
    resolve_shape,
    walk,
    NONSMOOTH_OPS,
)
from .parser import Constraint, ProblemSpec, VarDecl, validate


def _is_smooth(e):
    return contains_op(e, NONSMOOTH_OPS) is None


def _split_terms(e, sign=1):
    """Flatten a +/- tree into (sign, term) pairs."""
    if e.op == "add":
        return _split_terms(e.args[0], sign) + _split_terms(e.args[1], sign)
    if e.op == "sub":
        return _split_terms(e.args[0], sign) + _split_terms(e.args[1], -sign)
    if e.op == "neg":
        return _split_terms(e.args[0], -sign)
    return [(sign, e)]


def _join_terms(terms):
    out = None
    for sign, t in terms:
        if out is None:
            out = t if sign > 0 else Expr("neg", (t,), span=t.span)
        elif sign > 0:
            out = Expr("add", (out, t), span=t.span)
        else:
            out = Expr("sub", (out, t), span=t.span)
    return out


def _has_var(e):
    return any(n.op == "var" for n in walk(e))


def _peel_coefficient(term):
    """Split `term` into (coefficient exprs, core) for c1 * c2 * core chains.

    Coefficients must be variable-free scalars.  Returns (list, core).
    """
    coeffs = []
    node = term
    while node.op == "mul":
        lhs, rhs = node.args
        if not _has_var(lhs) and lhs.shape.is_scalar:
            coeffs.append(lhs)
            node = rhs
        elif not _has_var(rhs) and rhs.shape.is_scalar:
            coeffs.append(rhs)
            node = lhs
        else:
            break
    return coeffs, node


def _negative_constant(coeffs):
    return any(c.op == "const" and c.value < 0 for c in coeffs)


class _AuxNamer:
    def __init__(self):
        self.counter = 0

    def fresh(self):
        # '#' cannot occur in parsed identifiers, so collisions are impossible
        name = f"t#{self.counter}"
        self.counter += 1
        return name


def _epigraph(core, namer):
    """Fresh variable t plus the rows  arg - t <= 0  and  -arg - t <= 0.

    `core` is a norm1 or abs node.  Returns (aux decl, replacement scalar
    expr, new constraints, the majorized argument expr).
    """
    arg = core.args[0]
    if core.op == "norm1" and arg.shape.rows == 1 and arg.shape.cols != 1:
        arg = Expr("transpose", (arg,), span=arg.span)
    name = namer.fresh()
    if core.op == "abs":
        kind = "Scalar"
    else:
        kind = "Vector"
    decl = VarDecl(name, kind, core.span)
    t = Expr("var", name=name, span=core.span)
    zero = Expr("const", value=0.0)
    upper = Constraint(Expr("sub", (arg, t)), "<=", zero, core.span)
    lower = Constraint(Expr("sub", (Expr("neg", (arg,)), t)), "<=", zero,
                       core.span)
    replacement = t if kind == "Scalar" else Expr("sum", (t,), span=core.span)
    return decl, replacement, [upper, lower], arg


def desmooth(spec):
    """Replace norm1/abs by epigraph variables; normalize sense to `min`.

    Accepted positions: additive objective terms of the form
    [scalar coefficients *] norm1(e) or abs(e) with positive sign, and
    constraints norm1(e) <= c / abs(e) <= c (or the mirrored c >= form) with
    a variable-free right side.  Anything else raises NonConvexNonSmooth.
    Returns the input spec unchanged when it is already smooth and minimized.
    """
    if not spec.validated:
        spec = validate(spec)

    objective = spec.objective
    sense = spec.sense
    if sense == "max":
        objective = Expr("neg", (objective,), span=objective.span)
        sense = "min"

    smooth_cons = all(_is_smooth(c.lhs) and _is_smooth(c.rhs)
                      for c in spec.constraints)
    if sense == spec.sense and _is_smooth(objective) and smooth_cons:
        return spec

    namer = _AuxNamer()
    new_vars = []
    new_cons = []
    aux_arg = {}

    def rewrite_term(sign, term):
        if _is_smooth(term):
            return [(sign, term)]
        coeffs, core = _peel_coefficient(term)
        if core.op not in ("norm1", "abs") or not _is_smooth(core.args[0]):
            raise NonConvexNonSmooth(
                "a non-smooth operator appears where the epigraph rewrite "
                "does not apply", (contains_op(term, NONSMOOTH_OPS)).span)
        if core.op == "abs" and not core.shape.is_scalar:
            raise NonConvexNonSmooth(
                "elementwise abs cannot appear as a non-scalar objective "
                "term", core.span)
        if sign < 0 or _negative_constant(coeffs):
            raise NonConvexNonSmooth(
                "a negated non-smooth term cannot be minimized", core.span)
        decl, repl, cons, arg = _epigraph(core, namer)
        new_vars.append(decl)
        new_cons.extend(cons)
        aux_arg[decl.name] = arg
        for c in reversed(coeffs):
            repl = Expr("mul", (c, repl), span=term.span)
        return [(sign, repl)]

    terms = []
    for sign, term in _split_terms(objective):
        terms.extend(rewrite_term(sign, term))
    new_objective = _join_terms(terms)

    constraints = []
    for con in spec.constraints:
        if _is_smooth(con.lhs) and _is_smooth(con.rhs):
            constraints.append(con)
            continue
        # normalize to  nonsmooth <= bound
        lhs, rel, rhs = con.lhs, con.relation, con.rhs
        if rel == ">=" and not _is_smooth(rhs):
            lhs, rhs = rhs, lhs
            rel = "<="
        ok = (rel == "<=" and lhs.op in ("norm1", "abs")
              and _is_smooth(lhs.args[0]) and _is_smooth(rhs)
              and not _has_var(rhs))
        if not ok:
            raise NonConvexNonSmooth(
                "only constraints of the form norm1(e) <= c or "
                "abs(e) <= c can be rewritten",
                contains_op(Expr("sub", (con.lhs, con.rhs)),
                            NONSMOOTH_OPS).span)
        decl, repl, cons, arg = _epigraph(lhs, namer)
        new_vars.append(decl)
        new_cons.extend(cons)
        aux_arg[decl.name] = arg
        constraints.append(Constraint(repl, "<=", rhs, con.origin))

    rewritten = ProblemSpec(
        spec.parameters,
        spec.variables + tuple(new_vars),
        sense,
        new_objective,
        tuple(constraints) + tuple(new_cons),
        aux_names=frozenset(aux_arg.keys()) | spec.aux_names,
    )
    validated = validate(rewritten)
    # annotated argument expressions, used to initialize the aux variables
    args = {name: _reannotate_arg(validated, name) for name in aux_arg}
    return replace(validated, aux_names=rewritten.aux_names, aux_args=args)


def _reannotate_arg(validated_spec, aux_name):
    # the epigraph rows have the shape  arg - t <= 0; recover `arg`
    for con in validated_spec.constraints:
        lhs = con.lhs
        if (lhs.op == "sub" and lhs.args[1].op == "var"
                and lhs.args[1].name == aux_name
                and lhs.args[0].op != "neg"):
            return lhs.args[0]
    raise AssertionError(f"missing epigraph rows for {aux_name}")


@dataclass(frozen=True)
class VarSlot:
    name: str
    offset: int
    rows: int
    cols: int
    kind: str
    is_aux: bool

    @property
    def size(self):
        return self.rows * self.cols


class CompiledProblem:
    """A data-bound problem in standard form, with symbolic gradients.

    Variables (including epigraph auxiliaries) live in one flat vector of
    dimension `n`, laid out row-major per variable.  Instances are immutable
    after construction and safe to share across threads.
    """

    def __init__(self, spec, data, slots, lower, upper, x0,
                 eq_residuals, ineq_residuals, box_rows, binds):
        self.spec = spec
        self.data = data
        self.slots = slots
        self.n = sum(s.size for s in slots)
        self.lower = lower
        self.upper = upper
        self.x0 = x0
        self.eq_residuals = eq_residuals      # list of (expr, rows)
        self.ineq_residuals = ineq_residuals  # list of (expr, rows), g <= 0
        self.m = sum(r for _, r in eq_residuals)
        self.p = sum(r for _, r in ineq_residuals)
        self.box_rows = box_rows
        self._binds = binds
        self.objective = spec.objective

        var_shapes = {s.name: Shape(s.rows, s.cols) for s in slots}
        names = [s.name for s in slots]
        self._grad_f = differentiate(self.objective, names, var_shapes)
        self._grad_order = names

        def vjp_exprs(residuals, tag):
            out = []
            for i, (r, rows) in enumerate(residuals):
                u = Expr("param", name=f"{tag}#{i}", shape=r.shape)
                scalarized = e_sum(e_emul(u, r)) if not r.shape.is_scalar \
                    else e_mul(u, r)
                out.append((u.name, resolve_shape(r.shape, binds),
                            differentiate(scalarized, names, var_shapes)))
            return out

        self._eq_vjps = vjp_exprs(eq_residuals, "u")
        self._ineq_vjps = vjp_exprs(ineq_residuals, "v")

    # --- value helpers ---

    def slot(self, name):
        for s in self.slots:
            if s.name == name:
                return s
        raise KeyError(name)

    def unflatten(self, x):
        """Map a flat vector to {name: value} in declared kinds."""
        out = {}
        for s in self.slots:
            block = x[s.offset:s.offset + s.size]
            if s.kind == "Scalar":
                out[s.name] = float(block[0])
            elif s.kind == "Vector":
                out[s.name] = block.copy()
            else:
                out[s.name] = block.reshape(s.rows, s.cols).copy()
        return out

    def env_at(self, x, extra=None):
        values = self.unflatten(x)
        if extra:
            values.update(extra)
        return self.data.merged(values)

    def objective_value(self, x):
        return eval_expr(self.objective, self.env_at(x))

    def objective_and_gradient(self, x):
        env = self.env_at(x)
        exprs = [self.objective] + [self._grad_f[n] for n in self._grad_order]
        vals = eval_many(exprs, env, dict(self._binds))
        return vals[0], self._flatten_grads(vals[1:])

    def _flatten_grads(self, vals):
        g = np.empty(self.n)
        for s, v in zip(self.slots, vals):
            g[s.offset:s.offset + s.size] = np.asarray(v).reshape(-1)
        return g

    def _stack(self, residuals, env):
        if not residuals:
            return np.zeros(0)
        vals = eval_many([r for r, _ in residuals], env, dict(self._binds))
        return np.concatenate([np.atleast_1d(np.asarray(v)).reshape(-1)
                               for v in vals])

    def eq_values(self, x):
        return self._stack(self.eq_residuals, self.env_at(x))

    def ineq_values(self, x):
        return self._stack(self.ineq_residuals, self.env_at(x))

    def constraint_values(self, x):
        env = self.env_at(x)
        return (self._stack(self.eq_residuals, env),
                self._stack(self.ineq_residuals, env))

    def constraint_vjp(self, x, w_eq, w_ineq):
        """Flat vector  sum_j w_eq[j] grad h_j  +  sum_j w_ineq[j] grad g_j."""
        bindings = {}
        exprs = []
        pieces = []
        off = 0
        for (uname, (r, c), grads), _ in zip(self._eq_vjps,
                                             self.eq_residuals):
            rows = r * c
            w = w_eq[off:off + rows]
            bindings[uname] = float(w[0]) if (r, c) == (1, 1) else \
                (w if c == 1 else w.reshape(r, c))
            pieces.append(grads)
            off += rows
        off = 0
        for (vname, (r, c), grads), _ in zip(self._ineq_vjps,
                                             self.ineq_residuals):
            rows = r * c
            w = w_ineq[off:off + rows]
            bindings[vname] = float(w[0]) if (r, c) == (1, 1) else \
                (w if c == 1 else w.reshape(r, c))
            pieces.append(grads)
            off += rows
        if not pieces:
            return np.zeros(self.n)
        env = self.env_at(x, bindings)
        for block in pieces:
            exprs.extend(block[n] for n in self._grad_order)
        vals = eval_many(exprs, env, dict(self._binds))
        total = np.zeros(self.n)
        k = len(self._grad_order)
        for b in range(len(pieces)):
            total += self._flatten_grads(vals[b * k:(b + 1) * k])
        return total


def _constant_side(e, data):
    """Evaluate a variable-free annotated expr against the parameter data."""
    return eval_expr(e, data)


def _residual(a, b):
    """a - b, broadcasting a scalar side over the other's components."""
    if a.shape != b.shape:
        if a.shape.is_scalar:
            a = e_bcast(a, b.shape)
        elif b.shape.is_scalar:
            b = e_bcast(b, a.shape)
    return e_sub(a, b)


def compile_problem(spec, data, extract_bounds=True):
    """Bind data and flatten a desmoothed spec into a CompiledProblem.

    `data` must bind every parameter; bindings for variables are taken as
    initial values (and fix dimensions that the parameters alone do not
    determine).  Simple bound constraints (a bare variable against a
    variable-free side) become the box; everything else is stacked into h
    (equalities) and g (inequalities, <= 0).  `extract_bounds=False` keeps
    every inequality in g, giving it an explicit multiplier.
    """
    if not spec.validated:
        spec = validate(spec)
    bad = contains_op(spec.objective, NONSMOOTH_OPS)
    for con in spec.constraints:
        bad = bad or contains_op(con.lhs, NONSMOOTH_OPS) \
            or contains_op(con.rhs, NONSMOOTH_OPS)
    if bad is not None:
        raise NonSmoothResidue(
            "non-smooth operators remain; run desmooth first")
    if spec.sense != "min":
        raise CompileError("desmooth normalizes the sense; got 'max'")

    for d in spec.parameters:
        if d.name not in data:
            raise UnknownName(f"parameter {d.name!r} has no data binding")

    # resolve concrete dimensions from the bound values
    binds = {}
    all_exprs = [spec.objective]
    for con in spec.constraints:
        all_exprs += [con.lhs, con.rhs]
    var_inits = {d.name: data.value(d.name)
                 for d in spec.variables if d.name in data}
    try:
        bind_dims(all_exprs, data, binds, skip_missing=True)
    except DimensionError as exc:
        raise ShapeUnificationError(str(exc)) from None

    slots = []
    offset = 0
    for d in spec.variables:
        shp = spec.shapes[d.name]
        try:
            rows, cols = resolve_shape(shp, binds)
        except Exception:
            raise ShapeUnificationError(
                f"the dimensions of variable {d.name!r} are not determined "
                "by the bound data; bind an initial value for it") from None
        slots.append(VarSlot(d.name, offset, rows, cols, d.kind,
                             d.name in spec.aux_names))
        offset += rows * cols
    n = offset

    lower = np.full(n, -np.inf)
    upper = np.full(n, np.inf)
    box_rows = 0
    eq_residuals = []
    ineq_residuals = []

    def rows_of(e):
        r, c = resolve_shape(e.shape, binds)
        return r * c

    def slot_of(name):
        for s in slots:
            if s.name == name:
                return s
        raise KeyError(name)

    for con in spec.constraints:
        lhs, rel, rhs = con.lhs, con.relation, con.rhs
        if rel in ("<=", ">=") and extract_bounds:
            box = None
            if lhs.op == "var" and not _has_var(rhs):
                box = (lhs.name, rhs, rel)
            elif rhs.op == "var" and not _has_var(lhs):
                flipped = "<=" if rel == ">=" else ">="
                box = (rhs.name, lhs, flipped)
            if box is not None:
                name, const_expr, direction = box
                s = slot_of(name)
                cval = np.broadcast_to(
                    np.asarray(_constant_side(const_expr, data)),
                    (s.rows, s.cols)).reshape(-1)
                sl = slice(s.offset, s.offset + s.size)
                if direction == ">=":
                    lower[sl] = np.maximum(lower[sl], cval)
                else:
                    upper[sl] = np.minimum(upper[sl], cval)
                box_rows += s.size
                continue
        if rel == "==":
            r = _residual(lhs, rhs)
            eq_residuals.append((r, rows_of(r)))
        elif rel == "<=":
            r = _residual(lhs, rhs)
            ineq_residuals.append((r, rows_of(r)))
        else:
            r = _residual(rhs, lhs)
            ineq_residuals.append((r, rows_of(r)))

    if np.any(lower > upper):
        i = int(np.argmax(lower > upper))
        raise CompileError(
            f"infeasible bounds: lower {lower[i]} > upper {upper[i]} at "
            f"flat coordinate {i}")

    # starting point: bound values, else zero, clipped into the box
    x0 = np.zeros(n)
    for s in slots:
        if s.name in var_inits:
            x0[s.offset:s.offset + s.size] = \
                np.asarray(var_inits[s.name]).reshape(-1)
    # epigraph variables start strictly above |argument|
    aux_args = spec.aux_args or {}
    if aux_args:
        env0 = data.merged(_values_from(slots, x0))
        for name, arg in aux_args.items():
            s = slot_of(name)
            v = np.abs(np.atleast_1d(np.asarray(
                eval_expr(arg, env0)))).reshape(-1) + 1.0
            x0[s.offset:s.offset + s.size] = v
    x0 = np.minimum(np.maximum(x0, lower), upper)

    return CompiledProblem(spec, data, tuple(slots), lower, upper, x0,
                           eq_residuals, ineq_residuals, box_rows, binds)


def _values_from(slots, x):
    out = {}
    for s in slots:
        block = x[s.offset:s.offset + s.size]
        if s.kind == "Scalar":
            out[s.name] = float(block[0])
        elif s.kind == "Vector":
            out[s.name] = block
        else:
            out[s.name] = block.reshape(s.rows, s.cols)
    return out
