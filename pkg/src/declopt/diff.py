"""Symbolic gradients of scalar expressions by reverse-mode accumulation.

Gradients are emitted as expression trees in the same IR, using the
same-shape convention: the gradient with respect to a variable has exactly
the variable's shape.  Generated trees reference subtrees of the source
expression wherever possible, so batched evaluation of a function together
with its gradients shares work.

`abs` and `norm1` are deliberately rejected here; the reformulation pass is
responsible for removing them first.
"""

from __future__ import annotations

import numpy as np

from .errors import NonScalarSource, NonSmoothNode, NumericError, UnknownName
from .expr import (
    Expr,
    contains_op,
    e_add,
    e_bcast,
    e_const,
    e_div,
    e_ediv,
    e_emul,
    e_eye,
    e_inner,
    e_mul,
    e_neg,
    e_sub,
    e_sum,
    e_transpose,
    e_unary,
    eval_expr,
    postorder,
    zero_like,
    NONSMOOTH_OPS,
)

# GradientSet: mapping from variable name to a shape-correct gradient Expr.


def differentiate(f, wrt, var_shapes=None):
    """Gradients of the scalar expression `f` for each name in `wrt`.

    `f` must be shape-annotated and smooth.  `var_shapes` supplies shapes for
    requested variables that do not occur in `f` (their gradient is zero).
    """
    if f.shape is None:
        raise ValueError("differentiate requires a shape-annotated expression")
    if not f.shape.is_scalar:
        raise NonScalarSource(f"cannot differentiate a {f.shape} expression",
                              f.span)
    bad = contains_op(f, NONSMOOTH_OPS)
    if bad is not None:
        raise NonSmoothNode(
            f"{bad.op} is not differentiable; the problem must be "
            "reformulated first", bad.span)

    wrt = list(wrt)
    order = postorder(f)
    adjoint = {id(f): e_const(1.0)}
    grads = {}

    def accumulate(node, contribution):
        key = id(node)
        adjoint[key] = e_add(adjoint.get(key), contribution)

    for node in reversed(order):
        c = adjoint.get(id(node))
        if c is None:
            continue
        op = node.op
        if op == "var":
            grads[node.name] = e_add(grads.get(node.name), c)
            continue
        if op in ("param", "const", "eye"):
            continue
        a = node.args[0] if node.args else None
        if op == "add":
            accumulate(node.args[0], c)
            accumulate(node.args[1], c)
        elif op == "sub":
            accumulate(node.args[0], c)
            accumulate(node.args[1], e_neg(c))
        elif op == "neg":
            accumulate(a, e_neg(c))
        elif op == "mul":
            lhs, rhs = node.args
            if lhs.shape.is_scalar and not rhs.shape.is_scalar:
                accumulate(lhs, e_inner(c, rhs))
                accumulate(rhs, e_mul(lhs, c))
            elif rhs.shape.is_scalar and not lhs.shape.is_scalar:
                accumulate(rhs, e_inner(c, lhs))
                accumulate(lhs, e_mul(rhs, c))
            elif lhs.shape.is_scalar and rhs.shape.is_scalar:
                accumulate(lhs, e_mul(c, rhs))
                accumulate(rhs, e_mul(c, lhs))
            else:
                accumulate(lhs, e_mul(c, e_transpose(rhs)))
                accumulate(rhs, e_mul(e_transpose(lhs), c))
        elif op == "div":
            lhs, s = node.args
            accumulate(lhs, e_div(c, s))
            accumulate(s, e_neg(e_div(e_inner(c, lhs), e_mul(s, s))))
        elif op == "emul":
            lhs, rhs = node.args
            accumulate(lhs, e_emul(c, rhs))
            accumulate(rhs, e_emul(c, lhs))
        elif op == "ediv":
            lhs, rhs = node.args
            accumulate(lhs, e_ediv(c, rhs))
            accumulate(rhs, e_neg(e_ediv(e_emul(c, node), rhs)))
        elif op in ("pow", "epow"):
            base, p = node.args
            if base.op == "norm2" and p.op == "const" and p.value == 2.0:
                # d ||u||^2 = 2 u, avoiding the 0/0 of the chain rule at u = 0
                u = base.args[0]
                accumulate(u, e_mul(e_mul(e_const(2.0), c), u))
                continue
            pm1 = e_sub(p, e_const(1.0))
            accumulate(base, e_emul(c, e_mul(p, _epow(base, pm1))))
            if p.op != "const":
                accumulate(p, e_inner(c, e_emul(node, e_unary("log", base))))
        elif op == "log":
            accumulate(a, e_ediv(c, a))
        elif op == "exp":
            accumulate(a, e_emul(c, node))
        elif op == "sin":
            accumulate(a, e_emul(c, e_unary("cos", a)))
        elif op == "cos":
            accumulate(a, e_neg(e_emul(c, e_unary("sin", a))))
        elif op == "tanh":
            accumulate(a, e_sub(c, e_emul(c, e_emul(node, node))))
        elif op == "norm2":
            accumulate(a, e_mul(e_div(c, node), a))
        elif op == "sum":
            accumulate(a, e_bcast(c, a.shape))
        elif op == "tr":
            accumulate(a, e_mul(c, e_eye(a.shape.rows)))
        elif op == "det":
            accumulate(a, e_mul(e_mul(c, node),
                                e_transpose(e_unary("inv", a))))
        elif op == "inv":
            nt = e_transpose(node)
            accumulate(a, e_neg(e_mul(e_mul(nt, c), nt)))
        elif op == "transpose":
            accumulate(a, e_transpose(c))
        elif op == "bcast":
            accumulate(a, e_sum(c))
        else:
            raise NonSmoothNode(f"no differentiation rule for {op!r}",
                                node.span)

    out = {}
    for name in wrt:
        g = grads.get(name)
        if g is None:
            if var_shapes is None or name not in var_shapes:
                raise UnknownName(
                    f"{name!r} does not occur in the expression and no shape "
                    "was supplied for it")
            g = zero_like(var_shapes[name])
        out[name] = g
    return out


def _epow(base, p):
    if p.op == "const" and p.value == 1.0:
        return base
    op = "pow" if base.shape.is_scalar else "epow"
    return Expr(op, (base, p), shape=base.shape)


def check_gradient(f, grads, env, eps=1e-6):
    """Worst relative error of `grads` against central finite differences.

    The step for coordinate i is eps * (1 + |x_i|).  Errors are measured as
    |g_i - fd_i| / max(1, |fd_i|), maximized over every coordinate of every
    variable in `grads`.
    """
    names = list(grads)
    from .expr import eval_many
    vals = eval_many([f] + [grads[n] for n in names], env)
    f0 = vals[0]
    if not np.isfinite(f0):
        raise NumericError("objective is not finite at the given environment")
    gvals = dict(zip(names, vals[1:]))
    worst = 0.0
    for name in names:
        g = np.atleast_1d(np.asarray(gvals[name], dtype=float))
        x = env.value(name)
        scalar = isinstance(x, float)
        xa = np.atleast_1d(np.asarray(x, dtype=float)).copy()
        flat = xa.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            h = eps * (1.0 + abs(flat[i]))
            orig = flat[i]
            flat[i] = orig + h
            fp = eval_expr(f, env.bind(name, float(flat[0]) if scalar else xa))
            flat[i] = orig - h
            fm = eval_expr(f, env.bind(name, float(flat[0]) if scalar else xa))
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(
                    f"objective is not finite near the given environment "
                    f"(perturbing {name!r})")
            fd = (fp - fm) / (2.0 * h)
            err = abs(gflat[i] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    return worst
