"""Pure-NumPy implementations of the solver's hot kernels.

These mirror the compiled versions in `_core.pyx`; the two backends are
interchangeable (same signatures, same algorithms) and are compared by the
kernel parity tests and the benchmark script.
"""

import numpy as np

BACKEND = "python"


def two_loop(g, S, Y, rho, gamma):
    """Product of the limited-memory inverse-Hessian model with `g`.

    S, Y hold the curvature pairs as rows, oldest first; rho[i] is
    1 / (s_i . y_i); the base matrix is gamma * I.
    """
    k = rho.shape[0]
    q = g.astype(np.float64, copy=True)
    alpha = np.empty(k)
    for i in range(k - 1, -1, -1):
        alpha[i] = rho[i] * S[i].dot(q)
        q -= alpha[i] * Y[i]
    r = gamma * q
    for i in range(k):
        beta = rho[i] * Y[i].dot(r)
        r += (alpha[i] - beta) * S[i]
    return r


def cauchy_point(x, g, lower, upper, theta, W, M):
    """Generalized Cauchy point of the quadratic model along P(x - t g).

    The model is  m(z) = g'(z-x) + (1/2)(z-x)' B (z-x)  with
    B = theta*I - W M W'.  Walks the piecewise-linear projected-gradient
    path segment by segment, freezing each coordinate as it reaches a bound.

    Returns (xcp, c, free) where c = W' (xcp - x) and free marks the
    coordinates not at a bound at xcp.
    """
    n = x.shape[0]
    t = np.full(n, np.inf)
    d = np.zeros(n)
    neg = g < 0.0
    pos = g > 0.0
    with np.errstate(invalid="ignore"):
        t[neg] = (x[neg] - upper[neg]) / g[neg]
        t[pos] = (x[pos] - lower[pos]) / g[pos]
    t[np.isnan(t)] = np.inf
    moving = t > 0.0
    d[moving] = -g[moving]

    twok = W.shape[1]
    p = W.T.dot(d)
    c = np.zeros(twok)
    fp = -d.dot(d)
    fpp = theta * d.dot(d) - p.dot(M.dot(p)) if twok else theta * d.dot(d)
    xcp = x.astype(np.float64, copy=True)

    order = np.argsort(t, kind="stable")
    t_old = 0.0
    j = 0
    # skip coordinates fixed from the start (t == 0)
    while j < n and t[order[j]] <= 0.0:
        j += 1

    def dt_min():
        if fpp > 1e-300:
            return -fp / fpp
        return 0.0 if fp >= 0.0 else 1e20

    dtm = dt_min()
    while j < n:
        b = order[j]
        tb = t[b]
        if not np.isfinite(tb):
            break
        dt = tb - t_old
        if dtm < dt:
            break
        # coordinate b reaches its bound at tb
        xcp[b] = upper[b] if d[b] > 0.0 else lower[b]
        zb = xcp[b] - x[b]
        gb = g[b]
        c += dt * p
        if twok:
            wb = W[b]
            Mc = M.dot(c)
            Mp = M.dot(p)
            Mw = M.dot(wb)
            fp += dt * fpp + gb * gb + theta * gb * zb - gb * wb.dot(Mc)
            fpp += -theta * gb * gb - 2.0 * gb * wb.dot(Mp) \
                - gb * gb * wb.dot(Mw)
            p += gb * wb
        else:
            fp += dt * fpp + gb * gb + theta * gb * zb
            fpp += -theta * gb * gb
        d[b] = 0.0
        t_old = tb
        j += 1
        dtm = dt_min()

    t_cp = t_old + max(dtm, 0.0)
    still = d != 0.0
    xcp[still] = x[still] + t_cp * d[still]
    c += (t_cp - t_old) * p

    free = (xcp != lower) & (xcp != upper)
    return xcp, c, free
