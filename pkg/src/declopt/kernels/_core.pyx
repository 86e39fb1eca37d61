# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the solver's hot kernels.

Same algorithms and signatures as `_numpy.py`; the breakpoint walk and the
two-loop recursion run as tight C loops over contiguous float64 buffers.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "compiled"


def two_loop(g, S, Y, rho, gamma):
    """Product of the limited-memory inverse-Hessian model with `g`."""
    cdef double[::1] q = np.array(g, dtype=np.float64)
    cdef double[:, ::1] Sv = np.ascontiguousarray(S, dtype=np.float64)
    cdef double[:, ::1] Yv = np.ascontiguousarray(Y, dtype=np.float64)
    cdef double[::1] rhov = np.ascontiguousarray(rho, dtype=np.float64)
    cdef Py_ssize_t k = rhov.shape[0]
    cdef Py_ssize_t n = q.shape[0]
    cdef double[::1] alpha = np.empty(k)
    cdef Py_ssize_t i, j
    cdef double acc, beta, gam = gamma

    for i in range(k - 1, -1, -1):
        acc = 0.0
        for j in range(n):
            acc += Sv[i, j] * q[j]
        acc *= rhov[i]
        alpha[i] = acc
        for j in range(n):
            q[j] -= acc * Yv[i, j]
    for j in range(n):
        q[j] *= gam
    for i in range(k):
        beta = 0.0
        for j in range(n):
            beta += Yv[i, j] * q[j]
        beta *= rhov[i]
        acc = alpha[i] - beta
        for j in range(n):
            q[j] += acc * Sv[i, j]
    return np.asarray(q)


cdef double _quad_form(double[::1] w, double[:, ::1] M, double[::1] v,
                       Py_ssize_t twok) noexcept:
    # w' M v
    cdef double total = 0.0, row
    cdef Py_ssize_t i, j
    for i in range(twok):
        row = 0.0
        for j in range(twok):
            row += M[i, j] * v[j]
        total += w[i] * row
    return total


def cauchy_point(x, g, lower, upper, theta, W, M):
    """Generalized Cauchy point of the quadratic model along P(x - t g)."""
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef double[::1] lv = np.ascontiguousarray(lower, dtype=np.float64)
    cdef double[::1] uv = np.ascontiguousarray(upper, dtype=np.float64)
    cdef double[:, ::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef double[:, ::1] Mv = np.ascontiguousarray(M, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    cdef Py_ssize_t twok = Wv.shape[1]
    cdef double th = theta

    t_arr = np.full(n, np.inf)
    cdef double[::1] t = t_arr
    cdef double[::1] d = np.zeros(n)
    cdef double[::1] p = np.zeros(twok)
    cdef double[::1] c = np.zeros(twok)
    xcp_arr = np.array(x, dtype=np.float64)
    cdef double[::1] xcp = xcp_arr

    cdef Py_ssize_t i, j, b, kk
    cdef double gi, dd = 0.0

    for i in range(n):
        gi = gv[i]
        if gi < 0.0:
            t[i] = (xv[i] - uv[i]) / gi
        elif gi > 0.0:
            t[i] = (xv[i] - lv[i]) / gi
        if t[i] != t[i]:  # NaN from inf bounds
            t[i] = np.inf
        if t[i] > 0.0:
            d[i] = -gi
            dd += gi * gi
            for kk in range(twok):
                p[kk] += Wv[i, kk] * d[i]

    cdef double fp = -dd
    cdef double fpp = th * dd
    if twok:
        fpp -= _quad_form(p, Mv, p, twok)

    order_arr = np.argsort(t_arr, kind="stable")
    cdef cnp.intp_t[::1] order = order_arr.astype(np.intp)
    cdef double t_old = 0.0, tb, dt, dtm, zb, gb, wMc, wMp, wMw, row
    cdef Py_ssize_t pos = 0

    while pos < n and t[order[pos]] <= 0.0:
        pos += 1

    if fpp > 1e-300:
        dtm = -fp / fpp
    else:
        dtm = 0.0 if fp >= 0.0 else 1e20

    while pos < n:
        b = order[pos]
        tb = t[b]
        if tb == np.inf:
            break
        dt = tb - t_old
        if dtm < dt:
            break
        xcp[b] = uv[b] if d[b] > 0.0 else lv[b]
        zb = xcp[b] - xv[b]
        gb = gv[b]
        for kk in range(twok):
            c[kk] += dt * p[kk]
        if twok:
            wMc = 0.0
            wMp = 0.0
            wMw = 0.0
            for i in range(twok):
                row = 0.0
                for j in range(twok):
                    row += Mv[i, j] * c[j]
                wMc += Wv[b, i] * row
                row = 0.0
                for j in range(twok):
                    row += Mv[i, j] * p[j]
                wMp += Wv[b, i] * row
                row = 0.0
                for j in range(twok):
                    row += Mv[i, j] * Wv[b, j]
                wMw += Wv[b, i] * row
            fp += dt * fpp + gb * gb + th * gb * zb - gb * wMc
            fpp += -th * gb * gb - 2.0 * gb * wMp - gb * gb * wMw
            for kk in range(twok):
                p[kk] += gb * Wv[b, kk]
        else:
            fp += dt * fpp + gb * gb + th * gb * zb
            fpp += -th * gb * gb
        d[b] = 0.0
        t_old = tb
        pos += 1
        if fpp > 1e-300:
            dtm = -fp / fpp
        else:
            dtm = 0.0 if fp >= 0.0 else 1e20

    if dtm < 0.0:
        dtm = 0.0
    cdef double t_cp = t_old + dtm
    for i in range(n):
        if d[i] != 0.0:
            xcp[i] = xv[i] + t_cp * d[i]
    for kk in range(twok):
        c[kk] += dtm * p[kk]

    free_arr = np.empty(n, dtype=np.bool_)
    cdef cnp.uint8_t[::1] free = free_arr.view(np.uint8)
    for i in range(n):
        free[i] = 1 if (xcp[i] != lv[i] and xcp[i] != uv[i]) else 0
    return xcp_arr, np.asarray(c), free_arr
