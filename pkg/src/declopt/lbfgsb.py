"""Limited-memory quasi-Newton solver for smooth objectives in a box.

Each iteration projects the steepest-descent path onto the box and minimizes
the limited-memory quadratic model along it (the generalized Cauchy point);
variables at their bounds there are fixed and the model is minimized over
the remaining free variables, clipping the result back into the box.  A
strong-Wolfe line search (bracketing with cubic interpolation) finishes the
step; trial points where the objective is undefined are handled by halving
the step until the value is finite.

The inverse model is applied with the two-loop recursion; the direct model
needed for the path search uses the equivalent compact representation
theta*I - W M W'.  Both products run through `kernels`, which selects the
compiled core when available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import LineSearchError

# refine the accepted step toward phi' = 0 while |phi'| exceeds this
# fraction of |phi'(0)|; exactness on quadratic slices preserves the
# finite-termination property of the quasi-Newton iteration
REFINE_THRESHOLD = 0.01


@dataclass
class BoxSpec:
    """Per-coordinate bounds; +-inf entries mean unbounded."""

    lower: np.ndarray
    upper: np.ndarray

    @staticmethod
    def unbounded(n):
        return BoxSpec(np.full(n, -np.inf), np.full(n, np.inf))

    @staticmethod
    def of(lower, upper, n=None):
        if lower is None and upper is None:
            return BoxSpec.unbounded(n)
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        return BoxSpec(lower, upper)

    def validate(self):
        if np.any(self.lower > self.upper):
            raise ValueError("box has lower > upper")

    @property
    def bounded(self):
        return np.any(np.isfinite(self.lower)) or \
            np.any(np.isfinite(self.upper))

    def clip(self, x):
        return np.minimum(np.maximum(x, self.lower), self.upper)


@dataclass
class InnerResult:
    x: np.ndarray
    f: float
    g: np.ndarray
    status: str          # Converged | MaxIter | LineSearchFail | NumericError
    iterations: int
    n_evals: int


class LbfgsMemory:
    """Recent curvature pairs (s, y) defining the quasi-Newton model.

    Pairs are kept only when s'y > eps_curv * |s| * |y|, so the implicit
    Hessian model stays positive definite.  gamma = s'y / y'y of the newest
    pair scales the base matrix.
    """

    def __init__(self, history_size=10, eps_curv=1e-10):
        self.history_size = history_size
        self.eps_curv = eps_curv
        self.S = []
        self.Y = []
        self.rho = []
        self.gamma = 1.0
        self._compact = None

    @property
    def k(self):
        return len(self.S)

    def update(self, s, y):
        sy = float(s.dot(y))
        if not np.isfinite(sy):
            return False
        if sy <= self.eps_curv * np.linalg.norm(s) * np.linalg.norm(y):
            return False
        self.S.append(s)
        self.Y.append(y)
        self.rho.append(1.0 / sy)
        if len(self.S) > self.history_size:
            self.S.pop(0)
            self.Y.pop(0)
            self.rho.pop(0)
        self.gamma = sy / float(y.dot(y))
        self._compact = None
        return True

    def reset(self):
        self.S, self.Y, self.rho = [], [], []
        self.gamma = 1.0
        self._compact = None

    def hv(self, g):
        """Inverse-model product H g via the two-loop recursion."""
        if not self.S:
            return self.gamma * g
        S = np.ascontiguousarray(self.S)
        Y = np.ascontiguousarray(self.Y)
        rho = np.asarray(self.rho)
        return kernels.two_loop(np.ascontiguousarray(g), S, Y, rho,
                                self.gamma)

    def compact(self, n):
        """(theta, W, M) with the direct model  B = theta*I - W M W'."""
        if self._compact is not None:
            return self._compact
        theta = 1.0 / self.gamma
        if not self.S:
            self._compact = (theta, np.zeros((n, 0)), np.zeros((0, 0)))
            return self._compact
        S = np.asarray(self.S)          # (k, n) rows
        Y = np.asarray(self.Y)
        A = S.dot(Y.T)                  # A[i, j] = s_i . y_j
        D = np.diag(np.diag(A))
        L = np.tril(A, -1)
        inner = np.block([[-D, L.T], [L, theta * S.dot(S.T)]])
        try:
            M = np.linalg.inv(inner)
        except np.linalg.LinAlgError:
            self.reset()
            return self.compact(n)
        W = np.ascontiguousarray(np.concatenate([Y.T, theta * S.T], axis=1))
        self._compact = (theta, W, np.ascontiguousarray(M))
        return self._compact


def projected_gradient(x, g, box):
    """Gradient with components zeroed where a bound blocks descent."""
    pg = g.copy()
    pg[(x <= box.lower) & (g > 0.0)] = 0.0
    pg[(x >= box.upper) & (g < 0.0)] = 0.0
    return pg


def cauchy_point(x, g, memory, box):
    """First local minimizer of the model along the projected gradient path.

    Returns (xcp, c, free) where c = W'(xcp - x) feeds the subspace step and
    `free` marks coordinates not at a bound at xcp.
    """
    theta, W, M = memory.compact(x.size)
    return kernels.cauchy_point(np.ascontiguousarray(x, dtype=float),
                                np.ascontiguousarray(g, dtype=float),
                                box.lower, box.upper, theta, W, M)


def subspace_min(x, g, xcp, c, free, memory, box):
    """Minimize the quadratic model over the free variables from xcp.

    The candidate is clipped into the box; if the clipped point is not a
    descent direction from x, falls back to the furthest feasible point
    along the ray from xcp toward the unclipped solution, and finally to
    xcp itself.
    """
    if not free.any():
        return xcp
    n = x.size
    theta, W, M = memory.compact(n)
    k = memory.k
    if k:
        r = g + theta * (xcp - x) - W.dot(M.dot(c))
    else:
        r = g + theta * (xcp - x)
    rf = r[free]
    if k == 0:
        d = -rf / theta
    else:
        Wf = W[free]
        v = M.dot(Wf.T.dot(rf))
        N = np.eye(2 * k) - M.dot(Wf.T.dot(Wf)) / theta
        try:
            v = np.linalg.solve(N, v)
            d = -(rf / theta + Wf.dot(v) / (theta * theta))
        except np.linalg.LinAlgError:
            d = -rf / theta
    xbar = xcp.copy()
    xbar[free] += d
    clipped = box.clip(xbar)
    if (clipped - x).dot(g) < 0.0:
        return clipped
    # ray fallback: largest feasible step from xcp toward the raw solution
    ray = xbar - xcp
    alpha = 1.0
    pos = ray > 0.0
    neg = ray < 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        if pos.any():
            alpha = min(alpha, np.min((box.upper[pos] - xcp[pos]) / ray[pos]))
        if neg.any():
            alpha = min(alpha, np.min((box.lower[neg] - xcp[neg]) / ray[neg]))
    alpha = max(alpha, 0.0)
    xray = box.clip(xcp + alpha * ray)
    if (xray - x).dot(g) < 0.0:
        return xray
    return xcp


@dataclass
class LineSearchResult:
    alpha: float
    x: np.ndarray
    f: float
    g: np.ndarray
    n_evals: int
    wolfe: bool


def line_search(f_and_grad, x, d, f0, g0, c1=1e-4, c2=0.9, alpha0=1.0,
                alpha_max=1e10, max_evals=60, xtol=1e-14, box=None):
    """Strong-Wolfe step along d from x (bracketing + cubic interpolation).

    Implements the classic interval-update scheme; when the objective comes
    back non-finite at a trial point the step is halved until the value is
    finite and the search resumes with the trial as the new upper limit.
    Raises LineSearchError when no point with sufficient decrease was found
    within the evaluation budget.
    """
    dginit = float(d.dot(g0))
    if not dginit < 0.0:
        raise LineSearchError("line search needs a descent direction")
    stpmin = 1e-20
    stpmax = alpha_max
    nev = 0
    best = None  # (alpha, x, f, g) best point passing sufficient decrease

    def evaluate(stp):
        nonlocal nev, stpmax
        for _ in range(50):
            xt = x + stp * d
            if box is not None:
                xt = box.clip(xt)
            ft, gt = f_and_grad(xt)
            nev += 1
            if np.isfinite(ft) and np.all(np.isfinite(gt)):
                return stp, xt, ft, gt, float(d.dot(gt))
            stp *= 0.5
            stpmax = min(stpmax, stp)
            if stp <= stpmin or nev >= max_evals + 50:
                raise LineSearchError(
                    "objective not finite along the search direction")
        raise LineSearchError(
            "objective not finite along the search direction")

    dgtest = c1 * dginit
    width = stpmax - stpmin
    width1 = 2.0 * width
    stx, fx, dgx = 0.0, f0, dginit
    sty, fy, dgy = 0.0, f0, dginit
    stp = min(max(alpha0, stpmin), stpmax)
    brackt = False
    stage1 = True
    infoc = 1

    while True:
        if brackt:
            stmin, stmax = min(stx, sty), max(stx, sty)
        else:
            stmin = stx
            stmax = stp + 4.0 * (stp - stx)
        stp = min(max(stp, stpmin), stpmax)
        if (brackt and (stp <= stmin or stp >= stmax)) or infoc == 0 or \
                (brackt and stmax - stmin <= xtol * stmax):
            stp = stx
        stp, xt, f, g, dg = evaluate(stp)
        ftest1 = f0 + stp * dgtest

        if f <= ftest1 and f < f0 and (best is None or f < best[2]):
            best = (stp, xt, f, g)

        info = 0
        if (brackt and (stp <= stmin or stp >= stmax)) or infoc == 0:
            info = 6
        elif stp == stpmax and f <= ftest1 and dg <= dgtest:
            info = 5
        elif stp == stpmin and (f > ftest1 or dg >= dgtest):
            info = 4
        elif nev >= max_evals:
            info = 3
        elif brackt and stmax - stmin <= xtol * stmax:
            info = 2
        elif f <= ftest1 and abs(dg) <= c2 * (-dginit):
            info = 1

        if info == 1:
            # refine once toward phi' = 0 while curvature is still loose;
            # on a quadratic slice the secant step is the exact minimizer,
            # which preserves finite termination of the quasi-Newton loop
            if abs(dg) > REFINE_THRESHOLD * abs(dginit) and nev < max_evals:
                denom = dg - dginit
                if denom > 0.0:
                    alt = stp * (-dginit) / denom
                    if 0.0 < alt < stpmax and alt != stp:
                        alt, xa, fa, ga, dga = evaluate(alt)
                        armijo = fa <= f0 + alt * dgtest
                        if armijo and abs(dga) < abs(dg) and \
                                abs(dga) <= c2 * (-dginit):
                            return LineSearchResult(alt, xa, fa, ga, nev,
                                                    True)
            return LineSearchResult(stp, xt, f, g, nev, True)
        if info == 5:
            return LineSearchResult(stp, xt, f, g, nev, False)
        if info:
            if best is not None:
                a, bx, bf, bg = best
                return LineSearchResult(a, bx, bf, bg, nev, False)
            raise LineSearchError(
                f"no sufficient-decrease point found ({nev} evaluations)")

        if stage1 and f <= ftest1 and dg >= min(c1, c2) * dginit:
            stage1 = False
        if stage1 and f <= fx and f > ftest1:
            fm = f - stp * dgtest
            fxm = fx - stx * dgtest
            fym = fy - sty * dgtest
            dgm = dg - dgtest
            dgxm = dgx - dgtest
            dgym = dgy - dgtest
            stx, fxm, dgxm, sty, fym, dgym, stp, brackt, infoc = _cstep(
                stx, fxm, dgxm, sty, fym, dgym, stp, fm, dgm, brackt,
                stmin, stmax)
            fx = fxm + stx * dgtest
            fy = fym + sty * dgtest
            dgx = dgxm + dgtest
            dgy = dgym + dgtest
        else:
            stx, fx, dgx, sty, fy, dgy, stp, brackt, infoc = _cstep(
                stx, fx, dgx, sty, fy, dgy, stp, f, dg, brackt, stmin, stmax)

        if brackt:
            if abs(sty - stx) >= 0.66 * width1:
                stp = stx + 0.5 * (sty - stx)
            width1 = width
            width = abs(sty - stx)


def _cstep(stx, fx, dx, sty, fy, dy, stp, fp, dp, brackt, stpmin, stpmax):
    """Safeguarded trial step from interpolating the bracketing interval."""
    info = 0
    sgnd = dp * np.sign(dx)

    if fp > fx:
        info = 1
        bound = True
        theta = 3.0 * (fx - fp) / (stp - stx) + dx + dp
        s = max(abs(theta), abs(dx), abs(dp))
        gamma = s * np.sqrt(max((theta / s) ** 2 - (dx / s) * (dp / s), 0.0))
        if stp < stx:
            gamma = -gamma
        p = (gamma - dx) + theta
        q = ((gamma - dx) + gamma) + dp
        r = p / q
        stpc = stx + r * (stp - stx)
        stpq = stx + ((dx / ((fx - fp) / (stp - stx) + dx)) / 2.0) \
            * (stp - stx)
        if abs(stpc - stx) < abs(stpq - stx):
            stpf = stpc
        else:
            stpf = stpc + (stpq - stpc) / 2.0
        brackt = True
    elif sgnd < 0.0:
        info = 2
        bound = False
        theta = 3.0 * (fx - fp) / (stp - stx) + dx + dp
        s = max(abs(theta), abs(dx), abs(dp))
        gamma = s * np.sqrt(max((theta / s) ** 2 - (dx / s) * (dp / s), 0.0))
        if stp > stx:
            gamma = -gamma
        p = (gamma - dp) + theta
        q = ((gamma - dp) + gamma) + dx
        r = p / q
        stpc = stp + r * (stx - stp)
        stpq = stp + (dp / (dp - dx)) * (stx - stp)
        stpf = stpc if abs(stpc - stp) > abs(stpq - stp) else stpq
        brackt = True
    elif abs(dp) < abs(dx):
        info = 3
        bound = True
        theta = 3.0 * (fx - fp) / (stp - stx) + dx + dp
        s = max(abs(theta), abs(dx), abs(dp))
        gamma = s * np.sqrt(max((theta / s) ** 2 - (dx / s) * (dp / s), 0.0))
        if stp > stx:
            gamma = -gamma
        p = (gamma - dp) + theta
        q = (gamma + (dx - dp)) + gamma
        r = p / q
        if r < 0.0 and gamma != 0.0:
            stpc = stp + r * (stx - stp)
        elif stp > stx:
            stpc = stpmax
        else:
            stpc = stpmin
        stpq = stp + (dp / (dp - dx)) * (stx - stp)
        if brackt:
            stpf = stpc if abs(stp - stpc) < abs(stp - stpq) else stpq
        else:
            stpf = stpc if abs(stp - stpc) > abs(stp - stpq) else stpq
    else:
        info = 4
        bound = False
        if brackt:
            theta = 3.0 * (fp - fy) / (sty - stp) + dy + dp
            s = max(abs(theta), abs(dy), abs(dp))
            gamma = s * np.sqrt(
                max((theta / s) ** 2 - (dy / s) * (dp / s), 0.0))
            if stp > sty:
                gamma = -gamma
            p = (gamma - dp) + theta
            q = ((gamma - dp) + gamma) + dy
            r = p / q
            stpf = stp + r * (sty - stp)
        elif stp > stx:
            stpf = stpmax
        else:
            stpf = stpmin

    if fp > fx:
        sty, fy, dy = stp, fp, dp
    else:
        if sgnd < 0.0:
            sty, fy, dy = stx, fx, dx
        stx, fx, dx = stp, fp, dp

    stpf = min(stpmax, max(stpmin, stpf))
    stp = stpf
    if brackt and bound:
        if sty > stx:
            stp = min(stx + 0.66 * (sty - stx), stp)
        else:
            stp = max(stx + 0.66 * (sty - stx), stp)
    return stx, fx, dx, sty, fy, dy, stp, brackt, info


def _max_feasible_step(x, d, box, big=1e10):
    alpha = big
    pos = d > 0.0
    neg = d < 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        if pos.any():
            alpha = min(alpha, float(np.min((box.upper[pos] - x[pos])
                                            / d[pos])))
        if neg.any():
            alpha = min(alpha, float(np.min((box.lower[neg] - x[neg])
                                            / d[neg])))
    if not np.isfinite(alpha):
        alpha = big
    return max(alpha, 1e-16)


def minimize(f_and_grad, x0, box=None, tol=1e-8, max_iter=500,
             history_size=10, c1=1e-4, c2=0.9, eps_curv=1e-10,
             max_evals_per_search=60, callback=None):
    """Minimize a smooth function over a box from x0.

    `f_and_grad(x) -> (value, gradient)`.  Convergence is declared when the
    projected gradient infinity norm falls to `tol`.  Every point the
    objective is evaluated at lies inside the box.  `callback(k, x, f)`
    fires after each accepted step.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    if box is None:
        box = BoxSpec.unbounded(n)
    box.validate()
    x = box.clip(x)
    f, g = f_and_grad(x)
    nev = 1
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        return InnerResult(x, f, g, "NumericError", 0, nev)
    mem = LbfgsMemory(history_size, eps_curv)
    bounded = box.bounded
    status = "MaxIter"
    iterations = 0

    for k in range(max_iter):
        pg = projected_gradient(x, g, box)
        if np.max(np.abs(pg), initial=0.0) <= tol:
            status = "Converged"
            break
        if bounded:
            xcp, c, free = cauchy_point(x, g, mem, box)
            xbar = subspace_min(x, g, xcp, c, free, mem, box)
            d = xbar - x
        else:
            d = -mem.hv(g)
        dg = float(d.dot(g))
        if not np.isfinite(dg) or dg >= 0.0 or not d.any():
            d = -pg
            dg = float(d.dot(g))
        alpha_max = _max_feasible_step(x, d, box)
        if mem.k == 0 and k == 0:
            alpha0 = min(1.0 / max(1.0, float(np.linalg.norm(d))), alpha_max)
        else:
            alpha0 = min(1.0, alpha_max)
        try:
            ls = line_search(f_and_grad, x, d, f, g, c1=c1, c2=c2,
                             alpha0=alpha0, alpha_max=alpha_max,
                             max_evals=max_evals_per_search, box=box)
        except LineSearchError:
            if mem.k:
                # stale curvature can poison the direction near the noise
                # floor; retry once along the projected steepest descent
                mem.reset()
                d = -pg
                alpha_max = _max_feasible_step(x, d, box)
                try:
                    ls = line_search(
                        f_and_grad, x, d, f, g, c1=c1, c2=c2,
                        alpha0=min(1.0, alpha_max), alpha_max=alpha_max,
                        max_evals=max_evals_per_search, box=box)
                except LineSearchError:
                    status = "LineSearchFail"
                    iterations = k
                    break
            else:
                status = "LineSearchFail"
                iterations = k
                break
        nev += ls.n_evals
        s = ls.x - x
        y = ls.g - g
        x, f, g = ls.x, float(ls.f), ls.g
        mem.update(s, y)
        iterations = k + 1
        if callback is not None:
            callback(k, x, f)
    else:
        iterations = max_iter

    return InnerResult(x, f, g, status, iterations, nev)
