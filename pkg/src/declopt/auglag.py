"""Augmented Lagrangian outer loop over the box-constrained inner solver.

The constrained problem  min f(x)  s.t. h(x) = 0, g(x) <= 0, l <= x <= u
is solved by repeatedly minimizing

    L_rho(x, lam, mu) = f(x) + (rho/2) ||h(x) + lam/rho||^2
                             + (rho/2) ||(g(x) + mu/rho)_+||^2

inside the box, then updating the multipliers

    lam <- lam + rho h(x),      mu <- (mu + rho g(x))_+

and doubling rho whenever the infinity norm of the constraint violation
failed to shrink by at least a factor of one half since the previous outer
iteration.  Box bounds never enter the penalty; the inner solver enforces
them directly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import lbfgsb

TAU = 0.5          # required per-iteration violation decrease factor
RHO_GROWTH = 2.0   # penalty multiplier when the decrease is insufficient


@dataclass
class AuglagConfig:
    tol: float = 1e-6            # stationarity, infinity norm
    feas_tol: float = 1e-6       # ||h||_inf and ||(g)_+||_inf
    comp_tol: float = 1e-6       # max |mu_i g_i|
    max_outer: int = 100
    max_inner: int = 500
    history_size: int = 10
    rho0: float = 1.0
    rho_cap: float = 1e12
    inner_tol_factor: float = 0.1
    callback: object = None


@dataclass
class AuglagState:
    x: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    rho: float
    prev_violation: float


@dataclass
class KktResiduals:
    stationarity: float
    eq_violation: float
    ineq_violation: float
    complementarity: float

    def satisfied(self, cfg):
        return (self.stationarity <= cfg.tol
                and self.eq_violation <= cfg.feas_tol
                and self.ineq_violation <= cfg.feas_tol
                and self.complementarity <= cfg.comp_tol)

    def as_dict(self):
        return {"stationarity": self.stationarity,
                "eq_violation": self.eq_violation,
                "ineq_violation": self.ineq_violation,
                "complementarity": self.complementarity}


@dataclass
class SolverReport:
    x: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    f: float
    kkt: KktResiduals
    rho: float
    outer_iterations: int
    inner_iterations: int
    n_evals: int
    status: str   # Optimal | MaxOuter | InnerFail | Stalled
    wall_time: float = 0.0


def auglag_value_grad(problem, state, x):
    """Value and gradient of L_rho at x for the multipliers in `state`."""
    f, grad = problem.objective_and_gradient(x)
    rho = state.rho
    if problem.m == 0 and problem.p == 0:
        return f, grad
    h, g = problem.constraint_values(x)
    value = f
    w_eq = np.zeros(0)
    w_ineq = np.zeros(0)
    if problem.m:
        sh = h + state.lam / rho
        value += 0.5 * rho * float(sh.dot(sh))
        w_eq = rho * sh
    if problem.p:
        sg = np.maximum(g + state.mu / rho, 0.0)
        value += 0.5 * rho * float(sg.dot(sg))
        w_ineq = rho * sg
    grad = grad + problem.constraint_vjp(x, w_eq, w_ineq)
    return value, grad


def kkt_residuals(problem, x, lam, mu):
    """Recompute all four KKT residuals from scratch at (x, lam, mu).

    Stationarity uses the gradient of the Lagrangian projected onto the box
    (coordinates pinned by an active bound with an outward-pushing gradient
    are zeroed); bound multipliers stay implicit.
    """
    _, grad = problem.objective_and_gradient(x)
    h, g = problem.constraint_values(x)
    r = grad + problem.constraint_vjp(x, lam, mu)
    box = lbfgsb.BoxSpec(problem.lower, problem.upper)
    r = lbfgsb.projected_gradient(x, r, box)
    stat = float(np.max(np.abs(r), initial=0.0))
    eq = float(np.max(np.abs(h), initial=0.0))
    ineq = float(np.max(np.maximum(g, 0.0), initial=0.0))
    comp = float(np.max(np.abs(mu * g), initial=0.0)) if problem.p else 0.0
    return KktResiduals(stat, eq, ineq, comp)


def update_rho(state, violation_now):
    """The tau = 1/2 test: double rho unless the violation halved."""
    rho = state.rho
    if violation_now > TAU * state.prev_violation:
        rho = RHO_GROWTH * rho
    state.prev_violation = violation_now
    return rho


def _violation(h, g):
    eq = float(np.max(np.abs(h), initial=0.0))
    ineq = float(np.max(np.maximum(g, 0.0), initial=0.0))
    return max(eq, ineq)


def solve(problem, cfg=None):
    """Run the outer loop on a compiled problem until the KKT test passes."""
    cfg = cfg or AuglagConfig()
    t0 = time.perf_counter()
    x0 = problem.x0.copy()
    h0, g0 = problem.constraint_values(x0)
    state = AuglagState(x=x0, lam=np.zeros(problem.m), mu=np.zeros(problem.p),
                        rho=cfg.rho0, prev_violation=_violation(h0, g0))
    box = lbfgsb.BoxSpec(problem.lower, problem.upper)

    total_inner = 0
    total_evals = 0
    status = "MaxOuter"
    outer = 0
    stalls = 0
    kkt = kkt_residuals(problem, state.x, state.lam, state.mu)

    for outer in range(cfg.max_outer):
        if kkt.satisfied(cfg):
            status = "Optimal"
            break

        # loose early inner solves, tightening as feasibility improves
        feas = max(kkt.eq_violation, kkt.ineq_violation)
        inner_tol = max(cfg.tol, cfg.inner_tol_factor * feas)

        res = lbfgsb.minimize(
            lambda x: auglag_value_grad(problem, state, x),
            state.x, box=box, tol=inner_tol, max_iter=cfg.max_inner,
            history_size=cfg.history_size)
        moved = bool(np.any(res.x != state.x))
        state.x = res.x
        total_inner += res.iterations
        total_evals += res.n_evals

        if res.status == "NumericError":
            status = "InnerFail"
            break
        if res.status == "LineSearchFail" and not moved:
            stalls += 1
            if stalls >= 2:
                status = "InnerFail"
                break
        else:
            stalls = 0

        h, g = problem.constraint_values(state.x)
        state.lam = state.lam + state.rho * h
        state.mu = np.maximum(state.mu + state.rho * g, 0.0)
        violation = _violation(h, g)

        if cfg.callback is not None:
            cfg.callback({"outer": outer, "x": state.x.copy(),
                          "lam": state.lam.copy(), "mu": state.mu.copy(),
                          "rho": state.rho, "h": h, "g": g,
                          "violation": violation, "inner": res})

        # grow the penalty only while the constraints still need enforcing;
        # doubling at sub-tolerance violations would only poison the
        # conditioning of later subproblems
        if violation > cfg.feas_tol:
            new_rho = update_rho(state, violation)
        else:
            state.prev_violation = violation
            new_rho = state.rho
        if new_rho > cfg.rho_cap:
            state.rho = cfg.rho_cap
            kkt = kkt_residuals(problem, state.x, state.lam, state.mu)
            if kkt.satisfied(cfg):
                status = "Optimal"
            else:
                status = "Stalled"
            outer += 1
            break
        state.rho = new_rho
        kkt = kkt_residuals(problem, state.x, state.lam, state.mu)
    else:
        outer = cfg.max_outer
        if kkt.satisfied(cfg):
            status = "Optimal"

    f = problem.objective_value(state.x)
    return SolverReport(
        x=state.x, lam=state.lam, mu=state.mu, f=f, kkt=kkt, rho=state.rho,
        outer_iterations=outer, inner_iterations=total_inner,
        n_evals=total_evals, status=status,
        wall_time=time.perf_counter() - t0)
