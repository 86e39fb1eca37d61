import itertools

import numpy as np
import pytest

from declopt.auglag import (
    AuglagConfig,
    AuglagState,
    auglag_value_grad,
    kkt_residuals,
    solve,
    update_rho,
)
from declopt.corpus import gen_svm
from declopt.expr import Env
from declopt.parser import parse_model, validate
from declopt.reformulate import compile_problem, desmooth


def compiled(text, data=None, symmetric=(), **kw):
    spec = desmooth(validate(parse_model(text)))
    return compile_problem(spec, Env(data or {}, symmetric=symmetric), **kw)


def rng_for(seed):
    return np.random.Generator(np.random.PCG64(seed))


class TestUpdateRho:
    def test_sufficient_decrease_keeps_rho(self):
        st = AuglagState(None, None, None, rho=4.0, prev_violation=1.0)
        assert update_rho(st, 0.4) == 4.0
        assert st.prev_violation == 0.4

    def test_insufficient_decrease_doubles(self):
        st = AuglagState(None, None, None, rho=4.0, prev_violation=1.0)
        assert update_rho(st, 0.6) == 8.0

    def test_feasible_stays_feasible(self):
        st = AuglagState(None, None, None, rho=4.0, prev_violation=0.0)
        assert update_rho(st, 0.0) == 4.0

    def test_threshold_is_exactly_half(self):
        st = AuglagState(None, None, None, rho=1.0, prev_violation=1.0)
        assert update_rho(st, 0.5) == 1.0   # not strictly worse than tau*prev
        st2 = AuglagState(None, None, None, rho=1.0, prev_violation=1.0)
        assert update_rho(st2, 0.5 + 1e-12) == 2.0


class TestValueGrad:
    def test_unconstrained_is_plain_objective(self):
        prob = compiled("variables Vector x min x' * x", {"x": np.zeros(3)})
        st = AuglagState(None, np.zeros(0), np.zeros(0), 1.0, 0.0)
        x = np.array([1.0, -2.0, 0.5])
        v, g = auglag_value_grad(prob, st, x)
        assert v == pytest.approx(x.dot(x))
        np.testing.assert_allclose(g, 2 * x, rtol=1e-14)

    def test_hand_evaluated_equality_penalty(self):
        # f = x^2, h = x - 1, lam = 0, rho = 1 at x = 0:
        # L = 0 + 0.5*(-1)^2 = 0.5 and dL = 2x + (x - 1) = -1
        prob = compiled("variables Scalar x min x ^ 2 st x == 1")
        st = AuglagState(None, np.zeros(1), np.zeros(0), 1.0, 0.0)
        v, g = auglag_value_grad(prob, st, np.zeros(1))
        assert v == pytest.approx(0.5)
        assert g[0] == pytest.approx(-1.0)

    def test_inactive_inequality_vanishes(self):
        prob = compiled("variables Scalar x min x ^ 2 st x <= 1",
                        extract_bounds=False)
        st = AuglagState(None, np.zeros(0), np.zeros(1), 2.0, 0.0)
        v, g = auglag_value_grad(prob, st, np.zeros(1))
        assert v == pytest.approx(0.0)   # g(0) = -1 < 0, mu = 0
        assert g[0] == pytest.approx(0.0)

    def test_gradient_matches_finite_differences_on_svm(self):
        inst = gen_svm(m=14, n=3, seed=5)
        spec = desmooth(validate(parse_model(inst.model + "    a <= c\n")))
        prob = compile_problem(spec, inst.bindings, extract_bounds=False)
        rng = rng_for(6)
        for trial in range(5):
            x = rng.standard_normal(prob.n) * 0.5
            st = AuglagState(None,
                             rng.standard_normal(prob.m),
                             np.abs(rng.standard_normal(prob.p)),
                             float(np.exp(rng.uniform(0, 3))), 0.0)
            v0, g0 = auglag_value_grad(prob, st, x)
            fd = np.empty(prob.n)
            for i in range(prob.n):
                h = 1e-6 * (1.0 + abs(x[i]))
                xp = x.copy(); xp[i] += h
                xm = x.copy(); xm[i] -= h
                fd[i] = (auglag_value_grad(prob, st, xp)[0]
                         - auglag_value_grad(prob, st, xm)[0]) / (2 * h)
            err = np.max(np.abs(g0 - fd) / np.maximum(1.0, np.abs(fd)))
            assert err <= 1e-6


class TestSolve:
    def test_equality_hand_kkt(self):
        prob = compiled("variables Scalar x min x ^ 2 st x == 1")
        rep = solve(prob, AuglagConfig(tol=1e-9, feas_tol=1e-9,
                                       comp_tol=1e-9))
        assert rep.status == "Optimal"
        assert rep.x[0] == pytest.approx(1.0, abs=1e-8)
        assert rep.lam[0] == pytest.approx(-2.0, abs=1e-8)

    def test_inequality_hand_kkt(self):
        prob = compiled("variables Scalar x min (x - 2) ^ 2 st x <= 1",
                        extract_bounds=False)
        rep = solve(prob, AuglagConfig(tol=1e-9, feas_tol=1e-9,
                                       comp_tol=1e-9))
        assert rep.status == "Optimal"
        assert rep.x[0] == pytest.approx(1.0, abs=1e-8)
        assert rep.mu[0] == pytest.approx(2.0, abs=1e-8)

    def test_packing_lp_matches_vertex_enumeration(self):
        rng = rng_for(7)
        m, n = 3, 4
        A = rng.uniform(0.2, 1.0, size=(m, n))
        b = rng.uniform(1.0, 2.0, size=m)
        c = rng.uniform(0.2, 1.0, size=n)
        # maximize c'x <=> minimize -c'x over Ax <= b, x >= 0
        text = ("parameters Matrix A Vector b Vector c "
                "variables Vector x min 0 - c' * x st A*x <= b x >= 0")
        prob = compiled(text, {"A": A, "b": b, "c": c})
        rep = solve(prob, AuglagConfig(tol=1e-9, feas_tol=1e-9,
                                       comp_tol=1e-8, max_outer=200))
        assert rep.status == "Optimal"
        f_oracle = _packing_lp_vertex_optimum(A, b, c)
        assert rep.f == pytest.approx(f_oracle, abs=1e-6)

    def test_report_statuses_and_counts(self):
        prob = compiled("variables Scalar x min x ^ 2 st x == 1")
        rep = solve(prob, AuglagConfig(max_outer=1))
        assert rep.status in ("MaxOuter", "Optimal")
        rep2 = solve(prob)
        assert rep2.outer_iterations >= 1
        assert rep2.inner_iterations >= 1
        assert rep2.n_evals >= rep2.inner_iterations


def _packing_lp_vertex_optimum(A, b, c):
    """min -c'x over Ax <= b, x >= 0 by enumerating basic feasible points."""
    m, n = A.shape
    G = np.vstack([A, -np.eye(n)])
    h = np.concatenate([b, np.zeros(n)])
    best = np.inf
    for rows in itertools.combinations(range(m + n), n):
        sub = G[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        x = np.linalg.solve(sub, h[list(rows)])
        if np.all(G.dot(x) <= h + 1e-9):
            best = min(best, -c.dot(x))
    return best


class TestInvariants:
    def _constrained_problem(self):
        rng = rng_for(8)
        A = rng.uniform(0.2, 1.0, size=(3, 4))
        b = rng.uniform(1.0, 2.0, size=3)
        c = rng.uniform(0.2, 1.0, size=4)
        return compiled(
            "parameters Matrix A Vector b Vector c variables Vector x "
            "min 0 - c' * x + 0.05 * x' * x st A*x <= b x >= 0",
            {"A": A, "b": b, "c": c}, extract_bounds=False)

    def test_mu_nonnegative_and_lambda_identity(self):
        rng = rng_for(9)
        A = rng.uniform(size=(2, 5))
        feasible = rng.uniform(0.2, 1.0, size=5)
        prob = compiled(
            "parameters Matrix A Vector b variables Vector x "
            "min x' * x st A*x == b x >= 0",
            {"A": A, "b": A.dot(feasible)}, extract_bounds=False)
        seen = []
        lam_prev = [np.zeros(prob.m)]
        rho_at = []

        def cb(info):
            seen.append(info)
            # exact arithmetic identity of the multiplier update
            expected = lam_prev[0] + info["rho"] * info["h"]
            np.testing.assert_array_equal(info["lam"], expected)
            lam_prev[0] = info["lam"]
            assert np.all(info["mu"] >= 0.0)
            rho_at.append(info["rho"])

        rep = solve(prob, AuglagConfig(callback=cb))
        assert rep.status == "Optimal"
        assert len(seen) >= 1
        assert np.all(rep.mu >= 0.0)

    def test_rho_is_power_of_two_times_rho0(self):
        prob = self._constrained_problem()
        rhos = []
        rep = solve(prob, AuglagConfig(
            rho0=1.0, callback=lambda i: rhos.append(i["rho"])))
        for r in rhos + [rep.rho]:
            assert r >= 1.0
            assert 2.0 ** round(np.log2(r)) == r
        assert all(b >= a for a, b in zip(rhos, rhos[1:]))

    def test_feasibility_trend_or_rho_doubled(self):
        prob = self._constrained_problem()
        infos = []
        solve(prob, AuglagConfig(callback=infos.append))
        for prev, cur in zip(infos, infos[1:]):
            decreased = cur["violation"] <= prev["violation"] + 1e-15
            doubled = cur["rho"] > prev["rho"]
            assert decreased or doubled

    def test_optimal_reports_pass_fresh_kkt_recheck(self):
        prob = self._constrained_problem()
        cfg = AuglagConfig()
        rep = solve(prob, cfg)
        assert rep.status == "Optimal"
        again = kkt_residuals(prob, rep.x, rep.lam, rep.mu)
        assert again.satisfied(cfg)
        assert again.stationarity == pytest.approx(rep.kkt.stationarity,
                                                   rel=1e-12, abs=1e-15)
