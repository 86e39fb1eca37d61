"""Shared immutable trees, environments, and compiled problems are safe to
use from several threads at once."""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from declopt.auglag import AuglagConfig, solve
from declopt.corpus import gen_elasticnet
from declopt.expr import Env, eval_expr
from declopt.parser import parse_model, validate
from declopt.reformulate import compile_problem, desmooth


def test_concurrent_eval_of_shared_tree():
    spec = validate(parse_model(
        "parameters Matrix X Vector y variables Vector w "
        "min norm2(X*w - y).^2 + w' * w"))
    rng = np.random.Generator(np.random.PCG64(0))
    env = Env({"X": rng.standard_normal((30, 8)),
               "y": rng.standard_normal(30),
               "w": rng.standard_normal(8)})
    expected = eval_expr(spec.objective, env)

    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(
            lambda _: eval_expr(spec.objective, env), range(64)))
    assert all(r == expected for r in results)


def test_concurrent_solves_share_compiled_problem():
    # a regularization path: independent solves over one CompiledProblem
    inst = gen_elasticnet(m=30, n=12, seed=1)
    prob = compile_problem(desmooth(validate(parse_model(inst.model))),
                           inst.bindings)

    def one(seed):
        return solve(prob, AuglagConfig(max_inner=2000)).f

    with ThreadPoolExecutor(max_workers=4) as pool:
        values = list(pool.map(one, range(8)))
    assert all(v == values[0] for v in values)
