#!/usr/bin/env python3
"""Benchmark the compiled solver kernels against the NumPy fallback.

Times the two-loop recursion and the Cauchy-point breakpoint walk across
problem sizes, plus one end-to-end solve per backend.  Run after an
editable install:

    python benchmarks/bench_kernels.py [--sizes 1000 10000 100000]
"""

import argparse
import time

import numpy as np

from declopt.kernels import available_backends
from declopt.lbfgsb import LbfgsMemory


def rng_for(seed):
    return np.random.Generator(np.random.PCG64(seed))


def pairs_for(rng, n, k):
    mem = LbfgsMemory(history_size=k)
    diag = rng.uniform(0.5, 3.0, n)
    for _ in range(k):
        s = rng.standard_normal(n)
        mem.update(s, diag * s)
    S = np.ascontiguousarray(mem.S)
    Y = np.ascontiguousarray(mem.Y)
    rho = np.asarray(mem.rho)
    theta, W, M = mem.compact(n)
    return S, Y, rho, mem.gamma, theta, W, M


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_two_loop(backends, n, k, repeats):
    rng = rng_for(0)
    S, Y, rho, gamma, *_ = pairs_for(rng, n, k)
    g = rng.standard_normal(n)
    out = {}
    for name, impl in backends.items():
        impl.two_loop(g, S, Y, rho, gamma)  # warm up
        out[name] = time_call(lambda: impl.two_loop(g, S, Y, rho, gamma),
                              repeats)
    return out

def bench_cauchy(backends, n, k, repeats):
    rng = rng_for(1)
    S, Y, rho, gamma, theta, W, M = pairs_for(rng, n, k)
    lower = -rng.uniform(0.01, 0.5, n)
    upper = rng.uniform(0.01, 0.5, n)
    x = np.clip(rng.standard_normal(n) * 0.1, lower, upper)
    g = rng.standard_normal(n)
    out = {}
    for name, impl in backends.items():
        impl.cauchy_point(x, g, lower, upper, theta, W, M)
        out[name] = time_call(
            lambda: impl.cauchy_point(x, g, lower, upper, theta, W, M),
            repeats)
    return out


def bench_end_to_end():
    """One NNLS solve per backend through the full pipeline."""
    from declopt.auglag import AuglagConfig, solve
    from declopt.corpus import gen_nnls
    from declopt.parser import parse_model, validate
    from declopt.reformulate import compile_problem, desmooth
    import declopt.kernels as kernels

    inst = gen_nnls("i", seed=0, m=200, n=600)
    spec = desmooth(validate(parse_model(inst.model)))
    prob = compile_problem(spec, inst.bindings)
    out = {}
    saved = (kernels.two_loop, kernels.cauchy_point, kernels.BACKEND)
    try:
        for name, impl in available_backends().items():
            kernels.two_loop = impl.two_loop
            kernels.cauchy_point = impl.cauchy_point
            t0 = time.perf_counter()
            rep = solve(prob, AuglagConfig(tol=1e-7, max_inner=4000))
            out[name] = (time.perf_counter() - t0, rep.status,
                         rep.inner_iterations)
    finally:
        kernels.two_loop, kernels.cauchy_point, _ = saved
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+",
                    default=[1000, 10000, 100000])
    ap.add_argument("--history", type=int, default=10)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    backends = available_backends()
    print(f"backends: {', '.join(sorted(backends))}")
    if "compiled" not in backends:
        print("note: compiled kernels unavailable; timing the fallback only")

    header = f"{'kernel':<14}{'n':>9}" + "".join(
        f"{name:>14}" for name in sorted(backends)) + f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for n in args.sizes:
        for label, bench in (("two_loop", bench_two_loop),
                             ("cauchy_point", bench_cauchy)):
            times = bench(backends, n, args.history, args.repeats)
            row = f"{label:<14}{n:>9}"
            for name in sorted(backends):
                row += f"{times[name] * 1e6:>12.1f}us"
            if len(times) == 2:
                row += f"{times['python'] / times['compiled']:>9.1f}x"
            print(row)

    print()
    print("end-to-end nonnegative least squares (m=200, n=600):")
    for name, (secs, status, inner) in sorted(bench_end_to_end().items()):
        print(f"  {name:<10} {secs * 1e3:9.1f} ms   ({status}, "
              f"{inner} inner iterations)")


if __name__ == "__main__":
    main()
