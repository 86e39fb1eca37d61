"""Command-line front end: solve model files against data files.

`declopt solve --model FILE --data NAME=FILE ...` runs the full pipeline
(parse, validate, rewrite, compile, solve) and writes a JSON report.
`declopt gen NAME --seed S --out DIR` materializes a bundled synthetic
instance as CSV files plus its model text, ready for `solve`.

Exit codes: 0 the solver reached the KKT tolerances, 2 it stopped early
(iteration cap or stalled penalty), 1 bad input.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import corpus
from .auglag import AuglagConfig, solve as auglag_solve
from .errors import DeclOptError, FormatError, NonNumericCell, UnknownName
from .expr import Env, eval_expr
from .parser import parse_model, validate
from .reformulate import compile_problem, desmooth

CONFIG_ENV_VAR = "DECLOPT_CONFIG"


@dataclass
class RunConfig:
    model_path: str
    data: dict                       # parameter/variable name -> file path
    tol: float = 1e-6
    feas_tol: float = 1e-6
    max_outer: int = 100
    max_inner: int = 500
    history_size: int = 10
    out_path: str = None
    seed: int = 0
    verbose: bool = False


def load_data(path):
    """Read one dense value from a CSV or Matrix Market file.

    CSV cells must be numeric; a single row or column collapses to a vector
    and a single cell to a scalar.  Matrix Market array and coordinate files
    are densified.
    """
    with open(path, "r", encoding="utf-8") as fh:
        head = fh.read(64)
    if head.startswith("%%MatrixMarket"):
        from scipy.io import mmread
        mat = mmread(path)
        arr = np.asarray(getattr(mat, "todense", lambda: mat)(), dtype=float)
        return _collapse(arr)
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            out = []
            for cell in row:
                try:
                    out.append(float(cell))
                except ValueError:
                    raise NonNumericCell(
                        f"{path}:{lineno}: {cell.strip()!r} is not a number")
            if rows and len(out) != len(rows[0]):
                raise FormatError(
                    f"{path}:{lineno}: expected {len(rows[0])} columns, "
                    f"got {len(out)}")
            rows.append(out)
    if not rows:
        raise FormatError(f"{path}: no numeric data")
    return _collapse(np.asarray(rows, dtype=float))


def _collapse(arr):
    arr = np.atleast_2d(arr)
    if arr.shape == (1, 1):
        return float(arr[0, 0])
    if arr.shape[0] == 1:
        return arr[0].copy()
    if arr.shape[1] == 1:
        return arr[:, 0].copy()
    return arr


def save_value(path, value):
    value = np.atleast_2d(np.asarray(value, dtype=float))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for row in value:
            writer.writerow([repr(float(v)) for v in row])


def run(cfg):
    """Execute one solve; returns (exit_code, report dict)."""
    t0 = time.perf_counter()
    with open(cfg.model_path, "r", encoding="utf-8") as fh:
        text = fh.read()
    spec = validate(parse_model(text))

    declared = {d.name for d in spec.parameters} | \
               {d.name for d in spec.variables}
    for name in cfg.data:
        if name not in declared:
            raise UnknownName(f"--data {name}=...: the model declares no "
                              f"parameter or variable named {name!r}")
    missing = [d.name for d in spec.parameters if d.name not in cfg.data]
    if missing:
        raise UnknownName(
            "no data bound for parameter(s): " + ", ".join(missing))

    values = {name: load_data(path) for name, path in cfg.data.items()}
    env = Env(values, symmetric=tuple(
        d.name for d in spec.parameters if d.symmetric))

    smooth = desmooth(spec)
    problem = compile_problem(smooth, env)
    solver_cfg = AuglagConfig(
        tol=cfg.tol, feas_tol=cfg.feas_tol, comp_tol=cfg.tol,
        max_outer=cfg.max_outer, max_inner=cfg.max_inner,
        history_size=cfg.history_size)
    report = auglag_solve(problem, solver_cfg)

    # report variables under their declared names and shapes
    all_values = problem.unflatten(report.x)
    variables = {}
    for slot in problem.slots:
        if slot.is_aux:
            continue
        v = all_values[slot.name]
        variables[slot.name] = v.tolist() if isinstance(v, np.ndarray) else v

    # objective of the model as written, at the reported variables
    original_objective = eval_expr(
        spec.objective, env.merged({s.name: all_values[s.name]
                                    for s in problem.slots
                                    if not s.is_aux}))

    payload = {
        "status": report.status,
        "objective": original_objective,
        "variables": variables,
        "multipliers": {"eq": report.lam.tolist(),
                        "ineq": report.mu.tolist()},
        "kkt": {**report.kkt.as_dict(),
                "tolerances": {"stationarity": cfg.tol,
                               "feasibility": cfg.feas_tol,
                               "complementarity": cfg.tol}},
        "iterations": {"outer": report.outer_iterations,
                       "inner": report.inner_iterations,
                       "function_evals": report.n_evals},
        "rho": report.rho,
        "model": os.path.basename(cfg.model_path),
        "seed": cfg.seed,
        "wall_time_s": time.perf_counter() - t0,
    }
    exit_code = 0 if report.status == "Optimal" else 2
    return exit_code, payload


def _write_report(payload, out_path):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _env_defaults():
    path = os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def build_arg_parser():
    ap = argparse.ArgumentParser(
        prog="declopt",
        description="Model, differentiate, and solve dense optimization "
                    "problems.")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="solve a model against data files")
    sp.add_argument("--model", required=True, help="model text file")
    sp.add_argument("--data", action="append", default=[],
                    metavar="NAME=FILE",
                    help="bind a parameter (or a variable initial value) "
                         "to a CSV / Matrix Market file; repeatable")
    sp.add_argument("--tol", type=float, default=None,
                    help="stationarity and complementarity tolerance "
                         "(default 1e-6)")
    sp.add_argument("--feas-tol", type=float, default=None,
                    help="constraint violation tolerance (default 1e-6)")
    sp.add_argument("--max-outer", type=int, default=None)
    sp.add_argument("--max-inner", type=int, default=None)
    sp.add_argument("--history", type=int, default=None,
                    help="quasi-Newton memory size (default 10)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None, help="report file (default: stdout)")
    sp.add_argument("-v", "--verbose", action="store_true")

    gp = sub.add_parser("gen", help="write a synthetic instance to a directory")
    gp.add_argument("name", choices=sorted(corpus.GENERATORS.keys()))
    gp.add_argument("--seed", type=int, default=0)
    gp.add_argument("--out", required=True, help="output directory")
    return ap


def _cmd_solve(args):
    defaults = _env_defaults()

    def pick(cli_value, key, fallback):
        if cli_value is not None:
            return cli_value
        return defaults.get(key, fallback)

    data = {}
    for item in args.data:
        if "=" not in item:
            raise FormatError(f"--data expects NAME=FILE, got {item!r}")
        name, path = item.split("=", 1)
        if name in data:
            raise FormatError(f"--data {name} given more than once")
        data[name] = path
    cfg = RunConfig(
        model_path=args.model,
        data=data,
        tol=pick(args.tol, "tol", 1e-6),
        feas_tol=pick(args.feas_tol, "feas_tol", 1e-6),
        max_outer=pick(args.max_outer, "max_outer", 100),
        max_inner=pick(args.max_inner, "max_inner", 500),
        history_size=pick(args.history, "history", 10),
        out_path=args.out,
        seed=args.seed,
        verbose=args.verbose,
    )
    code, payload = run(cfg)
    _write_report(payload, cfg.out_path)
    return code


def _cmd_gen(args):
    instance = corpus.GENERATORS[args.name](seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    model_path = os.path.join(args.out, "model.txt")
    with open(model_path, "w", encoding="utf-8") as fh:
        fh.write(instance.model)
    files = {}
    for name in instance.bindings.names():
        path = os.path.join(args.out, f"{name}.csv")
        save_value(path, instance.bindings.value(name))
        files[name] = os.path.basename(path)
    manifest = {
        "name": instance.name,
        "seed": instance.seed,
        "model": "model.txt",
        "data": files,
        "symmetric": sorted(instance.bindings.symmetric),
    }
    with open(os.path.join(args.out, "instance.json"), "w",
              encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    print(f"wrote {instance.name} (seed {instance.seed}) to {args.out}")
    return 0


def main(argv=None):
    args = build_arg_parser().parse_args(argv)
    try:
        if args.command == "solve":
            return _cmd_solve(args)
        return _cmd_gen(args)
    except DeclOptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
