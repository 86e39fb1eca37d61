"""declopt: a declarative modeling language with a generic dense solver.

Model text is parsed into an expression IR, gradients are derived
symbolically, non-smooth pieces (norm1, abs) are rewritten into smooth
constrained form, and the result is solved by an augmented Lagrangian loop
around a box-constrained limited-memory quasi-Newton inner solver.
"""

from .auglag import AuglagConfig, SolverReport, kkt_residuals, solve
from .diff import check_gradient, differentiate
from .errors import DeclOptError
from .expr import Env, Expr, Shape, eval_batch, eval_expr, infer_shape
from .parser import parse, parse_model, tokenize, validate
from .reformulate import CompiledProblem, compile_problem, desmooth

__version__ = "0.1.0"

__all__ = [
    "AuglagConfig",
    "CompiledProblem",
    "DeclOptError",
    "Env",
    "Expr",
    "Shape",
    "SolverReport",
    "check_gradient",
    "compile_problem",
    "desmooth",
    "differentiate",
    "eval_batch",
    "eval_expr",
    "infer_shape",
    "kkt_residuals",
    "parse",
    "parse_model",
    "solve",
    "tokenize",
    "validate",
]
