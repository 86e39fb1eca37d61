"""Bundled model files and seeded synthetic data generators.

Every generator draws from numpy's PCG64 stream, so an instance is bitwise
reproducible from its seed on any platform.  Each returns a
GeneratedInstance carrying the model text, an Env binding every parameter
(plus variable initial values where the model needs them), and whatever
ground truth the construction provides.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ..errors import FormatError, NonNumericCell
from ..expr import Env

MODEL_NAMES = (
    "logreg_l1",
    "logreg_l2",
    "svm_dual",
    "elastic_net",
    "nnls",
    "symnmf",
    "nonlinear_ls",
    "compressed_sensing",
)


def model_text(name):
    if name not in MODEL_NAMES:
        raise KeyError(f"unknown model {name!r}; choose from {MODEL_NAMES}")
    path = resources.files(__package__) / "models" / f"{name}.txt"
    return path.read_text(encoding="utf-8")


def list_models():
    """All bundled model texts, keyed by name."""
    return {name: model_text(name) for name in MODEL_NAMES}


@dataclass
class GeneratedInstance:
    name: str
    model: str
    bindings: Env
    ground_truth: dict = field(default_factory=dict)
    seed: int = 0


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def gen_elasticnet(m=200, n=200, seed=0, a1=0.5, a2=0.25):
    """Gaussian design with geometrically decaying alternating coefficients.

    y = X beta + k z with beta_j = (-1)^j exp(-j/10) (1-based j), z standard
    normal, and k scaled so the signal-to-noise ratio ||X beta||^2 / ||k z||^2
    equals 3.
    """
    rng = _rng(seed)
    X = rng.standard_normal((m, n))
    j = np.arange(1, n + 1)
    beta = (-1.0) ** j * np.exp(-j / 10.0)
    signal = X.dot(beta)
    z = rng.standard_normal(m)
    k = np.linalg.norm(signal) / (np.sqrt(3.0) * np.linalg.norm(z))
    y = signal + k * z
    env = Env({"X": X, "y": y, "a1": a1, "a2": a2, "n": 1.0 / (2.0 * m)})
    return GeneratedInstance("elastic_net", model_text("elastic_net"), env,
                             {"beta": beta, "snr_scale": k}, seed)


def gen_nnls(variant="i", seed=0, m=None, n=None):
    """The two nonnegative least squares regimes.

    Variant "i": uniform [0, 1] design (singular Gram when m < n), planted x
    with 1% nonzeros, y = sqrt(0.003) A x + 0.003 z.  Variant "ii": Gaussian
    design, 10% nonzeros, y = sqrt(1/6000) A x + 0.003 z.
    """
    rng = _rng(seed)
    if variant == "i":
        m = 100 if m is None else m
        n = 300 if n is None else n
        A = rng.uniform(0.0, 1.0, size=(m, n))
        sparsity = 0.01
        scale = np.sqrt(0.003)
    elif variant == "ii":
        m = 300 if m is None else m
        n = 150 if n is None else n
        A = rng.standard_normal((m, n))
        sparsity = 0.1
        scale = np.sqrt(1.0 / 6000.0)
    else:
        raise ValueError("variant must be 'i' or 'ii'")
    nnz = int(round(sparsity * n))
    x = np.zeros(n)
    support = rng.choice(n, size=nnz, replace=False)
    x[support] = rng.uniform(0.0, 1.0, size=nnz)
    z = rng.standard_normal(m)
    y = scale * A.dot(x) + 0.003 * z
    env = Env({"A": A, "b": y})
    return GeneratedInstance("nnls", model_text("nnls"), env,
                             {"x_planted": x, "nnz": nnz, "variant": variant},
                             seed)


def gen_symnmf(n=50, k=5, seed=0):
    """Exactly factorizable target T = U0 U0' with |N(0,1)| entries in U0.

    The optimal objective value is 0 by construction.  A random nonnegative
    starting point for U is bound as an initial value (the model alone does
    not determine the inner dimension k).
    """
    rng = _rng(seed)
    U0 = np.abs(rng.standard_normal((n, k)))
    T = U0.dot(U0.T)
    U_init = np.abs(rng.standard_normal((n, k))) * np.sqrt(T.mean() / k)
    env = Env({"X": T, "U": U_init}, symmetric=("X",))
    return GeneratedInstance("symnmf", model_text("symnmf"), env,
                             {"U_planted": U0, "optimal_value": 0.0}, seed)


def gen_compressed_sensing(m=150, n=200, nnz=15, seed=0):
    """Row-orthogonal measurement matrix with a planted sparse signal."""
    rng = _rng(seed)
    G = rng.standard_normal((n, m))
    Q, _ = np.linalg.qr(G)          # (n, m), orthonormal columns
    A = np.ascontiguousarray(Q.T)   # rows orthonormal: A A' = I
    x = np.zeros(n)
    support = rng.choice(n, size=nnz, replace=False)
    x[support] = rng.standard_normal(nnz)
    b = A.dot(x)
    env = Env({"A": A, "b": b})
    return GeneratedInstance("compressed_sensing",
                             model_text("compressed_sensing"), env,
                             {"x_planted": x, "nnz": nnz}, seed)


def sigmoid(s):
    return 1.0 / (1.0 + np.exp(-s))


def gen_nonlinear_ls(m=40, n=5, seed=0):
    """Squared sigmoid residuals against binary labels.

    The bundled model computes s * ||y - 0.5 tanh(0.5 X w) + 0.5||^2, and
    0.5 tanh(s/2) + 0.5 is the sigmoid, so binding y = b - 1 for binary
    labels b in {0, 1} makes the objective exactly s * ||sigmoid(Xw) - b||^2.
    """
    rng = _rng(seed)
    X = rng.standard_normal((m, n))
    w_true = rng.standard_normal(n)
    b = (rng.uniform(size=m) < sigmoid(X.dot(w_true))).astype(float)
    env = Env({"X": X, "y": b - 1.0, "s": 1.0})
    return GeneratedInstance("nonlinear_ls", model_text("nonlinear_ls"), env,
                             {"labels": b, "w_true": w_true}, seed)


def gen_logistic(which="l2", m=60, n=8, seed=0, reg=1e-4):
    """Random linearly separable-ish data for the logistic models.

    `c` is set to 1 / (reg * m): minimizing 0.5 w'w + c sum log(1 + e^-y X w)
    then matches the (reg/2)||w||^2 + (1/m) sum log(...) objective up to the
    constant factor reg.
    """
    if which not in ("l1", "l2"):
        raise ValueError("which must be 'l1' or 'l2'")
    rng = _rng(seed)
    X = rng.standard_normal((m, n))
    w_true = rng.standard_normal(n)
    y = np.sign(X.dot(w_true) + 0.3 * rng.standard_normal(m))
    y[y == 0] = 1.0
    c = 1.0 / (reg * m) if which == "l2" else 0.5
    env = Env({"X": X, "y": y, "c": c})
    name = "logreg_l1" if which == "l1" else "logreg_l2"
    return GeneratedInstance(name, model_text(name), env,
                             {"w_true": w_true}, seed)


def gaussian_kernel(X, gamma=0.5):
    sq = (X * X).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * X.dot(X.T)
    return np.exp(-gamma * np.maximum(d2, 0.0))


def gen_svm(m=60, n=4, seed=0, gamma=0.5, c=1.0):
    """Two Gaussian blobs with a Gaussian kernel matrix (gamma = 1/2, C = 1)."""
    rng = _rng(seed)
    half = m // 2
    X = np.concatenate([
        rng.standard_normal((half, n)) + 1.2,
        rng.standard_normal((m - half, n)) - 1.2,
    ])
    y = np.concatenate([np.ones(half), -np.ones(m - half)])
    K = gaussian_kernel(X, gamma)
    env = Env({"K": K, "c": c, "y": y}, symmetric=("K",))
    return GeneratedInstance("svm_dual", model_text("svm_dual"), env,
                             {"points": X, "gamma": gamma, "C": c}, seed)


GENERATORS = {
    "elastic_net": gen_elasticnet,
    "nnls_i": lambda seed=0, **kw: gen_nnls("i", seed=seed, **kw),
    "nnls_ii": lambda seed=0, **kw: gen_nnls("ii", seed=seed, **kw),
    "symnmf": gen_symnmf,
    "compressed_sensing": gen_compressed_sensing,
    "nonlinear_ls": gen_nonlinear_ls,
    "logreg_l1": lambda seed=0, **kw: gen_logistic("l1", seed=seed, **kw),
    "logreg_l2": lambda seed=0, **kw: gen_logistic("l2", seed=seed, **kw),
    "svm_dual": gen_svm,
}


def load_libsvm(path):
    """Read a LIBSVM-format text file into a dense (X, y) pair.

    Lines are  label index:value index:value ...  with 1-based indices.
    """
    labels = []
    rows = []
    width = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                labels.append(float(parts[0]))
            except ValueError:
                raise NonNumericCell(
                    f"{path}:{lineno}: label {parts[0]!r} is not numeric")
            row = {}
            for item in parts[1:]:
                try:
                    idx, val = item.split(":", 1)
                    idx = int(idx)
                    row[idx] = float(val)
                except ValueError:
                    raise NonNumericCell(
                        f"{path}:{lineno}: bad feature entry {item!r}")
                if idx < 1:
                    raise FormatError(
                        f"{path}:{lineno}: indices are 1-based, got {idx}")
                width = max(width, idx)
            rows.append(row)
    X = np.zeros((len(rows), width))
    for i, row in enumerate(rows):
        for idx, val in row.items():
            X[i, idx - 1] = val
    return X, np.asarray(labels)
