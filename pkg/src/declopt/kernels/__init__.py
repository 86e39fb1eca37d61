"""Hot solver kernels with a compiled core and a NumPy fallback.

The compiled extension is preferred when it imported successfully; set the
environment variable ``DECLOPT_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _numpy

try:
    from . import _core
except ImportError:
    _core = None

if _core is not None and not os.environ.get("DECLOPT_PURE_PYTHON"):
    _impl = _core
else:
    _impl = _numpy

BACKEND = _impl.BACKEND
two_loop = _impl.two_loop
cauchy_point = _impl.cauchy_point


def available_backends():
    out = {"python": _numpy}
    if _core is not None:
        out["compiled"] = _core
    return out
