"""Backend switch for the hot propagation kernels.

``QBILINEAR_BACKEND=numpy`` (or a missing numba install) selects the
vectorised numpy/scipy implementations; the default is the numba-compiled
loop kernels.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_requested = os.environ.get("QBILINEAR_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise RuntimeError(f"QBILINEAR_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

USE_NUMBA = numba is not None and _requested == "numba"


def njit(func):
    if numba is None:
        return func
    return numba.njit(cache=True, fastmath=True)(func)
