"""Backend switch for the hot numeric kernels.

Kernels are written once in a numba-compatible subset of numpy.  When numba
is importable and ``OPTOTOMO_BACKEND`` is not ``numpy`` they are compiled with
``numba.njit``; otherwise the identical Python source runs under plain numpy.
"""

import os

BACKEND_ENV = "OPTOTOMO_BACKEND"

_requested = os.environ.get(BACKEND_ENV, "numba").strip().lower()

try:
    if _requested == "numpy":
        raise ImportError
    import numba

    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False

BACKEND = "numba" if HAS_NUMBA else "numpy"


def kernel(func):
    """Compile ``func`` with numba when enabled, otherwise return it untouched.

    The undecorated function is kept on ``func.py_func`` in both cases so tests
    and benchmarks can compare the two paths in one process.
    """
    if HAS_NUMBA:
        compiled = numba.njit(cache=True)(func)
        return compiled
    func.py_func = func
    return func
