"""Optional numba acceleration.

Set ``TAPEM_DISABLE_NUMBA=1`` to force the pure numpy/python kernels.  Both
paths are required to produce identical results; the flag is read once at
import time.
"""

import os

_FLAG = os.environ.get("TAPEM_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG not in ("", "0", "false", "no")

try:
    if DISABLED_BY_ENV:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


def jit(func):
    """Compile ``func`` with ``numba.njit`` when available, else return it unchanged."""
    if HAVE_NUMBA:
        return numba.njit(cache=True)(func)
    return func


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
