"""Optional numba acceleration.

Set ``TANGLEPROOF_NO_JIT=1`` to run the kernels as plain Python over numpy
arrays. The two paths execute the same function bodies.
"""

import os

DISABLED = os.environ.get("TANGLEPROOF_NO_JIT", "").strip().lower() in {"1", "true", "yes"}

try:
    if DISABLED:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised by the env flag
    HAVE_NUMBA = False


def jit(fn):
    if HAVE_NUMBA:
        return _njit(cache=True, nogil=True)(fn)
    return fn


def backend() -> str:
    return "numba" if HAVE_NUMBA else "python"
