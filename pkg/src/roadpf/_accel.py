"""JIT dispatch.

Hot loops are written twice: a numba-compiled loop kernel and a vectorised
numpy equivalent. ``ROADPF_DISABLE_JIT=1`` (or a missing numba install)
selects the numpy path at import time.
"""
import os

_FLAG = os.environ.get("ROADPF_DISABLE_JIT", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_JIT = HAVE_NUMBA and _FLAG not in {"1", "true", "yes", "on"}


def njit(*args, **kwargs):
    """``numba.njit`` with ``cache=True``, or a no-op decorator without numba."""
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda func: func
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def select(jitted, fallback):
    return jitted if USE_JIT else fallback


def backend() -> str:
    return "numba" if USE_JIT else "numpy"
