"""Numba switch.

Set ``DHG_DISABLE_JIT=1`` to force the pure-numpy code paths, e.g. when
debugging or on platforms without numba.
"""
import os

_flag = os.environ.get("DHG_DISABLE_JIT", "0").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dep, but stay importable
    numba = None

USE_NUMBA = numba is not None and _flag in ("", "0", "false", "no")


def njit(fn):
    """Compile ``fn`` in nopython mode when numba is enabled, else return it."""
    if not USE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True, fastmath=False)(fn)
