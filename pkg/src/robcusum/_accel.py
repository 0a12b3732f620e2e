"""Numba switch.

Set ``ROBCUSUM_DISABLE_NUMBA=1`` before import to run every kernel through
its pure-numpy fallback. The flag is read once at import time.
"""

import os

_FLAG = os.environ.get("ROBCUSUM_DISABLE_NUMBA", "").strip().lower()

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(func):
    """Compile ``func`` in nopython mode with on-disk caching."""
    if not HAS_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)


def backend():
    return "numba" if USE_NUMBA else "numpy"
