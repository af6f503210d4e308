"""Switch between numba-compiled kernels and their pure numpy fallbacks.

Set ``CEPD_DISABLE_NUMBA=1`` before import to run everything without numba.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("CEPD_DISABLE_NUMBA", "").lower() not in (
    "1",
    "true",
    "yes",
)


def njit(func):
    """Compile ``func`` with numba when available; otherwise return it unchanged."""
    if not NUMBA_AVAILABLE:
        return func
    return numba.njit(cache=True, nogil=True)(func)
