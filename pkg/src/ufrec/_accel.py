"""Numba switch.

Set ``UFREC_NUMBA=0`` to force the pure-numpy kernels. When numba is not
importable the numpy path is used regardless of the flag.
"""

import os

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("UFREC_NUMBA", "1").lower() not in ("0", "false", "no", "off")

JIT_OPTIONS = {
    "nogil": True,
    "cache": False,
}


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it unchanged."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(**JIT_OPTIONS)(fn)


def set_threads(n):
    """Cap numba worker threads (``UFREC_THREADS``)."""
    if HAVE_NUMBA and n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
