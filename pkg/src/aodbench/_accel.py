"""Select numba-compiled kernels or the pure-numpy path.

``AODBENCH_NUMBA=0`` forces the numpy path; otherwise numba is used when it
imports. Both paths produce bit-identical results.
"""
import os

JIT_OPTIONS = {"nogil": True, "cache": True}

_flag = os.environ.get("AODBENCH_NUMBA", "1").strip().lower()
USE_NUMBA = _flag not in ("0", "false", "no", "off")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if not USE_NUMBA:
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def thread_cap() -> int | None:
    """Worker cap from ``AODBENCH_THREADS``; None means machine parallelism."""
    raw = os.environ.get("AODBENCH_THREADS")
    if not raw:
        return None
    n = int(raw)
    if n < 1:
        raise ValueError("AODBENCH_THREADS must be >= 1")
    return n
