"""JIT switch for the hot kernels.

Kernels are written once in the numba-compatible subset of Python. When
numba is importable and ``OXSIM_NO_NUMBA`` is unset (or ``0``), they are
compiled with ``@njit``; otherwise the very same functions run as plain
Python/numpy code. Both paths consume identical random streams.
"""

import os

NUMBA_REQUESTED = os.environ.get("OXSIM_NO_NUMBA", "0").strip().lower() in ("", "0", "false", "no")

try:
    if not NUMBA_REQUESTED:
        raise ImportError
    from numba import njit as _njit

    NUMBA_ENABLED = True
except ImportError:
    NUMBA_ENABLED = False
    _njit = None


def njit(*args, **kwargs):
    """``numba.njit`` when acceleration is on, identity decorator otherwise."""
    if NUMBA_ENABLED:
        kwargs.setdefault("cache", True)
        return _njit(*args, **kwargs)

    def decorator(func):
        return func

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return decorator
