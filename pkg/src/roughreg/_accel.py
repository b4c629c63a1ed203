"""Switch between numba-compiled loops and plain numpy fallbacks.

Set ``ROUGHREG_NO_JIT=1`` to force the numpy code paths (useful when numba
is unavailable or when debugging a kernel).
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAVE_NUMBA = False


def _env_disables_jit():
    return os.environ.get("ROUGHREG_NO_JIT", "").strip().lower() in ("1", "true", "yes", "on")


use_jit = HAVE_NUMBA and not _env_disables_jit()


def njit(func):
    """Compile ``func`` with numba when available, otherwise return it unchanged."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True)(func)


def pick(loop_impl, numpy_impl):
    """Return the kernel implementation selected by the environment flag."""
    return loop_impl if use_jit else numpy_impl
