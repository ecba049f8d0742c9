"""JIT switch for the hot kernels.

Set ``GIRSANOV_GRAD_DISABLE_NUMBA=1`` to run the pure-numpy fallback path
(also used automatically when numba cannot be imported).
"""
import os

_DISABLE = os.environ.get("GIRSANOV_GRAD_DISABLE_NUMBA", "").strip().lower() in (
    "1",
    "true",
    "yes",
)

try:
    if _DISABLE:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLE


def njit(*args, **kwargs):
    """``numba.njit`` when acceleration is on, identity otherwise."""
    if not USE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    if args and callable(args[0]):
        return numba.njit(**kwargs)(args[0])
    return numba.njit(*args, **kwargs)


def default_threads():
    raw = os.environ.get("GIRSANOV_GRAD_THREADS")
    if raw:
        n = int(raw)
        if n < 1:
            raise ValueError("GIRSANOV_GRAD_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1
