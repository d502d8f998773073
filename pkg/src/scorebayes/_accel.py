"""Numba switch.

Kernels are compiled with ``numba.njit`` when numba is importable and the
environment variable ``SCOREBAYES_DISABLE_NUMBA`` is unset (or ``0``).
Otherwise every kernel falls back to its pure-numpy twin.
"""
import os

_flag = os.environ.get("SCOREBAYES_DISABLE_NUMBA", "0").strip().lower()
DISABLED_BY_ENV = _flag not in ("", "0", "false", "no")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not DISABLED_BY_ENV


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise.

    Compilation happens regardless of the env flag so that benchmarks and
    equivalence tests can reach both paths; dispatch is decided by
    :data:`USE_NUMBA`.
    """
    kwargs.setdefault("cache", True)

    def wrap(func):
        if not HAVE_NUMBA:
            return func
        return numba.njit(**kwargs)(func)

    if args and callable(args[0]):
        return wrap(args[0])
    return wrap


def backend():
    return "numba" if USE_NUMBA else "numpy"
