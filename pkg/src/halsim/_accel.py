"""Backend switch for the hot kernels.

Set ``HALSIM_DISABLE_NUMBA=1`` to force the vectorized numpy implementations.
When numba cannot be imported the numpy path is used as well.
"""
import os

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    NUMBA_AVAILABLE = False

_FLAG = os.environ.get("HALSIM_DISABLE_NUMBA", "").strip().lower()
NUMBA_ENABLED = NUMBA_AVAILABLE and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise."""
    if not NUMBA_AVAILABLE:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def backend_name():
    return "numba" if NUMBA_ENABLED else "numpy"
