"""Numba acceleration toggle.

Hot inner loops ship in two variants: a numba @njit kernel and a pure-numpy
fallback. The env var DSRF_NUMBA selects the path at import time
(DSRF_NUMBA=0 forces the numpy fallback; default is numba when importable).
"""

import os

NUMBA_ENABLED = os.environ.get("DSRF_NUMBA", "1") != "0"

if NUMBA_ENABLED:
    try:
        import numba
    except ImportError:  # pragma: no cover
        NUMBA_ENABLED = False


def njit(*args, **kwargs):
    """numba.njit when enabled, identity decorator otherwise."""
    if NUMBA_ENABLED:
        import numba
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda fn: fn
