"""Backend selection for the hot kernels.

Numba is used when importable unless ``SUBDIFF_NUMBA=0`` is set in the
environment, in which case every kernel dispatches to its vectorized numpy
twin.  Both variants are always importable so they can be compared.
"""
from __future__ import annotations

import os

try:
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

HAVE_NUMBA = _numba is not None


def numba_enabled() -> bool:
    flag = os.environ.get("SUBDIFF_NUMBA", "1").strip().lower()
    return HAVE_NUMBA and flag not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is installed, identity otherwise."""
    if _numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    return _numba.njit(*args, **kwargs)


def max_workers() -> int:
    cap = os.environ.get("SUBDIFF_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = max(1, min(n, int(cap)))
        except ValueError:
            pass
    return n
