"""Optional numba acceleration.

Kernels are written once as plain Python loops.  When numba is importable and
``PBFCONTROL_NUMBA`` is not set to ``0``, they are compiled with ``njit``;
otherwise callers fall back to the vectorized numpy paths in
:mod:`pbfcontrol.kernels`.
"""
from __future__ import annotations

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def numba_enabled() -> bool:
    """True when the compiled kernels should be used (read on every call)."""
    flag = os.environ.get("PBFCONTROL_NUMBA", "1").strip().lower()
    return HAVE_NUMBA and flag not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or an identity decorator without numba."""
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)
