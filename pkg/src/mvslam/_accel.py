"""Numba switch for the hot kernels.

Kernels in :mod:`mvslam.kernels` come in pairs: an ``@njit`` loop version and
a vectorised numpy version with identical semantics. The loop versions are used
when numba imports cleanly and ``MVSLAM_DISABLE_NUMBA`` is unset (or ``0``).
"""

import os

DISABLE_ENV = "MVSLAM_DISABLE_NUMBA"

try:
    import numba as _numba

    HAS_NUMBA = True
    # skip the TBB layer; older system TBB builds only produce a warning
    _numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    _numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get(DISABLE_ENV, "0") not in ("1", "true", "yes")


def njit(*args, **kwargs):
    """``numba.njit`` with caching on, or a no-op decorator without numba."""
    if not HAS_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return _numba.njit(*args, **kwargs)


if HAS_NUMBA:
    prange = _numba.prange
else:  # pragma: no cover
    prange = range


def pick(numba_impl, numpy_impl):
    return numba_impl if USE_NUMBA else numpy_impl
