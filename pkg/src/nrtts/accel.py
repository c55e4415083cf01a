"""Numba acceleration switch.

Hot kernels in :mod:`nrtts.kernels` come in two flavours: an explicit-loop
version compiled with ``numba.njit`` and a vectorized pure-numpy version.
Selection happens once at import time:

* ``NRTTS_DISABLE_NUMBA=1`` forces the numpy path,
* otherwise the numba path is used whenever numba imports cleanly.

Both paths are exported unconditionally so tests and the benchmark in
``benchmarks/kernel_bench.py`` can compare them directly.
"""
import os

ENV_FLAG = "NRTTS_DISABLE_NUMBA"

try:
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
    _njit = None
    HAS_NUMBA = False


def _flag_disabled() -> bool:
    return os.environ.get(ENV_FLAG, "0").strip().lower() in ("1", "true", "yes")


USE_NUMBA = HAS_NUMBA and not _flag_disabled()


def maybe_jit(fn):
    """Compile ``fn`` with numba when enabled, else return it unchanged."""
    if USE_NUMBA:
        return _njit(fn, cache=True, fastmath=False)
    return fn


def jit_always(fn):
    """Compile with numba regardless of the env flag (None if unavailable)."""
    if HAS_NUMBA:
        return _njit(fn, cache=True, fastmath=False)
    return None
