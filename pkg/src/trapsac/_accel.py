"""Numba switch for the hot simulation kernels.

Kernels in :mod:`trapsac.kernels` are written once in a numba-compatible
subset of numpy and decorated with :func:`jit`.  When numba is importable and
``TRAPSAC_NUMBA`` is not set to ``0``, they are compiled in nopython mode;
otherwise the very same functions run as plain numpy/Python.
"""

import os

_FLAG = os.environ.get("TRAPSAC_NUMBA", "1").strip().lower()
_REQUESTED = _FLAG not in ("0", "false", "no", "off")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = _REQUESTED and numba is not None

# fastmath stays off: byte-identical trajectories are part of the contract.
_NUMBA_KWARGS = {"nopython": True, "cache": True, "fastmath": False, "nogil": True}


def jit(func):
    """Compile ``func`` with numba if enabled, else return it unchanged."""
    if USE_NUMBA:
        return numba.jit(**_NUMBA_KWARGS)(func)
    return func


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
