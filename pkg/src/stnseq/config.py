"""Global numeric precision switch.

Gradient checks need float64; training runs want float32. Everything that
allocates parameters or converts input data asks this module for the active
dtype, so one switch controls the whole stack.
"""

import contextlib

import numpy as np

_ALLOWED = (np.dtype(np.float32), np.dtype(np.float64))
_dtype = np.dtype(np.float64)


def dtype() -> np.dtype:
    """Active floating-point dtype (float64 by default)."""
    return _dtype


def set_dtype(d) -> None:
    global _dtype
    d = np.dtype(d)
    if d not in _ALLOWED:
        raise ValueError(f"unsupported dtype {d}; use float32 or float64")
    _dtype = d


@contextlib.contextmanager
def precision(d):
    """Temporarily switch the global dtype, e.g. ``with precision('float32'): ...``"""
    old = _dtype
    set_dtype(d)
    try:
        yield
    finally:
        set_dtype(old)
