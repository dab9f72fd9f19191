"""Numba switch.

Set ``MFCHOICE_DISABLE_NUMBA=1`` before import to run every kernel as plain
numpy. Both paths execute the same source.
"""
import os

ENABLE_NUMBA = os.environ.get("MFCHOICE_DISABLE_NUMBA", "0").lower() not in ("1", "true", "yes")
CACHE_NUMBA = True

if ENABLE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover
        ENABLE_NUMBA = False


def jit_decorator(func):
    if ENABLE_NUMBA:
        return numba.njit(cache=CACHE_NUMBA)(func)
    return func


def backend():
    return "numba" if ENABLE_NUMBA else "numpy"
