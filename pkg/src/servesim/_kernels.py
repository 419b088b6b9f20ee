"""Roofline reduction over a (layers x grid points) cost matrix.

Two interchangeable backends: numba-compiled loops and plain numpy. The
``SERVESIM_BACKEND`` environment variable picks one (``numba`` or ``numpy``);
by default numba is used when it imports.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # optional dependency
    numba = None


def _times_numpy(flops, nbytes, peak, bw):
    return np.maximum(flops / peak, nbytes / bw)


def _total_numpy(flops, nbytes, mult, peak, bw):
    return mult @ np.maximum(flops / peak, nbytes / bw)


if numba is not None:

    @numba.njit(cache=True)
    def _times_numba(flops, nbytes, peak, bw):
        n_l, n_p = flops.shape
        out = np.empty((n_l, n_p))
        for i in range(n_l):
            for j in range(n_p):
                c = flops[i, j] / peak
                m = nbytes[i, j] / bw
                out[i, j] = c if c > m else m
        return out

    @numba.njit(cache=True)
    def _total_numba(flops, nbytes, mult, peak, bw):
        n_l, n_p = flops.shape
        out = np.zeros(n_p)
        for i in range(n_l):
            w = mult[i]
            for j in range(n_p):
                c = flops[i, j] / peak
                m = nbytes[i, j] / bw
                out[j] += w * (c if c > m else m)
        return out


_IMPLS = {"numpy": (_times_numpy, _total_numpy)}
if numba is not None:
    _IMPLS["numba"] = (_times_numba, _total_numba)

_backend = "numpy"


def available_backends() -> list[str]:
    return sorted(_IMPLS)


def set_backend(name: str) -> None:
    global _backend
    if name not in _IMPLS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    _backend = name


def get_backend() -> str:
    return _backend


def roofline_times(flops, nbytes, peak: float, bw: float) -> np.ndarray:
    """Per-entry max(flops/peak, bytes/bw) for 2-D float arrays."""
    f = np.ascontiguousarray(flops, dtype=np.float64)
    b = np.ascontiguousarray(nbytes, dtype=np.float64)
    return _IMPLS[_backend][0](f, b, float(peak), float(bw))


def roofline_total(flops, nbytes, mult, peak: float, bw: float) -> np.ndarray:
    """Column sums of the roofline times with row weights ``mult``."""
    f = np.ascontiguousarray(flops, dtype=np.float64)
    b = np.ascontiguousarray(nbytes, dtype=np.float64)
    m = np.ascontiguousarray(mult, dtype=np.float64)
    return _IMPLS[_backend][1](f, b, m, float(peak), float(bw))


_requested = os.environ.get("SERVESIM_BACKEND", "").strip().lower()
if _requested:
    set_backend(_requested)
elif "numba" in _IMPLS:
    _backend = "numba"
