"""Thin ctypes binding to the system UMFPACK shared library.

UMFPACK (SuiteSparse) factors the condensed trace systems with a fraction of
the memory SuperLU needs, which is what makes the larger 3D studies fit in
RAM.  Only the double precision / 32-bit index entry points are bound; when
the library is absent ``available`` is False and callers fall back to scipy.
"""

from __future__ import annotations

import ctypes
import ctypes.util
from ctypes import POINTER, byref, c_double, c_int, c_void_p

import numpy as np

# sizes and offsets from umfpack.h (stable across the 5.x series)
_CONTROL_LEN = 20
_INFO_LEN = 90
_STRATEGY = 5
_STRATEGY_SYMMETRIC = 3
_ORDERING = 10
_ORDERING_METIS = 3
_SYS_A = 0
_INFO_LNZ = 43
_INFO_UNZ = 44
_INFO_PEAK_MEMORY = 41
_INFO_PEAK_MEMORY_ESTIMATE = 21
_INFO_SIZE_OF_UNIT = 3
_OK = 0


def available_memory_bytes() -> int | None:
    """MemAvailable from /proc/meminfo, None where the file is missing."""
    try:
        with open("/proc/meminfo") as fh:
            for line in fh:
                if line.startswith("MemAvailable:"):
                    return int(line.split()[1]) * 1024
    except OSError:
        pass
    return None


def _load():
    for name in ("libumfpack.so.5", "libumfpack.so"):
        try:
            return ctypes.CDLL(name)
        except OSError:
            continue
    path = ctypes.util.find_library("umfpack")
    if path:
        try:
            return ctypes.CDLL(path)
        except OSError:
            pass
    return None


_lib = _load()
available = _lib is not None

if available:
    _ip = POINTER(c_int)
    _dp = POINTER(c_double)
    _lib.umfpack_di_defaults.argtypes = [_dp]
    _lib.umfpack_di_defaults.restype = None
    _lib.umfpack_di_symbolic.argtypes = [
        c_int, c_int, _ip, _ip, _dp, POINTER(c_void_p), _dp, _dp,
    ]
    _lib.umfpack_di_symbolic.restype = c_int
    _lib.umfpack_di_numeric.argtypes = [
        _ip, _ip, _dp, c_void_p, POINTER(c_void_p), _dp, _dp,
    ]
    _lib.umfpack_di_numeric.restype = c_int
    _lib.umfpack_di_solve.argtypes = [
        c_int, _ip, _ip, _dp, _dp, _dp, c_void_p, _dp, _dp,
    ]
    _lib.umfpack_di_solve.restype = c_int
    _lib.umfpack_di_free_symbolic.argtypes = [POINTER(c_void_p)]
    _lib.umfpack_di_free_symbolic.restype = None
    _lib.umfpack_di_free_numeric.argtypes = [POINTER(c_void_p)]
    _lib.umfpack_di_free_numeric.restype = None


def _as_ptr(arr, ctype):
    return arr.ctypes.data_as(POINTER(ctype))


class UmfpackLU:
    """LU factorization of a square CSC matrix, symmetric pivoting strategy.

    Holds the matrix arrays alive for the lifetime of the factorization
    because umfpack_di_solve re-reads them for iterative refinement.
    """

    def __init__(self, matrix, ordering: int | None = None):
        if not available:
            raise RuntimeError("UMFPACK shared library not found")
        m = matrix.tocsc()
        m.sort_indices()
        if m.shape[0] != m.shape[1]:
            raise ValueError("matrix must be square")
        self._n = int(m.shape[0])
        self._ap = np.ascontiguousarray(m.indptr, dtype=np.int32)
        self._ai = np.ascontiguousarray(m.indices, dtype=np.int32)
        self._ax = np.ascontiguousarray(m.data, dtype=np.float64)
        self._control = np.zeros(_CONTROL_LEN)
        _lib.umfpack_di_defaults(_as_ptr(self._control, c_double))
        self._control[_STRATEGY] = _STRATEGY_SYMMETRIC
        if ordering is not None:
            self._control[_ORDERING] = ordering
        self._info = np.zeros(_INFO_LEN)
        sym = c_void_p()
        status = _lib.umfpack_di_symbolic(
            self._n, self._n,
            _as_ptr(self._ap, c_int), _as_ptr(self._ai, c_int),
            _as_ptr(self._ax, c_double),
            byref(sym),
            _as_ptr(self._control, c_double), _as_ptr(self._info, c_double),
        )
        if status != _OK:
            raise RuntimeError(f"umfpack symbolic analysis failed (status {status})")
        est = self._info[_INFO_PEAK_MEMORY_ESTIMATE] * self._info[_INFO_SIZE_OF_UNIT]
        budget = available_memory_bytes()
        if budget is not None and est > 0.5 * budget:
            _lib.umfpack_di_free_symbolic(byref(sym))
            raise RuntimeError(
                f"umfpack projected peak {est / 2**30:.1f} GiB exceeds the "
                f"memory budget ({budget / 2**30:.1f} GiB available)"
            )
        self._numeric = c_void_p()
        status = _lib.umfpack_di_numeric(
            _as_ptr(self._ap, c_int), _as_ptr(self._ai, c_int),
            _as_ptr(self._ax, c_double),
            sym, byref(self._numeric),
            _as_ptr(self._control, c_double), _as_ptr(self._info, c_double),
        )
        _lib.umfpack_di_free_symbolic(byref(sym))
        if status != _OK:
            self._numeric = None
            raise RuntimeError(f"umfpack numeric factorization failed (status {status})")
        self.nnz = int(self._info[_INFO_LNZ] + self._info[_INFO_UNZ])
        self.peak_bytes = int(
            self._info[_INFO_PEAK_MEMORY] * self._info[_INFO_SIZE_OF_UNIT]
        )

    def solve(self, rhs) -> np.ndarray:
        b = np.ascontiguousarray(rhs, dtype=np.float64)
        if b.shape != (self._n,):
            raise ValueError(f"rhs must have shape ({self._n},)")
        x = np.empty(self._n)
        status = _lib.umfpack_di_solve(
            _SYS_A,
            _as_ptr(self._ap, c_int), _as_ptr(self._ai, c_int),
            _as_ptr(self._ax, c_double),
            _as_ptr(x, c_double), _as_ptr(b, c_double),
            self._numeric,
            _as_ptr(self._control, c_double), _as_ptr(self._info, c_double),
        )
        if status != _OK:
            raise RuntimeError(f"umfpack solve failed (status {status})")
        return x

    def __del__(self):
        num = getattr(self, "_numeric", None)
        if num and _lib is not None:
            _lib.umfpack_di_free_numeric(byref(num))
