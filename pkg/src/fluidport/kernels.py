"""Hot numerical kernels with a compiled fast path.

Two operations dominate runtime at full scale: accumulating channel tables
as sums of per-path rank-1 outer products, and reducing stacks of tables to
a port-selection distance map.  Both are provided by the Cython extension
``fluidport._kernels`` when it was built, with equivalent NumPy
implementations as fallback.  The backend is chosen once at import time;
set ``FLUIDPORT_NO_EXT=1`` to force the NumPy path (the benchmark uses
this to compare the two).
"""

import os

import numpy as np

try:
    if os.environ.get("FLUIDPORT_NO_EXT"):
        _ext = None
    else:
        from . import _kernels as _ext
except ImportError:
    _ext = None

BACKEND = "cython" if _ext is not None else "numpy"


def synth_tables_numpy(weights, row_factors, col_factors):
    """Accumulate ``out[s,n,m] = sum_p weights[s,p] * row[p,n] * col[p,m]``.

    weights: (S, P) complex128, one row per output slot (a time instant,
    a BS antenna, or any combination flattened by the caller).
    row_factors: (P, N) complex128 per-path z-axis port factors.
    col_factors: (P, M) complex128 per-path y-axis port factors.
    Returns (S, N, M) complex128.
    """
    return np.einsum("sp,pn,pm->snm", weights, row_factors, col_factors)


def selection_distance_numpy(s_stack, h_stack):
    """Per-port distance ``D[n,m] = sum_i |S[i,n,m] - H[i,n,m]|``."""
    return np.abs(s_stack - h_stack).sum(axis=0)


def synth_tables(weights, row_factors, col_factors):
    weights = np.ascontiguousarray(weights, dtype=np.complex128)
    row_factors = np.ascontiguousarray(row_factors, dtype=np.complex128)
    col_factors = np.ascontiguousarray(col_factors, dtype=np.complex128)
    if _ext is not None:
        return _ext.synth_tables(weights, row_factors, col_factors)
    return synth_tables_numpy(weights, row_factors, col_factors)


def selection_distance(s_stack, h_stack):
    s_stack = np.ascontiguousarray(s_stack, dtype=np.complex128)
    h_stack = np.ascontiguousarray(h_stack, dtype=np.complex128)
    if s_stack.shape != h_stack.shape:
        raise ValueError(
            f"stack shapes differ: {s_stack.shape} vs {h_stack.shape}"
        )
    if _ext is not None:
        return _ext.selection_distance(s_stack, h_stack)
    return selection_distance_numpy(s_stack, h_stack)
