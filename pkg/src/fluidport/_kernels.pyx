# Compiled counterparts of fluidport.kernels.*_numpy.  Loops are fused so
# no (S, P, N, M) temporaries are materialized.

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def synth_tables(const double complex[:, ::1] weights,
                 const double complex[:, ::1] row_factors,
                 const double complex[:, ::1] col_factors):
    cdef Py_ssize_t S = weights.shape[0]
    cdef Py_ssize_t P = weights.shape[1]
    cdef Py_ssize_t N = row_factors.shape[1]
    cdef Py_ssize_t M = col_factors.shape[1]
    if row_factors.shape[0] != P or col_factors.shape[0] != P:
        raise ValueError("factor path counts do not match weights")

    out_arr = np.zeros((S, N, M), dtype=np.complex128)
    cdef double complex[:, :, ::1] out = out_arr
    cdef Py_ssize_t s, p, n, m
    cdef double complex w, wr

    for s in range(S):
        for p in range(P):
            w = weights[s, p]
            for n in range(N):
                wr = w * row_factors[p, n]
                for m in range(M):
                    out[s, n, m] = out[s, n, m] + wr * col_factors[p, m]
    return out_arr


def selection_distance(const double complex[:, :, ::1] s_stack,
                       const double complex[:, :, ::1] h_stack):
    cdef Py_ssize_t I = s_stack.shape[0]
    cdef Py_ssize_t N = s_stack.shape[1]
    cdef Py_ssize_t M = s_stack.shape[2]
    if h_stack.shape[0] != I or h_stack.shape[1] != N or h_stack.shape[2] != M:
        raise ValueError("stack shapes differ")

    out_arr = np.zeros((N, M), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, n, m
    cdef double re, im

    for i in range(I):
        for n in range(N):
            for m in range(M):
                re = s_stack[i, n, m].real - h_stack[i, n, m].real
                im = s_stack[i, n, m].imag - h_stack[i, n, m].imag
                out[n, m] += sqrt(re * re + im * im)
    return out_arr
