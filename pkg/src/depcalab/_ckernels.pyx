# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the loops in ``_pykernels``."""
import numpy as np
from libc.math cimport sqrt


def chain_products(steps, init):
    cdef const double[:, :, :, ::1] S = np.ascontiguousarray(steps, dtype=np.float64)
    cdef Py_ssize_t B = S.shape[0], L = S.shape[1], q = S.shape[2]
    out_arr = np.empty((B, L + 1, q, q))
    out_arr[:, 0] = init
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, l, i, j, k
    cdef double acc
    with nogil:
        for b in range(B):
            for l in range(L):
                for i in range(q):
                    for j in range(q):
                        acc = 0.0
                        for k in range(q):
                            acc = acc + S[b, l, i, k] * out[b, l, k, j]
                        out[b, l + 1, i, j] = acc
    return out_arr


def projected_sweep_forward(C, h, P):
    cdef const double[:, :, ::1] Cv = np.ascontiguousarray(C, dtype=np.float64)
    cdef const double[:, ::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef const double[:, :, ::1] Pv = np.ascontiguousarray(P, dtype=np.float64)
    cdef Py_ssize_t W = hv.shape[0], q = hv.shape[1]
    s_arr = np.zeros((W, q))
    tmp_arr = np.empty(q)
    cdef double[:, ::1] s = s_arr
    cdef double[::1] tmp = tmp_arr
    cdef Py_ssize_t n, i, k
    cdef double acc
    with nogil:
        for n in range(W - 1):
            for i in range(q):
                acc = hv[n, i]
                for k in range(q):
                    acc = acc + Cv[n, i, k] * s[n, k]
                tmp[i] = acc
            for i in range(q):
                acc = 0.0
                for k in range(q):
                    acc = acc + Pv[n + 1, i, k] * tmp[k]
                s[n + 1, i] = acc
    return s_arr


def projected_sweep_backward(Cinv, h, Q):
    cdef const double[:, :, ::1] Cv = np.ascontiguousarray(Cinv, dtype=np.float64)
    cdef const double[:, ::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef const double[:, :, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
    cdef Py_ssize_t W = hv.shape[0], q = hv.shape[1]
    u_arr = np.zeros((W, q))
    d_arr = np.empty(q)
    t_arr = np.empty(q)
    cdef double[:, ::1] u = u_arr
    cdef double[::1] d = d_arr
    cdef double[::1] t = t_arr
    cdef Py_ssize_t n, i, k
    cdef double acc
    with nogil:
        for n in range(W - 2, -1, -1):
            for i in range(q):
                d[i] = u[n + 1, i] - hv[n, i]
            for i in range(q):
                acc = 0.0
                for k in range(q):
                    acc = acc + Cv[n, i, k] * d[k]
                t[i] = acc
            for i in range(q):
                acc = 0.0
                for k in range(q):
                    acc = acc + Qv[n, i, k] * t[k]
                u[n, i] = acc
    return u_arr


def remote_variation(values, shifts, idx):
    cdef const double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const long long[::1] sh = np.ascontiguousarray(shifts, dtype=np.int64)
    cdef const long long[::1] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef Py_ssize_t S = sh.shape[0], I = ix.shape[0], q = v.shape[1]
    out_arr = np.zeros(S)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t j, a, k
    cdef long long i0, i1
    cdef double best, acc, d
    with nogil:
        for j in range(S):
            best = 0.0
            for a in range(I):
                i0 = ix[a]
                i1 = i0 + sh[j]
                acc = 0.0
                for k in range(q):
                    d = v[i1, k] - v[i0, k]
                    acc = acc + d * d
                if acc > best:
                    best = acc
            out[j] = sqrt(best)
    return out_arr
