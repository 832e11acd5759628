# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled quadrature kernels.

Same contract as numpy_ref: batched evaluation of the smoothed rectified
cosine average h(z) and its z-gradient on a shared 1-D angle grid (tensor
product) or on fixed Monte-Carlo cosine samples.  Loops are axis-major and
single-threaded so output is deterministic.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

NAME = "compiled"


cdef void _tensor_one(const double* z, Py_ssize_t N, const double* c,
                      Py_ssize_t n, double smooth_rel,
                      double* h_out, double* g_out, Py_ssize_t* idx) nogil:
    cdef double znorm2 = 0.0
    cdef Py_ssize_t k, i, j, l
    cdef double tau2, sr2, acc_h, acc_iw, S, W, R, s0, s1
    cdef double cells
    for k in range(N):
        znorm2 += z[k] * z[k]
        g_out[k] = 0.0
    if znorm2 == 0.0:
        h_out[0] = 0.0
        return
    sr2 = smooth_rel * smooth_rel
    tau2 = sr2 * znorm2
    acc_h = 0.0
    acc_iw = 0.0

    if N == 1:
        for i in range(n):
            S = z[0] * c[i]
            W = sqrt(S * S + tau2)
            acc_h += W
            acc_iw += 1.0 / W
            g_out[0] += (S / W) * c[i]
        cells = <double> n
    elif N == 2:
        for i in range(n):
            s0 = z[0] * c[i]
            for j in range(n):
                S = s0 + z[1] * c[j]
                W = sqrt(S * S + tau2)
                acc_h += W
                acc_iw += 1.0 / W
                R = S / W
                g_out[0] += R * c[i]
                g_out[1] += R * c[j]
        cells = <double> (n * n)
    elif N == 3:
        for i in range(n):
            s0 = z[0] * c[i]
            for j in range(n):
                s1 = s0 + z[1] * c[j]
                for l in range(n):
                    S = s1 + z[2] * c[l]
                    W = sqrt(S * S + tau2)
                    acc_h += W
                    acc_iw += 1.0 / W
                    R = S / W
                    g_out[0] += R * c[i]
                    g_out[1] += R * c[j]
                    g_out[2] += R * c[l]
        cells = <double> (n * n * n)
    else:
        # odometer over the N-fold grid
        cells = 1.0
        for k in range(N):
            idx[k] = 0
            cells *= <double> n
        while True:
            S = 0.0
            for k in range(N):
                S += z[k] * c[idx[k]]
            W = sqrt(S * S + tau2)
            acc_h += W
            acc_iw += 1.0 / W
            R = S / W
            for k in range(N):
                g_out[k] += R * c[idx[k]]
            k = N - 1
            while k >= 0:
                idx[k] += 1
                if idx[k] < n:
                    break
                idx[k] = 0
                k -= 1
            if k < 0:
                break

    h_out[0] = acc_h / cells
    for k in range(N):
        g_out[k] = g_out[k] / cells + sr2 * z[k] * (acc_iw / cells)


def tensor_h_grad(Z, cos_table, double smooth_rel):
    """h and dh/dz on a tensor grid for a batch Z of shape (M, N)."""
    cdef cnp.ndarray[double, ndim=2, mode="c"] Zc = \
        np.ascontiguousarray(np.atleast_2d(Z), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] cc = \
        np.ascontiguousarray(cos_table, dtype=np.float64)
    cdef Py_ssize_t M = Zc.shape[0]
    cdef Py_ssize_t N = Zc.shape[1]
    cdef Py_ssize_t n = cc.shape[0]
    cdef cnp.ndarray[double, ndim=1, mode="c"] h = np.empty(M)
    cdef cnp.ndarray[double, ndim=2, mode="c"] g = np.empty((M, N))
    cdef cnp.ndarray[cnp.intp_t, ndim=1, mode="c"] idx = np.zeros(N, dtype=np.intp)
    cdef Py_ssize_t m
    for m in range(M):
        _tensor_one(&Zc[m, 0], N, &cc[0], n, smooth_rel,
                    &h[m], &g[m, 0], <Py_ssize_t*> &idx[0])
    return h, g


def mc_h_grad(Z, cos_samples, double smooth_rel):
    """h and dh/dz over fixed Monte-Carlo cosine samples of shape (S, N)."""
    cdef cnp.ndarray[double, ndim=2, mode="c"] Zc = \
        np.ascontiguousarray(np.atleast_2d(Z), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] Cc = \
        np.ascontiguousarray(cos_samples, dtype=np.float64)
    cdef Py_ssize_t M = Zc.shape[0]
    cdef Py_ssize_t N = Zc.shape[1]
    cdef Py_ssize_t S_count = Cc.shape[0]
    cdef cnp.ndarray[double, ndim=1, mode="c"] h = np.empty(M)
    cdef cnp.ndarray[double, ndim=2, mode="c"] g = np.empty((M, N))
    cdef Py_ssize_t m, s, k
    cdef double znorm2, tau2, sr2, acc_h, acc_iw, S, W, R
    for m in range(M):
        znorm2 = 0.0
        for k in range(N):
            znorm2 += Zc[m, k] * Zc[m, k]
            g[m, k] = 0.0
        if znorm2 == 0.0:
            h[m] = 0.0
            continue
        sr2 = smooth_rel * smooth_rel
        tau2 = sr2 * znorm2
        acc_h = 0.0
        acc_iw = 0.0
        for s in range(S_count):
            S = 0.0
            for k in range(N):
                S += Zc[m, k] * Cc[s, k]
            W = sqrt(S * S + tau2)
            acc_h += W
            acc_iw += 1.0 / W
            R = S / W
            for k in range(N):
                g[m, k] += R * Cc[s, k]
        h[m] = acc_h / S_count
        for k in range(N):
            g[m, k] = g[m, k] / S_count + sr2 * Zc[m, k] * (acc_iw / S_count)
    return h, g
