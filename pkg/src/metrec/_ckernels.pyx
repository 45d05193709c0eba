# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels in :mod:`metrec._pure`."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, pow

cnp.import_array()

cdef double DEGENERATE_DIST = 1e-12


def row_distances(const double[::1] u, const double[:, ::1] items):
    cdef Py_ssize_t n = items.shape[0], d = items.shape[1], i, j
    cdef double acc, diff
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(d):
                diff = items[i, j] - u[j]
                acc += diff * diff
            o[i] = sqrt(acc)
    return out


cdef inline bint _before(double sa, Py_ssize_t ia, double sb, Py_ssize_t ib) nogil:
    return sa < sb or (sa == sb and ia < ib)


def topk_indices(const double[::1] scores, Py_ssize_t k, excluded):
    # bounded insertion buffer; k is small relative to the item count
    cdef const cnp.npy_bool[::1] ex = np.ascontiguousarray(excluded, dtype=np.bool_)
    cdef Py_ssize_t n = scores.shape[0], i, pos, filled = 0
    if k > n:
        k = n
    buf_idx = np.empty(max(k, 1), dtype=np.int64)
    buf_sc = np.empty(max(k, 1), dtype=np.float64)
    cdef cnp.int64_t[::1] bi = buf_idx
    cdef double[::1] bs = buf_sc
    cdef double s
    with nogil:
        if k > 0:
            for i in range(n):
                if ex[i]:
                    continue
                s = scores[i]
                if filled == k and not _before(s, i, bs[k - 1], bi[k - 1]):
                    continue
                pos = filled if filled < k else k - 1
                while pos > 0 and _before(s, i, bs[pos - 1], bi[pos - 1]):
                    bs[pos] = bs[pos - 1]
                    bi[pos] = bi[pos - 1]
                    pos -= 1
                bs[pos] = s
                bi[pos] = i
                if filled < k:
                    filled += 1
    return buf_idx[:filled].copy()


def hinge_triplets(const double[:, ::1] ha, const double[:, ::1] hp,
                   const double[:, ::1] hn, double margin):
    cdef Py_ssize_t b = ha.shape[0], d = ha.shape[1], i, j
    loss = np.zeros(b, dtype=np.float64)
    ga = np.zeros((b, d), dtype=np.float64)
    gp = np.zeros((b, d), dtype=np.float64)
    gn = np.zeros((b, d), dtype=np.float64)
    cdef double[::1] lo = loss
    cdef double[:, ::1] gav = ga, gpv = gp, gnv = gn
    cdef double dap, dan, x, arg, up, un
    with nogil:
        for i in range(b):
            dap = 0.0
            dan = 0.0
            for j in range(d):
                x = ha[i, j] - hp[i, j]
                dap += x * x
                x = ha[i, j] - hn[i, j]
                dan += x * x
            dap = sqrt(dap)
            dan = sqrt(dan)
            arg = dap - dan + margin
            if arg <= 0.0:
                continue
            lo[i] = arg
            for j in range(d):
                up = (ha[i, j] - hp[i, j]) / dap if dap >= DEGENERATE_DIST else 0.0
                un = (ha[i, j] - hn[i, j]) / dan if dan >= DEGENERATE_DIST else 0.0
                gav[i, j] = up - un
                gpv[i, j] = -up
                gnv[i, j] = un
    return loss, ga, gp, gn


def scatter_add_columns(double[:, ::1] target, const cnp.int64_t[::1] idx,
                        const double[:, ::1] vals):
    cdef Py_ssize_t b = idx.shape[0], h = vals.shape[1], i, j, c
    with nogil:
        for i in range(b):
            c = idx[i]
            for j in range(h):
                target[j, c] += vals[i, j]


def adam_update(p, g, m, v, double lr, double beta1, double beta2, double eps, long t):
    cdef double[::1] pv = p.reshape(-1), gv = g.reshape(-1), mv = m.reshape(-1), vv = v.reshape(-1)
    cdef Py_ssize_t n = pv.shape[0], i
    cdef double c1 = 1.0 - pow(beta1, t), c2 = 1.0 - pow(beta2, t)
    cdef double gi
    with nogil:
        for i in range(n):
            gi = gv[i]
            mv[i] = mv[i] * beta1 + (1.0 - beta1) * gi
            vv[i] = vv[i] * beta2 + (1.0 - beta2) * (gi * gi)
            pv[i] -= lr * (mv[i] / c1) / (sqrt(vv[i] / c2) + eps)
