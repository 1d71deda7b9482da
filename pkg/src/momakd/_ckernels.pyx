# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled counterparts of ``_pykernels``. Same signatures, same results
up to floating-point summation order."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, INFINITY

cnp.import_array()


def softmax_rows(const double[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1], i, j
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double mx, s
    for i in range(m):
        mx = x[i, 0]
        for j in range(1, n):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(n):
            out[i, j] = exp(x[i, j] - mx)
            s += out[i, j]
        for j in range(n):
            out[i, j] /= s
    return out_arr


def log_softmax_rows(const double[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1], i, j
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double mx, s, lse
    for i in range(m):
        mx = x[i, 0]
        for j in range(1, n):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(n):
            s += exp(x[i, j] - mx)
        lse = log(s)
        for j in range(n):
            out[i, j] = (x[i, j] - mx) - lse
    return out_arr


def softmax_rows_backward(const double[:, ::1] y, const double[:, ::1] gy):
    cdef Py_ssize_t m = y.shape[0], n = y.shape[1], i, j
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double dot
    for i in range(m):
        dot = 0.0
        for j in range(n):
            dot += gy[i, j] * y[i, j]
        for j in range(n):
            out[i, j] = y[i, j] * (gy[i, j] - dot)
    return out_arr


def log_softmax_rows_backward(const double[:, ::1] y, const double[:, ::1] gy):
    cdef Py_ssize_t m = y.shape[0], n = y.shape[1], i, j
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double s
    for i in range(m):
        s = 0.0
        for j in range(n):
            s += gy[i, j]
        for j in range(n):
            out[i, j] = gy[i, j] - exp(y[i, j]) * s
    return out_arr


def pairwise_distances(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j, k
    out_arr = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double acc, t
    for i in range(n):
        for j in range(i + 1, n):
            acc = 0.0
            for k in range(d):
                t = x[i, k] - x[j, k]
                acc += t * t
            out[i, j] = sqrt(acc)
            out[j, i] = out[i, j]
    return out_arr


def silhouette_samples(const double[:, ::1] x, const cnp.int64_t[::1] labels, Py_ssize_t n_labels):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j, k, c, own
    cdef double[:, ::1] sums = np.zeros((n, n_labels), dtype=np.float64)
    cdef cnp.int64_t[::1] counts = np.zeros(n_labels, dtype=np.int64)
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double acc, t, a, b, mx
    for i in range(n):
        counts[labels[i]] += 1
    for i in range(n):
        for j in range(i + 1, n):
            acc = 0.0
            for k in range(d):
                t = x[i, k] - x[j, k]
                acc += t * t
            acc = sqrt(acc)
            sums[i, labels[j]] += acc
            sums[j, labels[i]] += acc
    for i in range(n):
        own = labels[i]
        if counts[own] <= 1:
            continue
        a = sums[i, own] / (counts[own] - 1)
        b = INFINITY
        for c in range(n_labels):
            if c != own and counts[c] > 0 and sums[i, c] / counts[c] < b:
                b = sums[i, c] / counts[c]
        mx = a if a > b else b
        out[i] = 0.0 if mx == 0.0 else (b - a) / mx
    return out_arr


def confusion_counts(const cnp.int64_t[::1] y_true, const cnp.int64_t[::1] y_pred, Py_ssize_t n_classes):
    cdef Py_ssize_t i
    cm_arr = np.zeros((n_classes, n_classes), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] cm = cm_arr
    for i in range(y_true.shape[0]):
        cm[y_true[i], y_pred[i]] += 1
    return cm_arr


def mha_forward(const double[:, ::1] q, const double[:, ::1] k, const double[:, ::1] v, Py_ssize_t heads):
    cdef Py_ssize_t n = q.shape[0], width = q.shape[1], d = width // heads
    cdef Py_ssize_t h, i, j, c, off
    cdef double scale = 1.0 / sqrt(<double>d), acc, mx, s
    out_arr = np.zeros((n, width), dtype=np.float64)
    w_arr = np.empty((heads, n, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, :, ::1] w = w_arr
    for h in range(heads):
        off = h * d
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for c in range(d):
                    acc += q[i, off + c] * k[j, off + c]
                w[h, i, j] = acc * scale
            mx = w[h, i, 0]
            for j in range(1, n):
                if w[h, i, j] > mx:
                    mx = w[h, i, j]
            s = 0.0
            for j in range(n):
                w[h, i, j] = exp(w[h, i, j] - mx)
                s += w[h, i, j]
            for j in range(n):
                w[h, i, j] /= s
            for j in range(n):
                for c in range(d):
                    out[i, off + c] += w[h, i, j] * v[j, off + c]
    return out_arr, w_arr


def mha_backward(const double[:, ::1] q, const double[:, ::1] k, const double[:, ::1] v,
                 const double[:, :, ::1] w, const double[:, ::1] gout, Py_ssize_t heads):
    cdef Py_ssize_t n = q.shape[0], width = q.shape[1], d = width // heads
    cdef Py_ssize_t h, i, j, c, off
    cdef double scale = 1.0 / sqrt(<double>d), acc, dot
    gq_arr = np.zeros((n, width), dtype=np.float64)
    gk_arr = np.zeros((n, width), dtype=np.float64)
    gv_arr = np.zeros((n, width), dtype=np.float64)
    cdef double[:, ::1] gq = gq_arr, gk = gk_arr, gv = gv_arr
    cdef double[::1] ga = np.empty(n, dtype=np.float64)
    for h in range(heads):
        off = h * d
        for i in range(n):
            # gradient w.r.t. the attention row, then through the softmax
            dot = 0.0
            for j in range(n):
                acc = 0.0
                for c in range(d):
                    acc += gout[i, off + c] * v[j, off + c]
                ga[j] = acc
                dot += acc * w[h, i, j]
            for j in range(n):
                acc = w[h, i, j] * (ga[j] - dot) * scale
                for c in range(d):
                    gq[i, off + c] += acc * k[j, off + c]
                    gk[j, off + c] += acc * q[i, off + c]
                    gv[j, off + c] += w[h, i, j] * gout[i, off + c]
    return gq_arr, gk_arr, gv_arr
