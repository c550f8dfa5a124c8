# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled kernels for gradient-boosted tree training and prediction.

Accumulation order matches the numpy fallback in ``_gbt_py`` exactly, so
both backends produce bit-identical models.
"""

import numpy as np

NAME = "cython"


def histogram(const unsigned char[:, ::1] codes, const Py_ssize_t[::1] rows,
              const double[::1] grad, const double[::1] hess, Py_ssize_t n_bins):
    cdef Py_ssize_t n_feat = codes.shape[0]
    cdef Py_ssize_t m = rows.shape[0]
    cdef Py_ssize_t f, i, r, b
    G = np.zeros((n_feat, n_bins), dtype=np.float64)
    H = np.zeros((n_feat, n_bins), dtype=np.float64)
    cdef double[:, ::1] gv = G
    cdef double[:, ::1] hv = H
    with nogil:
        for f in range(n_feat):
            for i in range(m):
                r = rows[i]
                b = codes[f, r]
                gv[f, b] += grad[r]
                hv[f, b] += hess[r]
    return G, H


def predict_tree(const double[:, ::1] X, const Py_ssize_t[::1] feature,
                 const double[::1] threshold, const Py_ssize_t[::1] left,
                 const Py_ssize_t[::1] right, const double[::1] value):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t i, node
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    with nogil:
        for i in range(n):
            node = 0
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            ov[i] = value[node]
    return out
