# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled band table on a tensor grid of z-values."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def band_table(double[:] alpha, double[:] beta, int[:] labels,
               double[:] z1, double[:] z2, double[:] z3):
    """tau^- and tau^+ on the grid z1 x z2 x z3 (labels order the K0 formula)."""
    cdef Py_ssize_t n1 = z1.shape[0], n2 = z2.shape[0], n3 = z3.shape[0]
    cdef Py_ssize_t i, j, k
    cdef int la = labels[0], lb = labels[1], lc = labels[2]
    cdef double ba = beta[la], bb = beta[lb], bc = beta[lc]
    cdef double a1 = alpha[0], a2 = alpha[1], a3 = alpha[2]
    cdef double z[3]
    cdef double psi, lin, kv, r
    tm_arr = np.empty((n1, n2, n3), dtype=np.float64)
    tp_arr = np.empty((n1, n2, n3), dtype=np.float64)
    cdef double[:, :, :] tm = tm_arr
    cdef double[:, :, :] tp = tp_arr
    for i in range(n1):
        z[0] = z1[i]
        for j in range(n2):
            z[1] = z2[j]
            for k in range(n3):
                z[2] = z3[k]
                psi = a1 * z[0] + a2 * z[1] + a3 * z[2]
                lin = ba * z[la] - bb * z[lb] - bc * z[lc]
                kv = 0.25 * lin * lin - bb * bc * z[lb] * z[lc]
                if kv < 0.0:
                    kv = 0.0
                r = sqrt(kv)
                tm[i, j, k] = psi - r
                tp[i, j, k] = psi + r
    return tm_arr, tp_arr
