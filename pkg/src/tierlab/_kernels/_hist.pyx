# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled histogram accumulation for tree training.

Accumulates example-major (outer loop over rows, inner over features) so
per-bucket float sums are formed in the same order as the numpy fallback;
the build disables FMA contraction for the same reason. Both backends
must produce bit-identical histograms.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def hist_accumulate(const unsigned char[:, ::1] codes,
                    const int[::1] rows,
                    const double[::1] grad,
                    const double[::1] hess,
                    int n_bins):
    """Sum grad/hess/count per (feature, bin) over the given example rows."""
    cdef Py_ssize_t n_features = codes.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] g = np.zeros((n_features, n_bins))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] h = np.zeros((n_features, n_bins))
    cdef cnp.ndarray[cnp.int64_t, ndim=2] cnt = np.zeros((n_features, n_bins), dtype=np.int64)
    cdef double[:, ::1] gv = g
    cdef double[:, ::1] hv = h
    cdef cnp.int64_t[:, ::1] cv = cnt
    cdef Py_ssize_t ri, f, r, b
    cdef double gr, hr
    for ri in range(rows.shape[0]):
        r = rows[ri]
        gr = grad[r]
        hr = hess[r]
        for f in range(n_features):
            b = codes[r, f]
            gv[f, b] += gr
            hv[f, b] += hr
            cv[f, b] += 1
    return g, h, cnt
