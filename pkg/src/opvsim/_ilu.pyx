# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled ILU(0) kernels on CSR arrays with sorted column indices."""

cimport cython


def ilu0_factor(const long[:] indptr, const long[:] indices, double[:] data, long[:] diag):
    """In-place zero-fill incomplete LU. Returns -1 on success, else the failing row."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, p, q, k, j, pos
    cdef double lik, piv
    cdef long[:] iw
    import numpy as np
    iw_arr = np.full(n, -1, dtype=np.int64)
    iw = iw_arr
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            iw[indices[p]] = p
        for p in range(indptr[i], indptr[i + 1]):
            k = indices[p]
            if k >= i:
                break
            piv = data[diag[k]]
            lik = data[p] / piv
            data[p] = lik
            for q in range(diag[k] + 1, indptr[k + 1]):
                pos = iw[indices[q]]
                if pos != -1:
                    data[pos] -= lik * data[q]
        for p in range(indptr[i], indptr[i + 1]):
            iw[indices[p]] = -1
        if diag[i] < 0 or data[diag[i]] == 0.0:
            return i
    return -1


def ilu0_solve(const long[:] indptr, const long[:] indices, const double[:] lu,
               const long[:] diag, const double[:] b, double[:] x):
    """Solve (L U) x = b with unit-lower L and upper U stored together in ``lu``."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, p
    cdef double s
    for i in range(n):
        s = b[i]
        for p in range(indptr[i], diag[i]):
            s -= lu[p] * x[indices[p]]
        x[i] = s
    for i in range(n - 1, -1, -1):
        s = x[i]
        for p in range(diag[i] + 1, indptr[i + 1]):
            s -= lu[p] * x[indices[p]]
        x[i] = s / lu[diag[i]]
