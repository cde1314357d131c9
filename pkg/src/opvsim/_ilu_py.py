"""Pure-Python ILU(0) kernels, used when the compiled extension is unavailable.

The factorization loops row by row. The triangular solves are vectorized
with level scheduling: rows whose dependencies are already resolved are
processed together as one sparse product.
"""
import numpy as np
import scipy.sparse as sp


def ilu0_factor(indptr, indices, data, diag):
    n = len(indptr) - 1
    ptr = indptr.tolist()
    cols = indices.tolist()
    dg = diag.tolist()
    vals = data.tolist()
    for i in range(n):
        start, stop = ptr[i], ptr[i + 1]
        iw = {cols[p]: p for p in range(start, stop)}
        for p in range(start, stop):
            k = cols[p]
            if k >= i:
                break
            lik = vals[p] / vals[dg[k]]
            vals[p] = lik
            for q in range(dg[k] + 1, ptr[k + 1]):
                pos = iw.get(cols[q])
                if pos is not None:
                    vals[pos] -= lik * vals[q]
        if dg[i] < 0 or vals[dg[i]] == 0.0:
            data[:] = vals
            return i
    data[:] = vals
    return -1


def _levels(strict):
    """Wavefront levels of a strictly triangular CSR matrix (forward order)."""
    n = strict.shape[0]
    level = np.zeros(n, dtype=np.int64)
    ptr, cols = strict.indptr, strict.indices
    for i in range(n):
        deps = cols[ptr[i]:ptr[i + 1]]
        if deps.size:
            level[i] = level[deps].max() + 1
    order = np.argsort(level, kind="stable")
    bounds = np.searchsorted(level[order], np.arange(level.max() + 2))
    return [order[bounds[k]:bounds[k + 1]] for k in range(len(bounds) - 1)]


class LevelScheduledSolve:
    """Precomputed level schedule for repeated solves with one factorization."""

    def __init__(self, indptr, indices, lu, diag):
        n = len(indptr) - 1
        a = sp.csr_matrix((lu, indices, indptr), shape=(n, n))
        self.lower = sp.tril(a, k=-1, format="csr")
        self.upper = sp.triu(a, k=1, format="csr")
        self.dinv = 1.0 / lu[diag]
        self.lower_levels = [(rows, self.lower[rows]) for rows in _levels(self.lower)]
        rev = n - 1 - np.arange(n)
        up_rev = self.upper[rev][:, rev].tocsr()
        self.upper_levels = [(n - 1 - rows, self.upper[n - 1 - rows])
                             for rows in _levels(up_rev)]

    def __call__(self, b, x):
        x[:] = b
        for rows, block in self.lower_levels:
            x[rows] = b[rows] - block @ x
        y = x.copy()
        for rows, block in self.upper_levels:
            x[rows] = (y[rows] - block @ x) * self.dinv[rows]
        return x
