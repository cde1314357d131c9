"""Preconditioners for the Krylov solver."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .. import kernels
from ..errors import PreconditionerError

log = logging.getLogger(__name__)

KINDS = ("none", "jacobi", "ilu0", "amg")


@dataclass(frozen=True)
class PreconditionerSpec:
    kind: str = "ilu0"
    amg_strength: float = 0.25
    amg_max_levels: int = 10

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PreconditionerError(f"unknown preconditioner {self.kind!r}; choose from {KINDS}")


class Identity:
    name = "none"

    def __call__(self, r):
        return np.array(r, dtype=float, copy=True)


class Jacobi:
    name = "jacobi"

    def __init__(self, a):
        d = a.diagonal()
        if np.any(d == 0):
            raise PreconditionerError(f"zero diagonal entry at row {int(np.argmax(d == 0))}")
        self.inv = 1.0 / d

    def __call__(self, r):
        return self.inv * r


class ILU0:
    """Zero-fill incomplete LU on the sparsity pattern of ``a``."""

    name = "ilu0"

    def __init__(self, a, backend=None):
        a = sp.csr_matrix(a, dtype=float, copy=True)
        a.sum_duplicates()
        a.sort_indices()
        n = a.shape[0]
        indptr = a.indptr.astype(np.int64)
        indices = a.indices.astype(np.int64)
        data = a.data.astype(float)
        rows = np.repeat(np.arange(n), np.diff(indptr))
        diag = np.full(n, -1, dtype=np.int64)
        on_diag = np.flatnonzero(indices == rows)
        diag[rows[on_diag]] = on_diag
        missing = np.flatnonzero(diag < 0)
        if missing.size:
            raise PreconditionerError(f"ILU(0) needs a stored diagonal; row {missing[0]} has none")
        if np.any(data[diag] == 0):
            raise PreconditionerError(f"zero diagonal entry at row {int(np.argmax(data[diag] == 0))}")
        fail = kernels.ilu0_factor(indptr, indices, data, diag, backend=backend)
        if fail >= 0:
            raise PreconditionerError(f"zero pivot in ILU(0) at row {fail}")
        self.lu = sp.csr_matrix((data, indices, indptr), shape=(n, n))
        self._solve = kernels.make_ilu0_solver(indptr, indices, data, diag, backend=backend)

    def __call__(self, r):
        return self._solve(r)


class AMG:
    name = "amg"

    def __init__(self, a, spec):
        import pyamg
        ml = pyamg.ruge_stuben_solver(sp.csr_matrix(a), strength=("classical", {"theta": spec.amg_strength}),
                                      max_levels=spec.amg_max_levels)
        self._op = ml.aspreconditioner(cycle="V")

    def __call__(self, r):
        return self._op @ r


def build_preconditioner(a, spec=None, backend=None):
    """Return a callable ``r -> M^{-1} r`` for the given spec."""
    spec = spec or PreconditionerSpec()
    if isinstance(spec, str):
        spec = PreconditionerSpec(spec)
    if a.shape[0] != a.shape[1]:
        raise PreconditionerError("preconditioner needs a square matrix")
    if spec.kind == "none":
        return Identity()
    if spec.kind == "jacobi":
        return Jacobi(a)
    if spec.kind == "ilu0":
        return ILU0(a, backend=backend)
    try:
        return AMG(a, spec)
    except Exception as exc:  # pyamg missing or setup failure
        log.warning("AMG unavailable (%s); falling back to ILU(0)", exc)
        return ILU0(a, backend=backend)
