"""Selects the compiled ILU(0) kernels or the pure-Python fallback.

Set ``OPVSIM_PURE_PYTHON=1`` before import to force the fallback.
"""
import logging
import os

import numpy as np

from . import _ilu_py

log = logging.getLogger(__name__)

_compiled = None
if os.environ.get("OPVSIM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ilu as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def ilu0_factor(indptr, indices, data, diag, backend=None):
    """Factor in place; returns the failing row or -1."""
    use = backend or BACKEND
    if use == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return int(_compiled.ilu0_factor(indptr, indices, data, diag))
    return _ilu_py.ilu0_factor(indptr, indices, data, diag)


def make_ilu0_solver(indptr, indices, lu, diag, backend=None):
    """Return ``solve(b) -> x`` for the stored factors."""
    use = backend or BACKEND
    if use == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        n = len(indptr) - 1

        def solve(b):
            x = np.empty(n)
            _compiled.ilu0_solve(indptr, indices, lu, diag, np.ascontiguousarray(b, dtype=float), x)
            return x
        return solve
    sched = _ilu_py.LevelScheduledSolve(indptr, indices, lu, diag)

    def solve(b):
        return sched(np.asarray(b, dtype=float), np.empty(len(indptr) - 1))
    return solve
