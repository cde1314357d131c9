"""Right-preconditioned restarted GMRES."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .precond import PreconditionerSpec, build_preconditioner


@dataclass(frozen=True)
class LinearSolverConfig:
    rtol: float = 1e-6
    atol: float = 1e-10
    max_iters: int = 1000
    restart: int = 200

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("GMRES tolerances must be positive")
        if self.restart < 1 or self.max_iters < 1:
            raise ValueError("restart and max_iters must be >= 1")


@dataclass(frozen=True)
class LinearSolveReport:
    iterations: int
    residual: float
    converged: bool
    target: float = 0.0


def _givens(a, b):
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


def gmres_solve(A, b, x0=None, precond=None, cfg=None):
    """Solve ``A x = b``.

    ``precond`` may be a PreconditionerSpec, a kind string, or an already
    built callable ``r -> M^{-1} r``. The reported residual is the true
    residual ``||b - A x||`` of the returned iterate.
    """
    cfg = cfg or LinearSolverConfig()
    n = A.shape[0]
    if A.shape[0] != A.shape[1] or b.shape[0] != n:
        raise ValueError(f"dimension mismatch: A {A.shape}, b {b.shape}")
    if precond is None or isinstance(precond, (str, PreconditionerSpec)):
        precond = build_preconditioner(A, precond or PreconditionerSpec("none"))
    b = np.asarray(b, dtype=float)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float, copy=True)
    target = max(cfg.rtol * np.linalg.norm(b), cfg.atol)
    r = b - A @ x
    beta = np.linalg.norm(r)
    total = 0
    m = min(cfg.restart, n)
    while beta > target and total < cfg.max_iters:
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        breakdown = False
        for j in range(m):
            Z[j] = precond(V[j])
            w = A @ Z[j]
            for i in range(j + 1):
                H[i, j] = w @ V[i]
                w -= H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            hnext = H[j + 1, j]
            cs[j], sn[j] = _givens(H[j, j], hnext)
            H[j, j] = cs[j] * H[j, j] + sn[j] * hnext
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            k = j + 1
            if hnext <= 1e-14 * max(abs(H[j, j]), 1e-300):
                breakdown = True
                break
            V[j + 1] = w / hnext
            if abs(g[j + 1]) <= target or total >= cfg.max_iters:
                break
        y = np.zeros(k)
        for i in range(k - 1, -1, -1):
            y[i] = (g[i] - H[i, i + 1:k] @ y[i + 1:]) / H[i, i]
        x += Z[:k].T @ y
        r = b - A @ x
        beta = np.linalg.norm(r)
        if breakdown:
            break
    return x, LinearSolveReport(total, float(beta), bool(beta <= target), float(target))
