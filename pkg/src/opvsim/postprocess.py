"""Terminal currents, conservation metric, I-V curves and device metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assembly import AssembledSystem, apply_dirichlet
from .errors import ConvergenceError
from .linsolve import LinearSolverConfig, PreconditionerSpec, gmres_solve
from .mesh import BoundaryTag, boundary_nodes

__all__ = [
    "AuxWeight",
    "IVPoint",
    "IVCurve",
    "DeviceMetrics",
    "auxiliary_weight",
    "terminal_current",
    "current_terms",
    "conservation_check",
    "extract_metrics",
]


@dataclass(frozen=True)
class AuxWeight:
    contact: BoundaryTag
    values: np.ndarray


@dataclass
class IVPoint:
    v_top: float
    v_bot: float
    i_top: float
    i_bot: float
    report: object = None

    @property
    def conservation(self):
        return conservation_check(self.i_top, self.i_bot)

    @property
    def converged(self):
        return bool(getattr(self.report, "converged", True))


@dataclass
class IVCurve:
    points: list = field(default_factory=list)
    failed: bool = False
    message: str = ""

    def append(self, point):
        if self.points and not point.v_top > self.points[-1].v_top:
            raise ValueError("I-V points must be added with strictly increasing v_top")
        self.points.append(point)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    @property
    def voltages(self):
        return np.array([p.v_top for p in self.points])

    @property
    def i_top(self):
        return np.array([p.i_top for p in self.points])

    @property
    def i_bot(self):
        return np.array([p.i_bot for p in self.points])


@dataclass(frozen=True)
class DeviceMetrics:
    j_sc: Optional[float]
    v_oc: Optional[float]
    ff: Optional[float]


def auxiliary_weight(mesh, contact, precond="ilu0", cfg=None):
    """Discrete harmonic function equal to 1 on ``contact`` and 0 on the
    opposite contact, with natural conditions on insulated facets.

    Only the top-contact problem is solved. The stiffness matrix annihilates
    constants, so the bottom-contact weight is exactly one minus the top one;
    forming it that way keeps the two weights complementary to rounding
    instead of to the GMRES tolerance.
    """
    contact = BoundaryTag(contact)
    if contact not in (BoundaryTag.TOP_ORG, BoundaryTag.BOT_ORG):
        raise ValueError("auxiliary weight needs the top or bottom contact")
    on = boundary_nodes(mesh, BoundaryTag.TOP_ORG)
    off = boundary_nodes(mesh, BoundaryTag.BOT_ORG)
    nodes = np.concatenate([on, off])
    values = np.concatenate([np.ones(on.size), np.zeros(off.size)])
    system = apply_dirichlet(AssembledSystem(mesh.fe.stiffness, np.zeros(mesh.num_vertices),
                                             nodes, values))
    cfg = cfg or LinearSolverConfig(rtol=1e-13, atol=1e-15, max_iters=5000)
    w, rep = gmres_solve(system.matrix, system.rhs, None, PreconditionerSpec(precond), cfg)
    if not rep.converged:
        raise ConvergenceError(f"auxiliary weight solve did not converge ({rep})")
    w[nodes] = values
    if contact is BoundaryTag.BOT_ORG:
        w = 1.0 - w
    return AuxWeight(contact, w)


def current_terms(state_k, state_k1, w, fields, params, tau):
    """Transport and displacement contributions to the terminal current."""
    fe = fields.mesh.fe
    wv = getattr(w, "values", w)
    gw = fe.cell_gradient(wv)
    psi = state_k1.psi
    n, p = fields.densities(psi, state_k1.phi_n, state_k1.phi_p, params)
    gpsi = fe.cell_gradient(psi)
    drift_n = gpsi - fields.grad_e_lumo
    drift_p = gpsi - fields.grad_e_homo
    kappa = getattr(fields, "cell_diffusivity", 1.0)
    kappa = kappa[:, None] if np.ndim(kappa) else kappa
    j_n = params.mu_n * (kappa * fe.cell_gradient(n) - fe.cell_mean(n)[:, None] * drift_n)
    j_p = -params.mu_p * (kappa * fe.cell_gradient(p) + fe.cell_mean(p)[:, None] * drift_p)
    transport = float(np.sum(fe.vol * np.einsum("cd,cd->c", gw, j_n + j_p)))
    if state_k is None or not np.isfinite(tau):
        return transport, 0.0
    dpsi = gpsi - fe.cell_gradient(state_k.psi)
    displacement = float(np.sum(fe.vol * np.einsum("cd,cd->c", gw, params.eps * dpsi)) / tau)
    return transport, displacement


def terminal_current(state_k, state_k1, w, fields, params, tau):
    """Total current leaving the contact on which ``w`` equals one.

    The transport part integrates grad(w) against the drift-diffusion
    current density of the newer state; the displacement part uses the
    change of the potential between the two states.
    """
    transport, displacement = current_terms(state_k, state_k1, w, fields, params, tau)
    return transport + displacement


def conservation_check(i_top, i_bot, abs_floor=1.0):
    """Relative current imbalance |i_top + i_bot| / max(|i_top|, |i_bot|, floor)."""
    return abs(i_top + i_bot) / max(abs(i_top), abs(i_bot), abs_floor)


def _interp_at(x, y, x0):
    if not x[0] <= x0 <= x[-1]:
        return None
    return float(np.interp(x0, x, y))


def extract_metrics(curve):
    """Short-circuit current, open-circuit voltage and fill factor.

    ``curve`` is an IVCurve or a pair of arrays (voltages, currents). The
    current used is the one flowing through the bottom contact. Missing
    quantities are returned as None.
    """
    if isinstance(curve, IVCurve):
        v, i = curve.voltages, curve.i_bot
    else:
        v, i = (np.asarray(a, dtype=float) for a in curve)
    if v.size == 0:
        raise ValueError("cannot extract metrics from an empty curve")
    j_sc = _interp_at(v, i, 0.0)
    v_oc = None
    sign = np.sign(i)
    for k in range(v.size - 1):
        if sign[k] == 0:
            v_oc = float(v[k])
            break
        if sign[k] * sign[k + 1] < 0:
            v_oc = float(v[k] - i[k] * (v[k + 1] - v[k]) / (i[k + 1] - i[k]))
            break
    else:
        if sign[-1] == 0:
            v_oc = float(v[-1])
    ff = None
    if v_oc is not None and j_sc is not None and v_oc * j_sc != 0:
        lo, hi = sorted((0.0, v_oc))
        mask = (v >= lo) & (v <= hi)
        if np.any(mask):
            ff = float(np.max(np.abs(v[mask] * i[mask])) / abs(v_oc * j_sc))
    return DeviceMetrics(j_sc=j_sc, v_oc=v_oc, ff=ff)
