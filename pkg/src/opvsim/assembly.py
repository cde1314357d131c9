"""P1 finite-element assembly for the fully discrete device equations.

Densities enter every weak form through their nodal (P1) interpolants, so
the Newton residuals written in quasi-Fermi unknowns and the linear Gummel
systems written in density unknowns share one set of discrete equations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np
import scipy.sparse as sp

from . import physics

__all__ = [
    "P1Space",
    "AssembledSystem",
    "DeviceFields",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_convection",
    "assemble_weighted_mass",
    "assemble_load",
    "apply_dirichlet",
    "coupled_residual_jacobian",
    "block_residual_jacobian",
]


def _simplex_moment_tensor(dim):
    """T[k, i, j] = integral of z_k z_i z_j over a unit-measure simplex."""
    nloc = dim + 1
    t = np.empty((nloc, nloc, nloc))
    for k in range(nloc):
        for i in range(nloc):
            for j in range(nloc):
                powers = np.bincount([k, i, j], minlength=nloc)
                num = factorial(dim) * np.prod([factorial(a) for a in powers])
                t[k, i, j] = num / factorial(dim + 3)
    return t


def _simplex_mass(dim):
    nloc = dim + 1
    m = np.full((nloc, nloc), 1.0)
    np.fill_diagonal(m, 2.0)
    return m * factorial(dim) / factorial(dim + 2)


class P1Space:
    """Cached geometry, sparsity pattern and scatter map for one mesh."""

    def __init__(self, mesh):
        self.mesh = mesh
        cells = mesh.cells
        self.n = mesh.num_vertices
        self.dim = mesh.dim
        self.nloc = self.dim + 1
        self.vol = mesh.volumes
        self.grad = mesh.grad_basis
        rows = np.repeat(cells, self.nloc, axis=1).ravel()
        cols = np.tile(cells, (1, self.nloc)).ravel()
        keys = rows * self.n + cols
        ukeys, inverse = np.unique(keys, return_inverse=True)
        self._scatter = np.asarray(inverse).ravel()
        self.indices = (ukeys % self.n).astype(np.int64)
        row_of = ukeys // self.n
        self.indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(np.bincount(row_of, minlength=self.n), out=self.indptr[1:])
        self.nnz = ukeys.size
        self.ref_mass = _simplex_mass(self.dim)
        self.ref_cubic = _simplex_moment_tensor(self.dim)
        self._mass = None
        self._stiff = None
        self.lumped = np.bincount(cells.ravel(), weights=np.repeat(self.vol / self.nloc, self.nloc),
                                  minlength=self.n)

    def matrix(self, local):
        """Sum element matrices of shape (nc, nloc, nloc) into CSR."""
        data = np.bincount(self._scatter, weights=local.ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n))

    def vector(self, local):
        """Sum element vectors of shape (nc, nloc)."""
        return np.bincount(self.mesh.cells.ravel(), weights=local.ravel(), minlength=self.n)

    # elementwise helpers --------------------------------------------------
    def cell_gradient(self, u):
        """P1 gradient of a nodal field, one vector per cell."""
        return np.einsum("ck,ckd->cd", u[self.mesh.cells], self.grad)

    def cell_mean(self, u):
        return u[self.mesh.cells].mean(axis=1)

    # frequently reused matrices ------------------------------------------
    @property
    def mass(self):
        if self._mass is None:
            self._mass = assemble_mass(self.mesh)
        return self._mass

    @property
    def stiffness(self):
        if self._stiff is None:
            self._stiff = assemble_stiffness(self.mesh, 1.0)
        return self._stiff

    def trilinear(self, a, b):
        """Vector with entries  integral(a_h b_h z_i)."""
        loc = np.einsum("kij,ck,cj->ci", self.ref_cubic, a[self.mesh.cells], b[self.mesh.cells])
        return self.vector(loc * self.vol[:, None])

    def convection_action(self, drift, u):
        """Vector with entries  integral(u_h drift . grad z_i)  (transpose of C times u)."""
        ubar = self.cell_mean(u) * self.vol
        loc = np.einsum("ckd,cd->ck", self.grad, drift) * ubar[:, None]
        return self.vector(loc)


def assemble_mass(mesh):
    fe = mesh.fe
    local = fe.vol[:, None, None] * fe.ref_mass[None]
    return fe.matrix(local)


def assemble_stiffness(mesh, coeff=1.0):
    """Stiffness matrix; a nodal ``coeff`` is averaged over each cell, a
    per-cell array (length num_cells) is used as is."""
    fe = mesh.fe
    coeff = np.asarray(coeff, dtype=float)
    if coeff.ndim == 0:
        c = np.full(mesh.num_cells, float(coeff))
    elif coeff.shape == (mesh.num_vertices,):
        c = fe.cell_mean(coeff)
    elif coeff.shape == (mesh.num_cells,):
        c = coeff
    else:
        raise ValueError(f"coefficient shape {coeff.shape} matches neither nodes nor cells")
    local = np.einsum("cid,cjd->cij", fe.grad, fe.grad) * (c * fe.vol)[:, None, None]
    return fe.matrix(local)


def assemble_convection(mesh, drift):
    """C_ij = sum over cells of (drift . grad z_j) * integral(z_i).

    ``C.T @ u`` is the weak form integral(u_h drift . grad v) of an advective
    flux u*drift, which is how the transport equations use it.
    """
    fe = mesh.fe
    drift = np.asarray(drift, dtype=float).reshape(mesh.num_cells, mesh.dim)
    dg = np.einsum("cjd,cd->cj", fe.grad, drift)
    local = np.repeat((dg * (fe.vol / fe.nloc)[:, None])[:, None, :], fe.nloc, axis=1)
    return fe.matrix(local)


def assemble_weighted_mass(mesh, weight):
    """W_ij = integral(w_h z_i z_j) with w_h the P1 interpolant (exact)."""
    fe = mesh.fe
    w = np.asarray(weight, dtype=float)
    if w.ndim == 0:
        w = np.full(mesh.num_vertices, float(w))
    local = np.einsum("kij,ck->cij", fe.ref_cubic, w[mesh.cells]) * fe.vol[:, None, None]
    return fe.matrix(local)


def assemble_load(mesh, f):
    f = np.asarray(f, dtype=float)
    if f.ndim == 0:
        f = np.full(mesh.num_vertices, float(f))
    return mesh.fe.mass @ f


@dataclass
class AssembledSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    dirichlet_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    dirichlet_values: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _dirichlet_masks(n, nodes):
    keep = np.ones(n)
    keep[nodes] = 0.0
    return sp.diags(keep), sp.diags(1.0 - keep)


def apply_dirichlet(system):
    """Symmetric elimination of Dirichlet rows and columns."""
    a = system.matrix.tocsr()
    n = a.shape[0]
    nodes = np.asarray(system.dirichlet_nodes, dtype=np.int64)
    g = np.zeros(n)
    g[nodes] = system.dirichlet_values
    rhs = np.asarray(system.rhs, dtype=float) - a @ g
    rhs[nodes] = system.dirichlet_values
    keep, fix = _dirichlet_masks(n, nodes)
    mat = (keep @ a @ keep + fix).tocsr()
    mat.sort_indices()
    return AssembledSystem(mat, rhs, nodes, np.asarray(system.dirichlet_values, dtype=float))


def constrain_rows(mat, nodes):
    """Replace rows and columns ``nodes`` of a Jacobian by the identity.

    Valid for Newton corrections when the iterate already satisfies the
    boundary data, so the constrained corrections are zero.
    """
    keep, fix = _dirichlet_masks(mat.shape[0], nodes)
    out = (keep @ mat @ keep + fix).tocsr()
    out.sort_indices()
    return out


# ---------------------------------------------------------------------------
# device equations
# ---------------------------------------------------------------------------


QUADRATURES = ("exact", "vertex")


@dataclass
class DeviceFields:
    """Morphology-derived quantities that stay fixed during a sweep."""

    mesh: object
    phi: np.ndarray
    indicator: np.ndarray
    e_lumo: np.ndarray
    e_homo: np.ndarray
    psi_star: np.ndarray
    top: np.ndarray
    bot: np.ndarray
    grad_e_lumo: np.ndarray = None
    grad_e_homo: np.ndarray = None
    quadrature: str = "exact"
    artificial_diffusion: float = 0.0

    def __post_init__(self):
        if self.quadrature not in QUADRATURES:
            raise ValueError(f"quadrature must be one of {QUADRATURES}, got {self.quadrature!r}")
        if not self.artificial_diffusion >= 0:
            raise ValueError("artificial_diffusion must be >= 0")
        fe = self.mesh.fe
        self.grad_e_lumo = fe.cell_gradient(self.e_lumo)
        self.grad_e_homo = fe.cell_gradient(self.e_homo)
        self.contacts = np.union1d(self.top, self.bot)
        self._lumped_mass = None
        # relative diffusivity per cell; the artificial-diffusion safeguard adds
        # delta * (cell diameter) to it, so the default is exactly one
        self.cell_diffusivity = np.ones(self.mesh.num_cells)
        self.extra_diffusion = None
        if self.artificial_diffusion > 0:
            pts = self.mesh.vertices[self.mesh.cells]
            diam = np.max(np.linalg.norm(pts[:, :, None, :] - pts[:, None, :, :], axis=-1),
                          axis=(1, 2))
            self.cell_diffusivity += self.artificial_diffusion * diam
            self.extra_diffusion = assemble_stiffness(self.mesh, self.artificial_diffusion * diam)

    # zeroth-order terms --------------------------------------------------
    # "exact" integrates products of P1 interpolants exactly; "vertex" uses
    # the nodal quadrature rule, which makes all of them diagonal.
    @property
    def mass(self):
        fe = self.mesh.fe
        if self.quadrature == "exact":
            return fe.mass
        if self._lumped_mass is None:
            self._lumped_mass = sp.diags(fe.lumped).tocsr()
        return self._lumped_mass

    def weighted_mass(self, w):
        if self.quadrature == "exact":
            return assemble_weighted_mass(self.mesh, w)
        return sp.diags(self.mesh.fe.lumped * w).tocsr()

    def trilinear(self, a, b):
        if self.quadrature == "exact":
            return self.mesh.fe.trilinear(a, b)
        return self.mesh.fe.lumped * a * b

    @classmethod
    def build(cls, mesh, phase_field, params, quadrature="exact", artificial_diffusion=0.0):
        from .mesh import BoundaryTag, boundary_nodes
        from .morphology import energy_levels, interface_indicator
        phi = np.asarray(getattr(phase_field, "values", phase_field), dtype=float)
        levels = energy_levels(phi, params)
        ind = interface_indicator(phi, mesh).values
        psi_star = physics.electroneutral_potential(levels.e_lumo, levels.e_homo, params)
        return cls(mesh, phi, ind, levels.e_lumo, levels.e_homo,
                   psi_star, boundary_nodes(mesh, BoundaryTag.TOP_ORG),
                   boundary_nodes(mesh, BoundaryTag.BOT_ORG), quadrature=quadrature,
                   artificial_diffusion=artificial_diffusion)

    def densities(self, psi, phi_n, phi_p, params):
        return physics.carrier_densities(psi, phi_n, phi_p, self.e_lumo, self.e_homo, params)

    def dirichlet(self, v_top, v_bot):
        """Boundary values of (psi, phi_n, phi_p) on the contact nodes."""
        nodes = self.contacts
        volt = np.where(np.isin(nodes, self.top), v_top, v_bot).astype(float)
        return nodes, self.psi_star[nodes] + volt, volt


def _transport_operators(fe, fields, params, psi, n, p, tau):
    """Matrices acting on n and p in the linearized transport equations.

    Electron:  (M/tau + mu_n K - mu_n C_n^T + gamma W(p)) n
    Hole:      (M/tau + mu_p K + mu_p C_p^T + gamma W(n)) p
    """
    mesh = fe.mesh
    gpsi = fe.cell_gradient(psi)
    drift_n = gpsi - fields.grad_e_lumo
    drift_p = gpsi - fields.grad_e_homo
    base = fields.mass / tau if np.isfinite(tau) else 0.0 * fields.mass
    stiff = fe.stiffness if fields.extra_diffusion is None else fe.stiffness + fields.extra_diffusion
    a_n = (base + params.mu_n * stiff - params.mu_n * assemble_convection(mesh, drift_n).T
           + params.gamma * fields.weighted_mass(p)).tocsr()
    a_p = (base + params.mu_p * stiff + params.mu_p * assemble_convection(mesh, drift_p).T
           + params.gamma * fields.weighted_mass(n)).tocsr()
    return a_n, a_p, drift_n, drift_p


def _residuals(fe, fields, params, psi, n, p, n_prev, p_prev, X, tau):
    """Unconstrained residuals (F_psi, F_n, F_p)."""
    gpsi = fe.cell_gradient(psi)
    drift_n = gpsi - fields.grad_e_lumo
    drift_p = gpsi - fields.grad_e_homo
    mass = fields.mass
    inv_tau = 0.0 if not np.isfinite(tau) else 1.0 / tau
    recomb = params.gamma * (fields.trilinear(n, p) - params.N_intr ** 2 * fe.lumped)
    source = params.eta_d * fields.trilinear(fields.indicator, X)
    f_psi = params.eps * (fe.stiffness @ psi) + mass @ (n - p)
    stiff = fe.stiffness if fields.extra_diffusion is None else fe.stiffness + fields.extra_diffusion
    f_n = (inv_tau * (mass @ (n - n_prev)) + params.mu_n * (stiff @ n)
           - params.mu_n * fe.convection_action(drift_n, n) + recomb - source)
    f_p = (inv_tau * (mass @ (p - p_prev)) + params.mu_p * (stiff @ p)
           + params.mu_p * fe.convection_action(drift_p, p) + recomb - source)
    return f_psi, f_n, f_p


def _jacobian_blocks(fe, fields, params, psi, n, p, tau):
    mesh = fe.mesh
    a_n, a_p, _, _ = _transport_operators(fe, fields, params, psi, n, p, tau)
    dn, dp = sp.diags(n), sp.diags(p)
    mass = fields.mass
    wn = fields.weighted_mass(n)
    wp = fields.weighted_mass(p)
    g = params.gamma
    j = {}
    j["pp_psi"] = params.eps * fe.stiffness + mass @ sp.diags(n + p)
    j["pp_n"] = -(mass @ dn)
    j["pp_p"] = -(mass @ dp)
    j["n_psi"] = a_n @ dn - params.mu_n * assemble_stiffness(mesh, n) - g * (wn @ dp)
    j["n_n"] = -(a_n @ dn)
    j["n_p"] = g * (wn @ dp)
    j["p_psi"] = -(a_p @ dp) + params.mu_p * assemble_stiffness(mesh, p) + g * (wp @ dn)
    j["p_n"] = -g * (wp @ dn)
    j["p_p"] = a_p @ dp
    return j


def coupled_residual_jacobian(state, state_prev, X_new, fields, params, tau, v_top=0.0, v_bot=0.0,
                              jacobian=True):
    """Stacked residual [F_psi, F_phin, F_phip] and the 3x3 block Jacobian.

    Unknowns are ordered (psi, phi_n, phi_p). Contact rows hold
    ``u - g`` and identity Jacobian rows; their columns are eliminated.
    """
    fe = fields.mesh.fe
    psi, phi_n, phi_p = state.psi, state.phi_n, state.phi_p
    n, p = fields.densities(psi, phi_n, phi_p, params)
    n_prev, p_prev = fields.densities(state_prev.psi, state_prev.phi_n, state_prev.phi_p, params)
    f_psi, f_n, f_p = _residuals(fe, fields, params, psi, n, p, n_prev, p_prev, X_new, tau)
    nodes, psi_bc, phi_bc = fields.dirichlet(v_top, v_bot)
    f_psi[nodes] = psi[nodes] - psi_bc
    f_n[nodes] = phi_n[nodes] - phi_bc
    f_p[nodes] = phi_p[nodes] - phi_bc
    res = np.concatenate([f_psi, f_n, f_p])
    if not jacobian:
        return res, None
    b = _jacobian_blocks(fe, fields, params, psi, n, p, tau)
    jac = sp.bmat([[b["pp_psi"], b["pp_n"], b["pp_p"]],
                   [b["n_psi"], b["n_n"], b["n_p"]],
                   [b["p_psi"], b["p_n"], b["p_p"]]], format="csr")
    nn = fe.n
    jac = constrain_rows(jac, np.concatenate([nodes, nodes + nn, nodes + 2 * nn]))
    return res, jac


def block_residual_jacobian(block, state, state_prev, X_new, fields, params, tau, v_top=0.0,
                            v_bot=0.0, jacobian=True):
    """Residual and diagonal Jacobian block of one decoupled equation.

    ``block`` is ``"psi"``, ``"phi_n"`` or ``"phi_p"``; the other unknowns
    are frozen at their values in ``state``.
    """
    fe = fields.mesh.fe
    psi, phi_n, phi_p = state.psi, state.phi_n, state.phi_p
    n, p = fields.densities(psi, phi_n, phi_p, params)
    nodes, psi_bc, phi_bc = fields.dirichlet(v_top, v_bot)
    mass = fields.mass
    if block == "psi":
        res = params.eps * (fe.stiffness @ psi) + mass @ (n - p)
        res[nodes] = psi[nodes] - psi_bc
        if not jacobian:
            return res, None
        jac = params.eps * fe.stiffness + mass @ sp.diags(n + p)
        return res, constrain_rows(jac.tocsr(), nodes)
    n_prev, p_prev = fields.densities(state_prev.psi, state_prev.phi_n, state_prev.phi_p, params)
    _, f_n, f_p = _residuals(fe, fields, params, psi, n, p, n_prev, p_prev, X_new, tau)
    if block == "phi_n":
        res = f_n
        res[nodes] = phi_n[nodes] - phi_bc
        if not jacobian:
            return res, None
        a_n, _, _, _ = _transport_operators(fe, fields, params, psi, n, p, tau)
        return res, constrain_rows(-(a_n @ sp.diags(n)).tocsr(), nodes)
    if block == "phi_p":
        res = f_p
        res[nodes] = phi_p[nodes] - phi_bc
        if not jacobian:
            return res, None
        _, a_p, _, _ = _transport_operators(fe, fields, params, psi, n, p, tau)
        return res, constrain_rows((a_p @ sp.diags(p)).tocsr(), nodes)
    raise ValueError(f"unknown block {block!r}")
