"""Nondimensional model parameters and carrier statistics.

All quantities are in thermal units: potentials and energies are measured
in k_B T, densities in x_c**-3. The transport model uses the Boltzmann
approximation of the Gauss-Fermi integral throughout.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.constants as const
from scipy.special import expit

from .errors import DimensionError, DivergenceError, DomainError

__all__ = [
    "ModelParams",
    "Scales",
    "DimensionalParams",
    "State",
    "carrier_densities",
    "quasi_fermi_from_density",
    "recombination",
    "intrinsic_concentration",
    "gauss_fermi_integral",
    "boltzmann_approx",
    "electroneutral_potential",
    "electroneutral_potential_gauss_fermi",
    "nondimensionalize",
]

EXP_LIMIT = 700.0


@dataclass(frozen=True)
class ModelParams:
    """Nondimensional parameters; defaults reproduce the published parameter table."""

    d_X: float = 1e-2
    G: float = 16990.0
    eta_r: float = 1.0
    eta_d: float = 1.0
    mu_n: float = 3.0
    mu_p: float = 1.0
    eps: float = 1e-1
    N_n0: float = 1.0
    N_p0: float = 1.0
    sigma_n: float = 0.3868
    sigma_p: float = 0.3868
    gamma: float = 0.6987
    N_intr: float = 0.0
    E_L_p: float = -3.28
    E_L_nfa: float = -4.10
    E_H_p: float = -5.13
    E_H_nfa: float = -5.65
    tau: float = 1e-4
    tol: float = 1e-4

    def __post_init__(self):
        problems = self.validate()
        if problems:
            raise DomainError("; ".join(problems))

    def validate(self):
        problems = []
        for name in ("d_X", "mu_n", "mu_p", "eps", "tau"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        for name in ("G", "eta_r", "eta_d", "gamma", "N_n0", "N_p0", "N_intr", "tol"):
            if not getattr(self, name) >= 0:
                problems.append(f"{name} must be >= 0")
        for f in dataclasses.fields(self):
            if not np.isfinite(getattr(self, f.name)):
                problems.append(f"{f.name} must be finite")
        if not self.E_L_p > self.E_H_p:
            problems.append("E_L_p must exceed E_H_p")
        if not self.E_L_nfa > self.E_H_nfa:
            problems.append("E_L_nfa must exceed E_H_nfa")
        return problems

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass
class State:
    """Nodal unknowns at one time level."""

    psi: np.ndarray
    phi_n: np.ndarray
    phi_p: np.ndarray
    X: np.ndarray

    def copy(self):
        return State(self.psi.copy(), self.phi_n.copy(), self.phi_p.copy(), self.X.copy())


def _guarded_exp(arg):
    arg = np.asarray(arg, dtype=float)
    if not np.all(np.isfinite(arg)):
        raise DivergenceError("non-finite exponent in carrier statistics")
    peak = np.max(np.abs(arg)) if arg.size else 0.0
    if peak > EXP_LIMIT:
        raise DivergenceError(f"exponent magnitude {peak:.3g} exceeds {EXP_LIMIT:g}")
    return np.exp(arg)


def _prefactors(params):
    cn = params.N_n0 * np.exp(0.5 * params.sigma_n ** 2)
    cp = params.N_p0 * np.exp(0.5 * params.sigma_p ** 2)
    return cn, cp


def carrier_densities(psi, phi_n, phi_p, e_lumo, e_homo, params):
    """Electron and hole densities under Boltzmann statistics."""
    cn, cp = _prefactors(params)
    psi = np.asarray(psi, dtype=float)
    n = cn * _guarded_exp(psi - np.asarray(phi_n) - e_lumo)
    p = cp * _guarded_exp(np.asarray(phi_p) - psi + e_homo)
    return n, p


def quasi_fermi_from_density(n, psi, e_lumo, params):
    """Electron quasi-Fermi level reproducing density ``n``."""
    n = np.asarray(n, dtype=float)
    if np.any(~(n > 0)):
        raise DomainError("densities must be positive to invert the statistics")
    cn, _ = _prefactors(params)
    return np.asarray(psi) - e_lumo - np.log(n / cn)


def quasi_fermi_from_hole_density(p, psi, e_homo, params):
    """Hole quasi-Fermi level reproducing density ``p``."""
    p = np.asarray(p, dtype=float)
    if np.any(~(p > 0)):
        raise DomainError("densities must be positive to invert the statistics")
    _, cp = _prefactors(params)
    return np.asarray(psi) - e_homo + np.log(p / cp)


def recombination(n, p, params):
    """Langevin rate gamma * (n p - N_intr**2)."""
    return params.gamma * (np.asarray(n) * np.asarray(p) - params.N_intr ** 2)


def intrinsic_concentration(e_lumo, e_homo, params):
    """Squared intrinsic concentration N_n0 N_p0 exp(-(E_L - E_H))."""
    return params.N_n0 * params.N_p0 * np.exp(-(np.asarray(e_lumo) - np.asarray(e_homo)))


# Gauss-Legendre rule reused for every panel
_GL_X, _GL_W = np.polynomial.legendre.leggauss(40)
_XI_MAX = 12.0


def _panel_edges(eta, z):
    edges = [-_XI_MAX, _XI_MAX]
    if z > 0:
        centre = eta / z
        width = 1.0 / z
        for k in (-8, -4, -2, -1, 0, 1, 2, 4, 8):
            x = centre + k * width
            if -_XI_MAX < x < _XI_MAX:
                edges.append(x)
    edges.extend(np.linspace(-_XI_MAX, _XI_MAX, 13)[1:-1])
    return np.unique(edges)


def gauss_fermi_integral(eta, z):
    """Gauss-Fermi integral  (2 pi)^-1/2 int exp(-xi^2/2) / (exp(z xi - eta) + 1) dxi.

    Composite 40-point Gauss-Legendre over [-12, 12], with extra panel
    breaks around the Fermi edge xi = eta / z.
    """
    eta = float(eta)
    z = float(z)
    if not (np.isfinite(eta) and np.isfinite(z)):
        raise DomainError("Gauss-Fermi arguments must be finite")
    if z < 0:
        raise DomainError("Gauss-Fermi width z must be >= 0")
    edges = _panel_edges(eta, z)
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    xi = (0.5 * (a + b))[:, None] + half[:, None] * _GL_X[None, :]
    f = np.exp(-0.5 * xi ** 2) * expit(eta - z * xi)
    return float(np.sum(half[:, None] * _GL_W[None, :] * f) / np.sqrt(2.0 * np.pi))


def boltzmann_approx(eta, z):
    """Low-density limit exp(eta) exp(z**2 / 2)."""
    return _guarded_exp(np.asarray(eta, dtype=float) + 0.5 * np.asarray(z, dtype=float) ** 2)


def electroneutral_potential(e_lumo, e_homo, params):
    """Potential giving n = p at zero quasi-Fermi levels (Boltzmann statistics)."""
    if not (params.N_n0 > 0 and params.N_p0 > 0):
        raise DomainError("N_n0 and N_p0 must be positive")
    return (0.5 * (np.asarray(e_lumo) + np.asarray(e_homo))
            + 0.25 * (params.sigma_p ** 2 - params.sigma_n ** 2)
            + 0.5 * np.log(params.N_p0 / params.N_n0))


def electroneutral_potential_gauss_fermi(e_lumo, e_homo, params):
    """Electroneutral potential with the full Gauss-Fermi statistics (scalar)."""
    from scipy.optimize import brentq

    def imbalance(psi):
        n = params.N_n0 * gauss_fermi_integral(psi - e_lumo, params.sigma_n)
        p = params.N_p0 * gauss_fermi_integral(e_homo - psi, params.sigma_p)
        return np.log(n) - np.log(p)

    lo, hi = min(e_lumo, e_homo) - 5.0, max(e_lumo, e_homo) + 5.0
    return brentq(imbalance, lo, hi, xtol=1e-14)


@dataclass(frozen=True)
class Scales:
    """Characteristic scales; the voltage scale is the thermal voltage."""

    x_c: float
    t_c: float
    T_c: float
    q_c: float = const.e
    k_B: float = const.k

    def __post_init__(self):
        for name in ("x_c", "t_c", "T_c", "q_c", "k_B"):
            if not getattr(self, name) > 0:
                raise DimensionError(f"scale {name} must be positive")

    @property
    def V_c(self):
        return self.k_B * self.T_c / self.q_c


@dataclass(frozen=True)
class DimensionalParams:
    """Physical inputs in SI units (energies in joules)."""

    d_X: float
    G: float
    eta_r: float
    eta_d: float
    lam: float
    mu_n: float
    mu_p: float
    eps: float
    N_n0: float
    N_p0: float
    sigma_n: float
    sigma_p: float
    gamma: float
    N_intr: float
    E_L_p: float
    E_L_nfa: float
    E_H_p: float
    E_H_nfa: float
    tau: float
    tol: float = 1e-4


def nondimensionalize(dim, scales):
    """Apply the characteristic-scale map to physical inputs."""
    x, t, kt, q = scales.x_c, scales.t_c, scales.k_B * scales.T_c, scales.q_c
    mob = kt * t / (x ** 2 * q)
    return ModelParams(
        d_X=t / x ** 2 * dim.d_X,
        G=t * x ** 3 * dim.G,
        eta_r=t * dim.eta_r,
        eta_d=t / x * dim.lam * dim.eta_d,
        mu_n=mob * dim.mu_n,
        mu_p=mob * dim.mu_p,
        eps=kt * x / q ** 2 * dim.eps,
        N_n0=x ** 3 * dim.N_n0,
        N_p0=x ** 3 * dim.N_p0,
        sigma_n=dim.sigma_n / kt,
        sigma_p=dim.sigma_p / kt,
        gamma=t / x ** 3 * dim.gamma,
        N_intr=x ** 3 * dim.N_intr,
        E_L_p=dim.E_L_p / kt,
        E_L_nfa=dim.E_L_nfa / kt,
        E_H_p=dim.E_H_p / kt,
        E_H_nfa=dim.E_H_nfa / kt,
        tau=dim.tau / t,
        tol=dim.tol,
    )
