"""Time stepping to steady state and the three nonlinear strategies.

Each time step solves the exciton equation first, since it does not depend
on the electronic unknowns, and then advances (psi, phi_n, phi_p) by one
of

* ``newton``: the fully coupled Newton iteration,
* ``gummel``: one damped decoupled pass in density unknowns,
* ``semi_newton_gummel``: damped per-equation Newton solves.

Steady state is declared once the mass-weighted L2 increments of psi, n, p
and X between consecutive steps all fall below ``steady_tol``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import physics
from .assembly import (QUADRATURES, AssembledSystem, DeviceFields, _transport_operators,
                       apply_dirichlet, assemble_weighted_mass, block_residual_jacobian,
                       coupled_residual_jacobian)
from .errors import ConvergenceError, DomainError, OpvSimError
from .linsolve import LinearSolverConfig, PreconditionerSpec, build_preconditioner, gmres_solve
from .mesh import BoundaryTag
from .physics import State

log = logging.getLogger(__name__)

__all__ = [
    "METHODS",
    "NonlinearConfig",
    "SweepConfig",
    "SolveReport",
    "ExcitonSolver",
    "solve_exciton_step",
    "newton_coupled_step",
    "gummel_step",
    "semi_newton_gummel_step",
    "damped_update",
    "initial_state",
    "advance_to_steady",
    "voltage_sweep",
]

METHODS = ("newton", "gummel", "semi_newton_gummel")
DEFAULT_ALPHA = {"newton": 1.0, "gummel": 0.5, "semi_newton_gummel": 0.7}
DENSITY_FLOOR = 1e-300
# a Newton update this small (infinity norm) is at the roundoff floor
STAGNATION = 1e-12


@dataclass(frozen=True)
class NonlinearConfig:
    method: str = "newton"
    newton_rtol: float = 1e-6
    newton_atol: float = 1e-10
    newton_max_iters: int = 25
    alpha: float = None
    steady_tol: float = 1e-4
    tau: float = 1e-4
    max_time_steps: int = 2000
    linear: LinearSolverConfig = field(default_factory=LinearSolverConfig)
    precond: PreconditionerSpec = field(default_factory=PreconditionerSpec)
    gummel_poisson: str = "linearized"
    update_limit: float = 1.0
    tau_growth: float = 1.0
    tau_max: float = float("inf")
    max_step_cuts: int = 6
    acceleration: str = "none"
    anderson_depth: int = 5
    quadrature: str = "exact"
    artificial_diffusion: float = 0.0

    def __post_init__(self):
        problems = self.validate()
        if problems:
            raise DomainError("; ".join(problems))

    def validate(self):
        problems = []
        if self.method not in METHODS:
            problems.append(f"method must be one of {METHODS}, got {self.method!r}")
        if self.alpha is not None and not 0 < self.alpha <= 1:
            problems.append(f"alpha must lie in (0, 1), got {self.alpha}")
        for name in ("newton_rtol", "newton_atol", "steady_tol", "tau"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        for name in ("newton_max_iters", "max_time_steps"):
            if not getattr(self, name) >= 1:
                problems.append(f"{name} must be >= 1")
        if not self.tau_growth >= 1:
            problems.append("tau_growth must be >= 1")
        if not self.tau_max >= self.tau:
            problems.append("tau_max must be >= tau")
        if not self.max_step_cuts >= 0:
            problems.append("max_step_cuts must be >= 0")
        if self.acceleration not in ("none", "anderson"):
            problems.append("acceleration must be 'none' or 'anderson'")
        if not self.anderson_depth >= 1:
            problems.append("anderson_depth must be >= 1")
        if not self.update_limit > 0:
            problems.append("update_limit must be > 0 (use inf to disable)")
        if not self.artificial_diffusion >= 0:
            problems.append("artificial_diffusion must be >= 0")
        if self.quadrature not in QUADRATURES:
            problems.append(f"quadrature must be one of {QUADRATURES}")
        if self.gummel_poisson not in ("linearized", "frozen"):
            problems.append("gummel_poisson must be 'linearized' or 'frozen'")
        return problems

    @property
    def damping(self):
        return DEFAULT_ALPHA[self.method] if self.alpha is None else self.alpha

    def replace(self, **changes):
        import dataclasses
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class SweepConfig:
    v_bot: float = 0.0
    v_top_start: float = 0.0
    v_top_stop: float = 1.0
    v_top_step: float = 0.25

    def __post_init__(self):
        if not self.v_top_step > 0:
            raise DomainError("sweep step must be > 0")
        if not self.v_top_start <= self.v_top_stop:
            raise DomainError("sweep start must not exceed stop")

    def voltages(self):
        count = int(np.floor((self.v_top_stop - self.v_top_start) / self.v_top_step + 1e-9)) + 1
        return [self.v_top_start + k * self.v_top_step for k in range(count)]


@dataclass
class SolveReport:
    """Convergence record of one voltage point."""

    method: str
    time_steps: int = 0
    newton_iters: dict = field(default_factory=dict)
    gmres_iters: dict = field(default_factory=dict)
    converged: bool = False
    increment: float = float("inf")
    message: str = ""
    wall_time: float = 0.0

    def note_newton(self, eq, its):
        self.newton_iters[eq] = max(self.newton_iters.get(eq, 0), int(its))

    def note_gmres(self, eq, its):
        self.gmres_iters[eq] = max(self.gmres_iters.get(eq, 0), int(its))

    @property
    def max_newton(self):
        return max(self.newton_iters.values(), default=0)

    @property
    def max_gmres(self):
        return max(self.gmres_iters.values(), default=0)

    def as_dict(self):
        return {
            "method": self.method,
            "time_steps": self.time_steps,
            "newton_iters": dict(self.newton_iters),
            "gmres_iters": dict(self.gmres_iters),
            "converged": self.converged,
            "increment": self.increment,
            "message": self.message,
        }


def damped_update(u_prev, u_candidate, alpha):
    """Convex combination ``alpha * candidate + (1 - alpha) * prev``."""
    u_prev = np.asarray(u_prev, dtype=float)
    u_candidate = np.asarray(u_candidate, dtype=float)
    if u_prev.shape != u_candidate.shape:
        raise ValueError("fields to blend must have the same shape")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if alpha == 1:
        return u_candidate.copy()
    return alpha * u_candidate + (1.0 - alpha) * u_prev


def _linear_solve(a, b, x0, cfg, report, eq, precond=None, linear=None):
    """GMRES solve of ``a x = b`` that raises on failure.

    With a warm start ``x0`` the correction ``a d = b - a x0`` is solved
    instead, so the relative tolerance refers to the change over the step
    and not to the size of ``b``. Without this a time step whose update is
    tiny relative to the state would be accepted as already converged.
    """
    if precond is None:
        precond = build_preconditioner(a, cfg.precond)
    linear = linear or cfg.linear
    rhs = b if x0 is None else b - a @ x0
    d, rep = gmres_solve(a, rhs, None, precond, linear)
    if report is not None:
        report.note_gmres(eq, rep.iterations)
    if not rep.converged:
        raise ConvergenceError(f"GMRES failed on the {eq} system: residual {rep.residual:.3e} "
                               f"after {rep.iterations} iterations")
    return d if x0 is None else x0 + d


# ---------------------------------------------------------------------------
# exciton
# ---------------------------------------------------------------------------


class ExcitonSolver:
    """Implicit-Euler exciton step with a cached matrix and preconditioner.

    Solves ``(M/tau + d_X K + W(eta_r + eta_d |grad phi|)) X = G 1 + M X_prev / tau``
    with natural boundary conditions everywhere.
    """

    def __init__(self, mesh, indicator, params, tau, precond=None, linear=None,
                 quadrature="exact"):
        fe = mesh.fe
        self.fe = fe
        self.params = params
        self.tau = tau
        self.inv_tau = 1.0 / tau if np.isfinite(tau) else 0.0
        weight = params.eta_r + params.eta_d * np.asarray(indicator, dtype=float)
        if quadrature == "exact":
            self.mass, wmass = fe.mass, assemble_weighted_mass(mesh, weight)
        else:
            self.mass, wmass = sp.diags(fe.lumped), sp.diags(fe.lumped * weight)
        self.matrix = (self.inv_tau * self.mass + params.d_X * fe.stiffness + wmass).tocsr()
        self.source = params.G * fe.lumped
        self.linear = linear or LinearSolverConfig()
        self.precond = build_preconditioner(self.matrix, precond or PreconditionerSpec())

    def step(self, X_prev, report=None):
        X_prev = np.asarray(X_prev, dtype=float)
        if not np.all(np.isfinite(X_prev)):
            raise DomainError("exciton density must be finite")
        rhs = self.source + self.inv_tau * (self.mass @ X_prev) - self.matrix @ X_prev
        d, rep = gmres_solve(self.matrix, rhs, None, self.precond, self.linear)
        if report is not None:
            report.note_gmres("X", rep.iterations)
        if not rep.converged:
            raise ConvergenceError(f"GMRES failed on the exciton system ({rep})")
        return X_prev + d


def solve_exciton_step(X_prev, indicator, params, mesh, tau=None, precond=None):
    """One implicit-Euler exciton step (convenience wrapper)."""
    tau = params.tau if tau is None else tau
    return ExcitonSolver(mesh, getattr(indicator, "values", indicator), params, tau,
                         precond).step(X_prev)


# ---------------------------------------------------------------------------
# stepping context
# ---------------------------------------------------------------------------


class ExcitonCache:
    """One ExcitonSolver per time-step size."""

    def __init__(self, fields, params, cfg):
        self.args = (fields.mesh, fields.indicator, params)
        self.precond = cfg.precond
        self.linear = cfg.linear
        self.quadrature = fields.quadrature
        self._solvers = {}

    def __call__(self, tau):
        if tau not in self._solvers:
            self._solvers[tau] = ExcitonSolver(*self.args, tau, self.precond, self.linear,
                                               self.quadrature)
        return self._solvers[tau]


class _Context:
    """Everything a single time step needs."""

    def __init__(self, fields, params, cfg, excitons=None):
        self.fields = fields
        self.params = params
        self.cfg = cfg
        self.excitons = excitons or ExcitonCache(fields, params, cfg)
        n = fields.mesh.num_vertices
        # node-interleaved ordering keeps the three unknowns of a node together,
        # which makes ILU(0) of the coupled Jacobian far more effective
        self.perm = np.arange(3 * n).reshape(3, n).T.ravel()
        self.iperm = np.argsort(self.perm)

    def exciton(self, tau):
        return self.excitons(tau)


def limit_update(delta, limit):
    """Componentwise logarithmic limiting of Newton updates.

    Entries with ``|d| <= limit`` pass unchanged, larger ones grow only
    logarithmically. Potentials are in thermal units, so this stops a single
    linearization from moving a density by many orders of magnitude.
    """
    if not np.isfinite(limit):
        return delta
    mag = np.abs(delta)
    big = mag > limit
    if not np.any(big):
        return delta
    out = delta.copy()
    out[big] = np.sign(delta[big]) * (limit + np.log1p(mag[big] - limit))
    return out


def _newton(residual_jacobian, unknowns, cfg, report, eq, perm=None, iperm=None):
    """Newton loop on a list of nodal arrays (modified in place)."""
    res, jac = residual_jacobian()
    f0 = np.linalg.norm(res)
    target = max(cfg.newton_rtol * f0, cfg.newton_atol)
    its = 0
    history = [f0]
    fnorm = f0
    sizes = np.cumsum([u.size for u in unknowns])[:-1]
    while fnorm > target:
        if its >= cfg.newton_max_iters:
            report.note_newton(eq, its)
            raise ConvergenceError(f"Newton on {eq} did not converge in {its} iterations "
                                   f"(residual {fnorm:.3e}, target {target:.3e})")
        if perm is not None:
            jp = jac[perm][:, perm]
            delta = _linear_solve(jp, -res[perm], None, cfg, report, eq)[iperm]
        else:
            delta = _linear_solve(jac, -res, None, cfg, report, eq)
        delta = limit_update(delta, cfg.update_limit)
        for u, d in zip(unknowns, np.split(delta, sizes)):
            u += d
        its += 1
        res, jac = residual_jacobian()
        fnorm = np.linalg.norm(res)
        history.append(fnorm)
        if np.max(np.abs(delta)) <= STAGNATION:
            log.debug("Newton on %s stopped at roundoff: |F| = %.3e", eq, fnorm)
            break
    report.note_newton(eq, its)
    return its, history


def newton_coupled_step(state_prev, X_next, fields, params, cfg, v_top=0.0, v_bot=0.0,
                        report=None, ctx=None):
    """Fully coupled Newton solve of one implicit-Euler step.

    Returns ``(state_next, iterations)``; the initial guess is ``state_prev``.
    """
    report = report if report is not None else SolveReport("newton")
    ctx = ctx or _Context(fields, params, cfg)
    state = state_prev.copy()
    state.X = np.asarray(X_next, dtype=float).copy()

    def rj():
        return coupled_residual_jacobian(state, state_prev, state.X, fields, params, cfg.tau,
                                         v_top, v_bot)

    its, history = _newton(rj, [state.psi, state.phi_n, state.phi_p], cfg, report, "coupled",
                           ctx.perm, ctx.iperm)
    report.last_newton_history = history
    return state, its


def _density_bc(fields, params, v_top, v_bot):
    nodes, psi_bc, phi_bc = fields.dirichlet(v_top, v_bot)
    n_bc, p_bc = physics.carrier_densities(psi_bc, phi_bc, phi_bc, fields.e_lumo[nodes],
                                           fields.e_homo[nodes], params)
    return nodes, psi_bc, n_bc, p_bc


def _floor(u, name):
    bad = u < DENSITY_FLOOR
    if np.any(bad):
        log.info("stabilization: %d %s values clipped to %g", int(bad.sum()), name, DENSITY_FLOOR)
        u = np.where(bad, DENSITY_FLOOR, u)
    return u


def gummel_step(state_prev, fields, params, cfg, v_top=0.0, v_bot=0.0, report=None, ctx=None):
    """One damped Gummel pass.

    Exciton, then Poisson for psi, then the linear electron and hole
    systems in density unknowns, every quantity blended with damping
    ``alpha``. Quasi-Fermi levels are recovered from the blended densities.
    """
    report = report if report is not None else SolveReport("gummel")
    ctx = ctx or _Context(fields, params, cfg)
    alpha = cfg.damping
    fe = fields.mesh.fe
    X = damped_update(state_prev.X, ctx.exciton(cfg.tau).step(state_prev.X, report), alpha)
    n_k, p_k = fields.densities(state_prev.psi, state_prev.phi_n, state_prev.phi_p, params)
    nodes, psi_bc, n_bc, p_bc = _density_bc(fields, params, v_top, v_bot)

    # Poisson
    if cfg.gummel_poisson == "linearized":
        res, jac = block_residual_jacobian("psi", state_prev, state_prev, X, fields, params,
                                           cfg.tau, v_top, v_bot)
        psi_new = state_prev.psi + _linear_solve(jac, -res, None, cfg, report, "psi")
    else:
        system = apply_dirichlet(AssembledSystem(params.eps * fe.stiffness,
                                                 fields.mass @ (p_k - n_k),
                                                 nodes, psi_bc))
        psi_new = _linear_solve(system.matrix, system.rhs, state_prev.psi, cfg, report, "psi")
    psi = damped_update(state_prev.psi, psi_new, alpha)

    # electrons and holes with the drift of the damped potential; the frozen
    # recombination partner is evaluated at the new potential and the old
    # quasi-Fermi level, which feeds the charge-neutrality information of the
    # Poisson step into the transport solves
    n_star, p_star = fields.densities(psi, state_prev.phi_n, state_prev.phi_p, params)
    a_n, a_p, _, _ = _transport_operators(fe, fields, params, psi, n_star, p_star, cfg.tau)
    inv_tau = 1.0 / cfg.tau if np.isfinite(cfg.tau) else 0.0
    common = params.gamma * params.N_intr ** 2 * fe.lumped + params.eta_d * fields.trilinear(
        fields.indicator, X)
    mass = fields.mass
    sys_n = apply_dirichlet(AssembledSystem(a_n, inv_tau * (mass @ n_k) + common, nodes, n_bc))
    sys_p = apply_dirichlet(AssembledSystem(a_p, inv_tau * (mass @ p_k) + common, nodes, p_bc))
    n_new = _linear_solve(sys_n.matrix, sys_n.rhs, n_k, cfg, report, "n")
    p_new = _linear_solve(sys_p.matrix, sys_p.rhs, p_k, cfg, report, "p")
    n = _floor(damped_update(n_k, n_new, alpha), "electron density")
    p = _floor(damped_update(p_k, p_new, alpha), "hole density")
    phi_n = physics.quasi_fermi_from_density(n, psi, fields.e_lumo, params)
    phi_p = physics.quasi_fermi_from_hole_density(p, psi, fields.e_homo, params)
    # contact values are exact data, not the round trip through exp/log
    _, _, phi_bc = fields.dirichlet(v_top, v_bot)
    phi_n[nodes] = phi_bc
    phi_p[nodes] = phi_bc
    psi[nodes] = psi_bc
    report.note_newton("gummel", 1)
    return State(psi, phi_n, phi_p, X)


def semi_newton_gummel_step(state_prev, fields, params, cfg, v_top=0.0, v_bot=0.0, report=None,
                            ctx=None):
    """Sequential per-equation Newton solves with damping.

    psi is solved with the previous quasi-Fermi levels, phi_n with the new
    psi and the previous phi_p, phi_p with the new psi and the previous
    phi_n.
    """
    report = report if report is not None else SolveReport("semi_newton_gummel")
    ctx = ctx or _Context(fields, params, cfg)
    alpha = cfg.damping
    X = damped_update(state_prev.X, ctx.exciton(cfg.tau).step(state_prev.X, report), alpha)

    work = State(state_prev.psi.copy(), state_prev.phi_n, state_prev.phi_p, X)

    def rj_psi():
        return block_residual_jacobian("psi", work, state_prev, X, fields, params, cfg.tau,
                                       v_top, v_bot)

    _newton(rj_psi, [work.psi], cfg, report, "psi")
    psi = damped_update(state_prev.psi, work.psi, alpha)

    work_n = State(psi, state_prev.phi_n.copy(), state_prev.phi_p, X)

    def rj_n():
        return block_residual_jacobian("phi_n", work_n, state_prev, X, fields, params, cfg.tau,
                                       v_top, v_bot)

    _newton(rj_n, [work_n.phi_n], cfg, report, "phi_n")

    work_p = State(psi, state_prev.phi_n, state_prev.phi_p.copy(), X)

    def rj_p():
        return block_residual_jacobian("phi_p", work_p, state_prev, X, fields, params, cfg.tau,
                                       v_top, v_bot)

    _newton(rj_p, [work_p.phi_p], cfg, report, "phi_p")
    phi_n = damped_update(state_prev.phi_n, work_n.phi_n, alpha)
    phi_p = damped_update(state_prev.phi_p, work_p.phi_p, alpha)
    return State(psi, phi_n, phi_p, X)


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


def _mass_norm(fe, d):
    return float(np.sqrt(max(d @ (fe.mass @ d), 0.0)))


def increment_norm(fields, params, a, b):
    """max over psi, n, p, X of the mass-weighted L2 norm of ``b - a``."""
    fe = fields.mesh.fe
    na, pa = fields.densities(a.psi, a.phi_n, a.phi_p, params)
    nb, pb = fields.densities(b.psi, b.phi_n, b.phi_p, params)
    return max(_mass_norm(fe, b.psi - a.psi), _mass_norm(fe, nb - na),
               _mass_norm(fe, pb - pa), _mass_norm(fe, b.X - a.X))


def initial_state(fields, v_top, v_bot, params=None):
    """Harmonic lift of the potential data, linear quasi-Fermi levels, no excitons."""
    mesh = fields.mesh
    fe = mesh.fe
    nodes, psi_bc, _ = fields.dirichlet(v_top, v_bot)
    system = apply_dirichlet(AssembledSystem(fe.stiffness, np.zeros(fe.n), nodes, psi_bc))
    psi, rep = gmres_solve(system.matrix, system.rhs, None, PreconditionerSpec("ilu0"),
                           LinearSolverConfig(rtol=1e-12, atol=1e-14, max_iters=5000))
    if not rep.converged:
        raise ConvergenceError("harmonic lift did not converge")
    psi[nodes] = psi_bc
    s = mesh.vertices[:, -1] / mesh.height
    phi = v_bot + (v_top - v_bot) * s
    return State(psi, phi.copy(), phi.copy(), np.zeros(fe.n))


_STEPPERS = {
    "gummel": gummel_step,
    "semi_newton_gummel": semi_newton_gummel_step,
}


class AndersonMixer:
    """Anderson mixing for the fixed-point map of the decoupled steps.

    Only (psi, phi_n, phi_p) are mixed. Every stored difference vanishes on
    the contacts, so mixed states keep the boundary data exactly.
    """

    def __init__(self, depth):
        self.depth = depth
        self.reset()

    def reset(self):
        self.dx, self.df = [], []
        self.x_last = self.f_last = None

    def __call__(self, state, mapped):
        x = np.concatenate([state.psi, state.phi_n, state.phi_p])
        gx = np.concatenate([mapped.psi, mapped.phi_n, mapped.phi_p])
        f = gx - x
        if self.x_last is not None:
            self.dx.append(x - self.x_last)
            self.df.append(f - self.f_last)
            del self.dx[:-self.depth], self.df[:-self.depth]
        self.x_last, self.f_last = x, f
        if not self.df:
            return mapped
        dfm = np.array(self.df).T
        gamma = np.linalg.lstsq(dfm, f, rcond=1e-10)[0]
        mixed = gx - (np.array(self.dx).T + dfm) @ gamma
        n = state.psi.size
        return State(mixed[:n], mixed[n:2 * n], mixed[2 * n:], mapped.X.copy())


def advance_to_steady(state0, v_top, v_bot, method, cfg, fields, params, excitons=None):
    """Implicit-Euler time stepping until the step increment drops below ``steady_tol``.

    With ``tau_growth > 1`` the step grows geometrically up to ``tau_max``
    (pseudo-transient continuation) and steady state is only accepted once
    ``tau_max`` is reached. For the decoupled methods ``acceleration =
    "anderson"`` mixes the iterates once ``tau_max`` is reached; the
    increment tested is always that of one plain step. A failed step is retried with a quarter of the
    step size, at most ``max_step_cuts`` times in a row.

    Returns ``(state, report)``. ``report.previous`` holds the state one
    step earlier and ``report.tau`` the last step size, both needed for the
    displacement part of the terminal current.
    """
    cfg = cfg if cfg.method == method else cfg.replace(method=method)
    report = SolveReport(method)
    t0 = time.perf_counter()
    ctx = _Context(fields, params, cfg, excitons)
    state = state0.copy()
    previous = state0.copy()
    tau = cfg.tau
    cuts = 0
    last_tau = tau
    mixer = None
    if cfg.acceleration == "anderson" and method != "newton":
        mixer = AndersonMixer(cfg.anderson_depth)
    fallback = None
    while report.time_steps < cfg.max_time_steps:
        step_cfg = cfg if tau == cfg.tau else cfg.replace(tau=tau, tau_max=max(tau, cfg.tau_max))
        try:
            if method == "newton":
                X = ctx.exciton(tau).step(state.X, report)
                new, _ = newton_coupled_step(state, X, fields, params, step_cfg, v_top, v_bot,
                                             report, ctx)
            else:
                new = _STEPPERS[method](state, fields, params, step_cfg, v_top, v_bot, report, ctx)
            incr = increment_norm(fields, params, state, new)
        except OpvSimError as exc:
            if fallback is not None:
                # a mixed state broke the step: drop the history, resume plainly
                log.info("discarding Anderson history after failure: %s", exc)
                mixer.reset()
                state, fallback = fallback, None
                continue
            if cuts >= cfg.max_step_cuts:
                report.message = f"{type(exc).__name__}: {exc}"
                log.warning("solve at V_top=%g failed: %s", v_top, exc)
                break
            cuts += 1
            tau = tau / 4.0
            log.info("step failed at V_top=%g (%s); retrying with tau=%g", v_top, exc, tau)
            continue
        cuts = 0
        fallback = None
        last_tau = tau
        report.time_steps += 1
        report.increment = incr
        log.debug("step %d tau=%g increment=%.3e", report.time_steps, tau, incr)
        at_max = cfg.tau_growth == 1.0 or tau >= cfg.tau_max
        if incr < cfg.steady_tol and at_max:
            previous, state = state, new
            report.converged = True
            break
        if mixer is not None and at_max:
            previous, fallback = state, new
            state = mixer(state, new)
        else:
            previous, state = state, new
        tau = min(tau * cfg.tau_growth, cfg.tau_max)
    else:
        report.message = f"no steady state within {cfg.max_time_steps} time steps"
    report.wall_time = time.perf_counter() - t0
    report.previous = previous
    report.tau = last_tau
    return state, report


def _shift_contacts(state, fields, w_top, dv_top, dv_bot):
    """Predictor for a new voltage: add the harmonic change of the contact data."""
    shift = dv_bot + (dv_top - dv_bot) * w_top
    return State(state.psi + shift, state.phi_n + shift, state.phi_p + shift, state.X.copy())


def voltage_sweep(morphology, params, sweep, method, cfg, fields=None, callback=None):
    """Continuation in V_top with warm starts; returns an IVCurve.

    A point that fails to reach steady state ends the sweep; the partial
    curve is returned with ``failed`` set.
    """
    from .postprocess import AuxWeight, IVCurve, IVPoint, auxiliary_weight, terminal_current

    mesh = morphology.mesh
    cfg = cfg if cfg.method == method else cfg.replace(method=method)
    fields = fields or DeviceFields.build(mesh, morphology, params, cfg.quadrature,
                                         cfg.artificial_diffusion)
    w_top = auxiliary_weight(mesh, BoundaryTag.TOP_ORG)
    w_bot = AuxWeight(BoundaryTag.BOT_ORG, 1.0 - w_top.values)
    excitons = ExcitonCache(fields, params, cfg)
    curve = IVCurve()
    state = None
    last_v = None
    for v in sweep.voltages():
        if state is None:
            state = initial_state(fields, v, sweep.v_bot, params)
        else:
            state = _shift_contacts(state, fields, w_top.values, v - last_v, 0.0)
        state, report = advance_to_steady(state, v, sweep.v_bot, method, cfg, fields, params,
                                          excitons)
        i_top = terminal_current(report.previous, state, w_top, fields, params, report.tau)
        i_bot = terminal_current(report.previous, state, w_bot, fields, params, report.tau)
        point = IVPoint(v, sweep.v_bot, i_top, i_bot, report)
        point.state = state
        curve.append(point)
        log.info("V_top=%.4g  I_top=%.6e  I_bot=%.6e  steps=%d  converged=%s", v, i_top, i_bot,
                 report.time_steps, report.converged)
        if callback is not None:
            callback(point, state, fields)
        if not report.converged:
            curve.failed = True
            curve.message = f"no convergence at V_top={v}: {report.message}"
            break
        last_v = v
    return curve
