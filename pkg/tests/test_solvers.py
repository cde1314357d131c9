import dataclasses

import numpy as np
import pytest

from conftest import equilibrium_case, state_distance
from opvsim.assembly import DeviceFields
from opvsim.errors import DomainError
from opvsim.linsolve import LinearSolverConfig
from opvsim.mesh import build_structured_mesh
from opvsim.morphology import generate_synthetic, interface_indicator
from opvsim.physics import ModelParams
from opvsim.solvers import (METHODS, ExcitonSolver, NonlinearConfig, SolveReport, SweepConfig,
                            advance_to_steady, damped_update, gummel_step, initial_state,
                            newton_coupled_step, semi_newton_gummel_step, solve_exciton_step,
                            voltage_sweep)

G = 16990.0
TIGHT = LinearSolverConfig(rtol=1e-12, atol=1e-12)


def test_damped_update_examples():
    c = np.array([1.0, 2.0, 3.0])
    out = damped_update(np.zeros(3), c, 1.0)
    np.testing.assert_array_equal(out, c)
    assert out is not c
    assert damped_update(np.array([0.0]), np.array([2.0]), 0.5)[0] == 1.0
    a = np.array([5.0, 1.0, -2.0])
    b = np.array([5.0, 7.0, 4.0])
    assert damped_update(a, b, 0.3)[0] == 5.0


@pytest.mark.parametrize("alpha", [0.0, 1.5, -0.1])
def test_damped_update_rejects_alpha(alpha):
    with pytest.raises(ValueError):
        damped_update(np.zeros(2), np.ones(2), alpha)


def test_damping_defaults_and_validation():
    assert NonlinearConfig(method="gummel").damping == 0.5
    assert NonlinearConfig(method="semi_newton_gummel").damping == 0.7
    with pytest.raises(DomainError):
        NonlinearConfig(alpha=1.5)
    with pytest.raises(DomainError):
        NonlinearConfig(method="picard")
    with pytest.raises(DomainError):
        SweepConfig(v_top_step=0.0)
    assert SweepConfig(0.0, 0.0, 2.0, 0.25).voltages()[-1] == pytest.approx(2.0)
    assert len(SweepConfig(0.0, 0.0, 2.0, 0.25).voltages()) == 9


# --- excitons ---------------------------------------------------------------

def _uniform_mesh(n=6):
    m = build_structured_mesh((10, 10), (n, n))
    return m, interface_indicator(generate_synthetic("uniform", m, c=0.5))


def test_exciton_fixed_point():
    m, ind = _uniform_mesh()
    par = ModelParams()
    X = np.full(m.num_vertices, G / par.eta_r)
    np.testing.assert_allclose(solve_exciton_step(X, ind, par, m), X, rtol=1e-10)


def test_exciton_scalar_ode_rate():
    m, ind = _uniform_mesh()
    par = ModelParams()
    solver = ExcitonSolver(m, ind.values, par, tau=0.5, linear=TIGHT)
    X = np.zeros(m.num_vertices)
    for k in range(1, 4):
        X = solver.step(X)
        np.testing.assert_allclose(X, G * (1 - (1 / 1.5) ** k), rtol=1e-6)
    for _ in range(40):
        X = solver.step(X)
    np.testing.assert_allclose(X, G, rtol=1e-3)


def test_exciton_uniform_indicator_balance():
    m, _ = _uniform_mesh()
    par = ModelParams()
    c = 0.37
    solver = ExcitonSolver(m, np.full(m.num_vertices, c), par, tau=np.inf, linear=TIGHT)
    np.testing.assert_allclose(solver.step(np.zeros(m.num_vertices)),
                               G / (par.eta_r + par.eta_d * c), rtol=1e-8)


@pytest.mark.parametrize("quadrature", ["exact", "vertex"])
def test_exciton_positive_on_bilayer(quadrature):
    m = build_structured_mesh((10, 10), (21, 21))
    ind = interface_indicator(generate_synthetic("bilayer", m, h_split=5.2)).values
    solver = ExcitonSolver(m, ind, ModelParams(), 1e-2, quadrature=quadrature)
    X = np.zeros(m.num_vertices)
    for _ in range(5):
        X = solver.step(X)
        assert X.min() >= -1e-12


def test_exciton_rejects_nonfinite():
    m, ind = _uniform_mesh(3)
    with pytest.raises(DomainError):
        solve_exciton_step(np.full(9, np.nan), ind, ModelParams(), m)


# --- fixed point preservation -----------------------------------------------

def test_newton_at_equilibrium(equilibrium):
    m, f, par, st0 = equilibrium
    cfg = NonlinearConfig()
    new, its = newton_coupled_step(st0, st0.X, f, par, cfg)
    assert its <= 1
    assert state_distance(st0, new) < 1e-10


@pytest.mark.parametrize("step", [gummel_step, semi_newton_gummel_step])
def test_decoupled_steps_at_equilibrium(equilibrium, step):
    m, f, par, st0 = equilibrium
    new = step(st0, f, par, NonlinearConfig(method="gummel"))
    for name in ("psi", "phi_n", "phi_p", "X"):
        assert np.max(np.abs(getattr(new, name) - getattr(st0, name))) < 1e-10


@pytest.mark.parametrize("method", METHODS)
def test_advance_from_equilibrium_takes_one_step(equilibrium, method):
    m, f, par, st0 = equilibrium
    state, rep = advance_to_steady(st0, 0.0, 0.0, method, NonlinearConfig(method=method), f, par)
    assert rep.converged and rep.time_steps == 1
    assert rep.increment < 1e-10


def test_equilibrium_3d():
    m, f, par, st0 = equilibrium_case((4, 4, 4))
    new, its = newton_coupled_step(st0, st0.X, f, par, NonlinearConfig())
    assert its <= 1 and state_distance(st0, new) < 1e-10


# --- Newton convergence -----------------------------------------------------

def _checkerboard(n=16):
    m = build_structured_mesh((10, 10), (n, n))
    par = ModelParams()
    phi = generate_synthetic("checkerboard", m, period=2.5)
    return m, phi, DeviceFields.build(m, phi, par), par


def test_newton_converges_quadratically():
    m, _, f, par = _checkerboard()
    s0 = initial_state(f, 0.1, 0.0, par)
    tau = 1e-2
    cfg = NonlinearConfig(tau=tau, newton_rtol=1e-12, newton_atol=1e-13)
    X = ExcitonSolver(m, f.indicator, par, tau).step(s0.X)
    rep = SolveReport("newton")
    newton_coupled_step(s0, X, f, par, cfg, 0.1, 0.0, rep)
    r = np.array(rep.last_newton_history)
    r = r[r > 1e-9 * r[0]]  # drop the roundoff floor
    ratios = r[-3:] / r[-4:-1] ** 2
    assert np.all(np.isfinite(ratios)) and ratios.max() < 1e-2
    orders = np.log(r[-2:] / r[-3:-1]) / np.log(r[-3:-1] / r[-4:-2])
    assert orders.min() > 1.5


# --- driver -----------------------------------------------------------------

def _relaxed_cfg(method, **kw):
    base = dict(method=method, tau=1e-3, tau_growth=2.0, tau_max=1e3, steady_tol=1e-6,
                max_time_steps=500, acceleration="anderson")
    base.update(kw)
    return NonlinearConfig(**base)


def test_report_contract_and_uniform_excitons():
    m = build_structured_mesh((10, 10), (6, 6))
    par = ModelParams()
    f = DeviceFields.build(m, generate_synthetic("uniform", m, c=0.5), par)
    cfg = _relaxed_cfg("newton", steady_tol=1e-4)
    state, rep = advance_to_steady(initial_state(f, 0.0, 0.0, par), 0.0, 0.0, "newton", cfg, f,
                                   par)
    assert rep.converged and rep.increment <= cfg.steady_tol
    np.testing.assert_allclose(state.X, G / par.eta_r, rtol=1e-6)
    d = rep.as_dict()
    assert d["converged"] and d["time_steps"] == rep.time_steps


def test_report_marks_failure_when_step_budget_is_exhausted():
    m, phi, f, par = _checkerboard(8)
    cfg = NonlinearConfig(tau=1e-4, max_time_steps=3)
    _, rep = advance_to_steady(initial_state(f, 0.5, 0.0, par), 0.5, 0.0, "newton", cfg, f, par)
    assert not rep.converged and rep.time_steps == 3 and "time steps" in rep.message


def test_steady_state_is_tau_robust():
    m, phi, f, par = _checkerboard(8)
    s0 = initial_state(f, 0.2, 0.0, par)
    a, _ = advance_to_steady(s0, 0.2, 0.0, "newton", _relaxed_cfg("newton"), f, par)
    b, _ = advance_to_steady(s0, 0.2, 0.0, "newton", _relaxed_cfg("newton", tau=5e-4), f, par)
    fe = m.fe
    gap = max(np.sqrt(d @ (fe.mass @ d)) for d in (a.psi - b.psi, a.phi_n - b.phi_n,
                                                  a.phi_p - b.phi_p))
    assert gap < 10 * 1e-6


@pytest.mark.slow
@pytest.mark.parametrize("method", ["gummel", "semi_newton_gummel"])
def test_methods_agree_on_checkerboard(method):
    # at h = 10/15 the consistent mass terms are not monotone and Newton
    # overflows once the step grows; nodal quadrature keeps this mesh usable
    m, phi, _, par = _checkerboard(16)
    f = DeviceFields.build(m, phi, par, quadrature="vertex")
    s0 = initial_state(f, 0.1, 0.0, par)
    ref, r0 = advance_to_steady(s0, 0.1, 0.0, "newton", _relaxed_cfg("newton"), f, par)
    # damped Gummel needs a little over 500 steps here
    other, r1 = advance_to_steady(s0, 0.1, 0.0, method, _relaxed_cfg(method, max_time_steps=1000),
                                  f, par)
    assert r0.converged and r1.converged
    assert state_distance(ref, other) < 1e-3
    assert r1.max_newton <= 12


def test_zero_bias_symmetric_sweep_carries_no_current():
    m = build_structured_mesh((10, 10), (8, 8))
    par = dataclasses.replace(ModelParams(), G=0.0, mu_p=3.0)
    phi = generate_synthetic("uniform", m, c=0.5)
    curve = voltage_sweep(phi, par, SweepConfig(0.0, 0.0, 0.0, 0.1), "newton",
                          _relaxed_cfg("newton"))
    p = curve.points[0]
    assert p.converged
    assert abs(p.i_top) < 1e-6 and abs(p.i_bot) < 1e-6


def test_sweep_conservation_and_warm_start_continuity():
    m, phi, f, par = _checkerboard(8)
    cfg = _relaxed_cfg("newton")
    curve = voltage_sweep(phi, par, SweepConfig(0.0, 0.0, 0.4, 0.2), "newton", cfg, f)
    assert not curve.failed and len(curve) == 3
    for p in curve:
        assert abs(p.i_top + p.i_bot) <= 1e-3 * max(abs(p.i_top), 1.0)
    half = voltage_sweep(phi, par, SweepConfig(v_top_start=0.2, v_top_stop=0.3, v_top_step=0.1), "newton", cfg, f)
    base = curve.points[1].state
    full_jump = state_distance(base, curve.points[2].state)
    half_jump = state_distance(base, half.points[1].state)
    assert 0.3 <= half_jump / full_jump <= 0.7


def test_failed_point_ends_sweep():
    m, phi, f, par = _checkerboard(8)
    cfg = NonlinearConfig(tau=1e-4, max_time_steps=2)
    curve = voltage_sweep(phi, par, SweepConfig(0.0, 0.0, 1.0, 0.5), "newton", cfg, f)
    assert curve.failed and len(curve) == 1 and "V_top=0" in curve.message
