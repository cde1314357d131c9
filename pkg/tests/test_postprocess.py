import dataclasses

import numpy as np
import pytest

from conftest import equilibrium_case
from opvsim.assembly import DeviceFields
from opvsim.mesh import BoundaryTag, build_structured_mesh
from opvsim.morphology import generate_synthetic
from opvsim.physics import ModelParams, State, quasi_fermi_from_density
from opvsim.postprocess import (IVCurve, IVPoint, auxiliary_weight, conservation_check,
                                current_terms, extract_metrics, terminal_current)


@pytest.mark.parametrize("counts", [(7, 9), (4, 5, 6)])
def test_aux_weight_is_linear_profile(counts):
    m = build_structured_mesh((10.0,) * len(counts), counts)
    top = auxiliary_weight(m, BoundaryTag.TOP_ORG).values
    bot = auxiliary_weight(m, BoundaryTag.BOT_ORG).values
    np.testing.assert_allclose(top, m.vertices[:, -1] / 10.0, atol=1e-12)
    np.testing.assert_allclose(top + bot, 1.0, atol=1e-12)


def test_aux_weight_needs_a_contact():
    m = build_structured_mesh((10, 10), (3, 3))
    with pytest.raises(ValueError):
        auxiliary_weight(m, BoundaryTag.INS)


@pytest.mark.parametrize("i_top, i_bot, floor, expected", [
    (1.5847, -1.5846, 1.0, 1e-4 / 1.5847), (-2.5, 2.5, 1.0, 0.0), (1.0, 0.0, 1.0, 1.0),
    (1e-6, 0.0, 1.0, 1e-6), (1e-6, 0.0, 1e-9, 1.0)])
def test_conservation_metric(i_top, i_bot, floor, expected):
    assert conservation_check(i_top, i_bot, floor) == pytest.approx(expected, rel=1e-12, abs=1e-300)


def test_conservation_metric_reference_pair():
    assert conservation_check(1.5847e0, -1.5846e0) == pytest.approx(6.3e-5, rel=0.01)


def test_metrics_linear_curve():
    v = np.linspace(0, 2, 21)
    m = extract_metrics((v, v - 1))
    assert m.v_oc == pytest.approx(1.0, abs=1e-12)
    assert m.j_sc == pytest.approx(-1.0)
    # max |V I| on [0, 1] is 1/4 at V = 1/2
    assert m.ff == pytest.approx(0.25)


def test_metrics_without_crossing():
    v = np.linspace(0, 1, 5)
    m = extract_metrics((v, 1 + v))
    assert m.v_oc is None and m.ff is None and m.j_sc == pytest.approx(1.0)


def test_metrics_diode_like_curve():
    v = np.round(np.arange(0, 1.01, 0.1), 10)
    m = extract_metrics((v, np.exp(v) - 2))
    assert m.v_oc == pytest.approx(np.log(2), abs=0.01)
    assert m.j_sc == pytest.approx(-1.0)


def test_metrics_reject_empty_curve():
    with pytest.raises(ValueError):
        extract_metrics((np.array([]), np.array([])))


def test_curve_requires_increasing_voltage():
    c = IVCurve()
    c.append(IVPoint(0.0, 0.0, 1.0, -1.0))
    with pytest.raises(ValueError):
        c.append(IVPoint(0.0, 0.0, 1.0, -1.0))


def test_equilibrium_carries_no_current():
    m, f, par, st0 = equilibrium_case((8, 8))
    for tag in (BoundaryTag.TOP_ORG, BoundaryTag.BOT_ORG):
        w = auxiliary_weight(m, tag)
        assert abs(terminal_current(st0, st0, w, f, par, 1e-4)) < 1e-8 * 100


def _strip(counts=(5, 9)):
    m = build_structured_mesh((4.0, 6.0), counts)
    par = ModelParams(sigma_n=0.0, sigma_p=0.0, mu_n=3.0, mu_p=1.0)
    f = DeviceFields.build(m, generate_synthetic("uniform", m, c=0.5), par)
    return m, f, par


def test_strip_current_matches_closed_form():
    # psi - phi is constant, so both densities are constant along a linear
    # quasi-Fermi ramp and the flux is -mu n grad(phi) exactly
    m, f, par = _strip()
    width, height, slope = 4.0, 6.0, 0.4
    phi = slope * m.vertices[:, 1]
    psi0 = -quasi_fermi_from_density(2.0, 0.0, f.e_lumo[0], par)
    state = State(psi0 + phi, phi, phi.copy(), np.zeros(m.num_vertices))
    n, p = f.densities(state.psi, state.phi_n, state.phi_p, par)
    assert np.ptp(n) < 1e-12 * n[0] and np.ptp(p) < 1e-12 * p[0]
    w = auxiliary_weight(m, BoundaryTag.TOP_ORG)
    transport, _ = current_terms(None, state, w, f, par, np.inf)
    expected = -(par.mu_n * n[0] + par.mu_p * p[0]) * slope * width
    assert transport == pytest.approx(expected, rel=1e-10)
    assert height == m.height


def test_displacement_vanishes_at_steady_state():
    m, f, par = _strip()
    rng = np.random.default_rng(0)
    s = State(rng.normal(size=m.num_vertices), rng.normal(size=m.num_vertices),
              rng.normal(size=m.num_vertices), np.zeros(m.num_vertices))
    w = auxiliary_weight(m, BoundaryTag.BOT_ORG)
    transport, displacement = current_terms(s, s, w, f, par, 1e-4)
    assert displacement == 0.0 and transport != 0.0


def test_current_is_linear_in_mobilities():
    m, f, par = _strip()
    rng = np.random.default_rng(1)
    s = State(rng.normal(size=m.num_vertices), rng.normal(size=m.num_vertices),
              rng.normal(size=m.num_vertices), np.zeros(m.num_vertices))
    w = auxiliary_weight(m, BoundaryTag.TOP_ORG)
    a, _ = current_terms(None, s, w, f, par, np.inf)
    par2 = dataclasses.replace(par, mu_n=2 * par.mu_n, mu_p=2 * par.mu_p)
    b, _ = current_terms(None, s, w, f, par2, np.inf)
    assert b == pytest.approx(2 * a, rel=1e-14)
