from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbswe.contactline import (
    gamma_rhs, gamma_rhs_conormal, psi_rhs, transversality, tube_check, velocity_gap,
)
from fbswe.errors import TransversalityLost, TubeExceeded
from fbswe.interior import ObstacleSpec
from fbswe.stepper import advance, cfl_dt, initialize

from oracles import PHYS, coupled_setup


@pytest.fixture(scope="module")
def rest():
    return coupled_setup(16, 32, 12, amp=0.0)


@pytest.fixture(scope="module")
def moving():
    model, sys = coupled_setup(24, 48, 18, amp=0.05, center=(1.4, 0.2), width=0.3)
    for _ in range(6):
        sys = advance(model, sys, cfl_dt(model, sys))
    return model, sys


def test_rest_state_tendencies_vanish(rest):
    _, sys = rest
    assert np.max(np.abs(sys.ev.dgamma)) <= 1e-14
    assert np.max(np.abs(sys.ev.dpsi)) <= 1e-14


def test_zero_divergence_gives_zero_speed(moving):
    _, sys = moving
    tr = replace(sys.ev.trace, div=np.zeros_like(sys.ev.trace.div))
    assert np.all(gamma_rhs(tr) == 0.0)


def test_transversality_paraboloid_slope(rest):
    # flat water on Z_w = -0.3 (1 - rho^2): slope 0.6 at the waterline
    _, sys = rest
    assert transversality(sys.ev.trace) == pytest.approx(0.6, abs=1e-10)


def test_transversality_invariant_under_constant_shift():
    c = 0.05
    obs = ObstacleSpec.paraboloid(0.3, 1.0, waterline=c)
    model, sys = coupled_setup(16, 32, 12, amp=0.0, obs=obs)
    z = np.full_like(sys.zeta, c)
    sys = initialize(model, z, sys.q, sys.psi, sys.gamma)
    assert transversality(sys.ev.trace) == pytest.approx(0.6, abs=1e-10)
    assert np.max(np.abs(sys.ev.dgamma)) <= 1e-14


def test_degenerate_transversality(rest):
    _, sys = rest
    tr = replace(sys.ev.trace, dzeta_r=sys.ev.trace.dzeta_i_r.copy())
    assert transversality(tr) == 0.0
    with pytest.raises(TransversalityLost):
        gamma_rhs(tr)
    with pytest.raises(TransversalityLost):
        gamma_rhs(sys.ev.trace, c0=0.7)


def test_conormal_route_agrees(moving):
    _, sys = moving
    tr = sys.ev.trace
    assert np.max(np.abs(sys.gamma)) > 0
    a, b = gamma_rhs(tr), gamma_rhs_conormal(tr)
    assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.max(np.abs(a)))


def test_psi_rhs_rest_and_bernoulli(rest, moving):
    _, sys = rest
    assert np.all(psi_rhs(sys.ev.trace, PHYS) == 0.0)
    _, sys = moving
    tr = replace(sys.ev.trace, g_t=np.zeros_like(sys.ev.trace.g_t))
    expect = -(0.5 * (tr.v_n**2 + tr.v_t**2) + PHYS.g * tr.zeta)
    assert np.allclose(psi_rhs(tr, PHYS), expect, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(vn=st.floats(-1, 1), vt=st.floats(-1, 1), z=st.floats(-0.2, 0.2), gt=st.floats(-1, 1))
def test_psi_rhs_formula(rest, vn, vt, z, gt):
    _, sys = rest
    n = sys.ev.trace.zeta.size
    tr = replace(sys.ev.trace, v_n=np.full(n, vn), v_t=np.full(n, vt), zeta=np.full(n, z), g_t=np.full(n, gt))
    expect = gt * vn - 0.5 * (vn * vn + vt * vt) - PHYS.g * z
    assert np.allclose(psi_rhs(tr, PHYS), expect, atol=1e-15)


def test_velocity_gap(rest):
    _, sys = rest
    assert velocity_gap(sys.ev.trace) == 0.0


def test_tube_check():
    s = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    assert tube_check(np.zeros(64), 0.5, 0.25) == 0.0
    assert tube_check(0.25 * 0.5 * np.cos(s), 0.5, 0.25) == pytest.approx(0.25, rel=1e-15)
    with pytest.raises(TubeExceeded):
        tube_check(0.26 * 0.5 * np.cos(s), 0.5, 0.25)
