from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbswe.errors import JacobianDegenerate, MissingHistory
from fbswe.geometry import make_circle_curve, spectral_derivative
from fbswe.hanzawa import (
    ContactLine, build_diffeo, calibrate_epsilon, check_diffeo_bounds, cutoff, delta0_from_eta0, drR_bound,
    extend_gamma, gamma_norms, sobolev_norm,
)

CURVE = make_circle_curve(1.0, 64, 0.5)
R = np.linspace(-0.9, 1.5, 49)


def smooth_gamma(seed, amp, K=4, curve=CURVE):
    rng = np.random.default_rng(seed)
    g = sum(rng.uniform(-1, 1) / (1 + k**3) * np.cos(k * curve.s + rng.uniform(0, 2 * np.pi))
            for k in range(1, K + 1))
    return amp * g / np.max(np.abs(g))


def test_cutoff_properties():
    x = np.linspace(-1.5, 1.5, 3001)
    c = cutoff(x)
    assert np.all(c[np.abs(x) <= 0.25] == 1.0)
    assert np.all(c[np.abs(x) >= 1.0] == 0.0)
    assert np.all((c >= 0) & (c <= 1))
    # derivative matches differences
    h = 1e-6
    for x0 in (-0.6, 0.4, 0.9):
        fd = (cutoff(x0 + h) - cutoff(x0 - h)) / (2 * h)
        assert cutoff(np.array(x0), 1) == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_delta0_and_bound():
    d0 = delta0_from_eta0(0.25)
    assert d0 == pytest.approx(1.0)
    assert drR_bound(0.25) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        delta0_from_eta0(1.0)


def test_extend_constant():
    ext = extend_gamma(np.full(64, 0.3), CURVE.L, 0.7, R)
    assert np.allclose(ext, 0.3 * cutoff(0.7 * R)[:, None], atol=1e-15)


def test_extend_trace_exact():
    g = np.cos(2 * np.pi * CURVE.s / CURVE.L)
    ext = extend_gamma(g, CURVE.L, 0.7, np.array([0.0, 0.1]))
    assert np.array_equal(ext[0], g)


def test_extend_high_mode_vanishes():
    k = 20
    g = np.cos(k * CURVE.s)
    eps = 0.2
    r = np.array([1.0 / (eps * np.sqrt(1 + k**2)) * 1.01])
    assert np.max(np.abs(extend_gamma(g, CURVE.L, eps, r))) <= 1e-14


def test_identity_for_zero_gamma():
    d = build_diffeo(CURVE, R, ContactLine(np.zeros(64), CURVE.L), 1.0)
    assert not np.any(d.tphi)
    assert np.array_equal(d.J, np.ones_like(d.J))
    assert np.array_equal(d.Nphi[R == 0.0][0] if np.any(R == 0.0) else CURVE.normal, CURVE.normal)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), frac=st.floats(0.05, 1.0))
def test_diffeo_invariants(seed, frac):
    eta0 = 0.25
    gamma = smooth_gamma(seed, frac * eta0 * CURVE.r0)
    cl = ContactLine(gamma, CURVE.L)
    eps, _ = calibrate_epsilon(CURVE, [R], cl, eta0)
    d = build_diffeo(CURVE, R, cl, eps)
    # trace, support, positivity
    R0 = d.r[:, None] + d.g
    assert np.min(d.a) >= drR_bound(eta0)
    assert np.min(d.J) > 0
    assert not np.any(d.tphi[np.abs(R) >= CURVE.r0])
    # N^phi = J (dphi)^-T N
    expect = d.J[..., None] * np.einsum("...ji,...j->...i", d.dphi_inv, np.broadcast_to(CURVE.normal, d.Nphi.shape))
    assert np.allclose(d.Nphi, expect, atol=1e-12)
    # composition: theta_tilde = x + R n
    assert np.allclose(d.phi, CURVE.x[None] + R0[..., None] * CURVE.normal[None], atol=1e-14)


def test_trace_exact_on_curve():
    gamma = smooth_gamma(3, 0.05)
    d = build_diffeo(CURVE, np.array([0.0, 0.1]), ContactLine(gamma, CURVE.L), 0.8)
    assert np.array_equal(d.g[0], gamma)


def test_nphi_closed_form():
    gamma = smooth_gamma(11, 0.1)
    d = build_diffeo(CURVE, np.array([0.0]), ContactLine(gamma, CURVE.L), 0.8)
    gs = spectral_derivative(gamma, CURVE.L)
    N = CURVE.normal
    closed = (1 + CURVE.kappa * gamma)[:, None] * N - gs[:, None] * np.stack([-N[:, 1], N[:, 0]], -1)
    assert np.max(np.abs(d.Nphi[0] - closed)) <= 1e-12
    c = build_diffeo(CURVE, np.array([0.0]), ContactLine(np.full(64, 0.05), CURVE.L), 0.8)
    assert np.allclose(c.Nphi[0], 1.05 * N, atol=1e-14)


def test_demo_drR_example():
    gamma = 0.1 * CURVE.r0 * np.cos(2 * np.pi * CURVE.s / CURVE.L)
    cl = ContactLine(gamma, CURVE.L)
    eps, log = calibrate_epsilon(CURVE, [R], cl, 0.25)
    d = build_diffeo(CURVE, R, cl, eps)
    assert np.min(d.a) >= drR_bound(0.25)
    assert log[-1][0] == eps


def test_dt_phi_is_linear_derivative():
    gamma = smooth_gamma(5, 0.05)
    gdot = smooth_gamma(6, 0.3)
    d = build_diffeo(CURVE, R, ContactLine(gamma, CURVE.L, gdot), 0.8)
    h = 1e-4
    plus = build_diffeo(CURVE, R, ContactLine(gamma + h * gdot, CURVE.L), 0.8)
    minus = build_diffeo(CURVE, R, ContactLine(gamma - h * gdot, CURVE.L), 0.8)
    assert np.allclose(d.dphi_dt, (plus.phi - minus.phi) / (2 * h), atol=1e-10)


def test_degenerate_jacobian_raises():
    gamma = 0.4 * np.cos(12 * CURVE.s)
    with pytest.raises(JacobianDegenerate):
        build_diffeo(CURVE, R, ContactLine(gamma, CURVE.L), 1e-3)


def test_gamma_norm_examples():
    L = 2 * np.pi
    c = make_circle_curve(1.0, 32)
    assert gamma_norms(ContactLine(np.zeros(32), L, np.zeros(32)), 1) == 0.0
    a = 0.3
    cl = ContactLine(a * np.cos(c.s), L, np.zeros(32))
    # <k>^2 = 2 on the two modes +-1 with coefficients a/2: ||.||^2 = L * 2 * 2 * a^2/4
    assert gamma_norms(cl, 1) == pytest.approx(a * np.sqrt(2 * np.pi), rel=1e-12)
    assert sobolev_norm(a * np.cos(c.s), L, 0) == pytest.approx(a * np.sqrt(np.pi), rel=1e-12)
    with pytest.raises(MissingHistory):
        gamma_norms(ContactLine(a * np.cos(c.s), L), 1)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(1, 3))
def test_gamma_norm_monotone(seed, m):
    rng = np.random.default_rng(seed)
    cl = ContactLine(rng.standard_normal(32), 2 * np.pi, rng.standard_normal(32),
                     tuple(rng.standard_normal(32) for _ in range(3)))
    assert gamma_norms(cl, m - 1) <= gamma_norms(cl, m)


def test_bounds_zero_and_scaling():
    r = np.linspace(-0.45, 0.45, 91)
    zero = ContactLine(np.zeros(64), CURVE.L, np.zeros(64), (np.zeros(64),))
    rep = check_diffeo_bounds(build_diffeo(CURVE, r, zero, 0.8), zero, 2)
    assert rep["norms"][1] == 0.0 and rep["norms"][2] == 0.0
    gamma = smooth_gamma(9, 0.05)
    ratios = []
    for lam in (1.0, 0.5, 0.25):
        cl = ContactLine(lam * gamma, CURVE.L, np.zeros(64), (np.zeros(64),))
        d = build_diffeo(CURVE, r, cl, 0.8)
        rep = check_diffeo_bounds(d, cl, 2)
        assert rep["min_J"] == pytest.approx(float(np.min(d.J)))
        ratios.append(rep["ratios"][2])
    assert max(ratios) / min(ratios) - 1 <= 0.05


def test_regularization_under_mode_injection():
    """Second-derivative norm grows no faster than |gamma|_2^1/2 |gamma|_3^1/2 as k increases."""
    c = make_circle_curve(1.0, 256, 0.5)
    r = np.linspace(-0.45, 0.45, 181)
    ratios = []
    for k in (4, 8, 16, 32):
        gamma = 0.01 * np.cos(k * c.s) / k**2
        z = np.zeros(256)
        cl = ContactLine(gamma, c.L, z, (z, z))
        d = build_diffeo(c, r, cl, 1.0)
        rep = check_diffeo_bounds(d, cl, 2)
        ratios.append(rep["norms"][2] / np.sqrt(gamma_norms(cl, 2) * gamma_norms(cl, 3)))
    assert all(b <= 1.05 * a for a, b in zip(ratios, ratios[1:]))
