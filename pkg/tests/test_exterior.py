from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbswe.errors import DepthNonpositive, SubcriticalViolated, SupercriticalBoundary
from fbswe.exterior import (
    ExteriorState, characteristic_bc, chart_curl, check_state, make_exterior_ops, mass, outer_sat,
    quasilinear_matrices, rhs_exterior, sbp_first_derivative, step_exterior, symmetrizer,
)
from fbswe.geometry import make_circle_curve
from fbswe.hanzawa import ContactLine, build_diffeo
from fbswe.params import Physics

from oracles import radial_reference

PHYS = Physics(g=9.81, H0=1.0, rho=1.0)
UNIT = Physics(g=1.0, H0=1.0, rho=1.0)


def annulus(Nr, Ns, r_max=2.0, order=2, R0=1.0):
    curve = make_circle_curve(R0, Ns, 0.5 * R0)
    ops = make_exterior_ops(curve, r_max, Nr, order)
    d = build_diffeo(curve, ops.r, ContactLine(np.zeros(Ns), curve.L), 1.0)
    return curve, ops, d


def cartesian_fields(d):
    x, y = d.phi[..., 0], d.phi[..., 1]
    zeta = 0.05 * np.sin(x) * np.cos(0.5 * y)
    # v = grad of Phi = 0.1 cos(x) sin(y)
    v = np.stack([-0.1 * np.sin(x) * np.sin(y), 0.1 * np.cos(x) * np.cos(y)], axis=-1)
    return x, y, zeta, v


def cartesian_rhs(x, y, zeta, v, phys):
    """Exact tendencies of the Cartesian gradient-form system for the fields above."""
    h = phys.H0 + zeta
    zx = 0.05 * np.cos(x) * np.cos(0.5 * y)
    zy = -0.025 * np.sin(x) * np.sin(0.5 * y)
    u1x = -0.1 * np.cos(x) * np.sin(y)
    u1y = -0.1 * np.sin(x) * np.cos(y)
    u2x = -0.1 * np.sin(x) * np.cos(y)
    u2y = -0.1 * np.cos(x) * np.sin(y)
    dzeta = -(zx * v[..., 0] + zy * v[..., 1] + h * (u1x + u2y))
    Bx = v[..., 0] * u1x + v[..., 1] * u2x + phys.g * zx
    By = v[..., 0] * u1y + v[..., 1] * u2y + phys.g * zy
    return dzeta, np.stack([-Bx, -By], axis=-1)


# --------------------------------------------------------------------------
# operators
# --------------------------------------------------------------------------


@pytest.mark.parametrize("order,n", [(2, 12), (4, 20)])
def test_sbp_property(order, n):
    D, P = sbp_first_derivative(n, 0.1, order)
    Q = P[:, None] * D
    B = np.zeros((n, n))
    B[0, 0], B[-1, -1] = -1.0, 1.0
    assert np.allclose(Q + Q.T, B, atol=1e-13)
    x = np.arange(n) * 0.1
    for p in range(order // 2 + 1):
        assert np.allclose(D @ x**p, p * x ** max(p - 1, 0) if p else 0.0, atol=1e-11)


# --------------------------------------------------------------------------
# symmetrizer
# --------------------------------------------------------------------------


def test_symmetrizer_rest():
    S = symmetrizer(0.0, np.zeros(2), PHYS)
    assert np.array_equal(S.Sigma, np.diag([PHYS.g, 1.0, 1.0]))
    assert S.margin == pytest.approx(PHYS.g)


def test_symmetrizer_singular_at_critical():
    w = np.array([np.sqrt(PHYS.g * 1.2), 0.0])
    S = symmetrizer(0.2, w, PHYS)
    assert S.margin == pytest.approx(0.0, abs=1e-12)
    assert abs(np.linalg.det(S.Sigma)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(zeta=st.floats(-0.5, 1.0), ang=st.floats(0, 2 * np.pi), frac=st.floats(0.0, 2.0))
def test_symmetrizer_definite_iff_subcritical(zeta, ang, frac):
    h = PHYS.H0 + zeta
    wmag = frac * np.sqrt(PHYS.g * h)
    w = wmag * np.array([np.cos(ang), np.sin(ang)])
    S = symmetrizer(zeta, w, PHYS)
    lam = np.linalg.eigvalsh(S.Sigma)
    if S.margin > 1e-9:
        assert lam[0] > 0
    elif S.margin < -1e-9:
        assert lam[0] < 0


@settings(max_examples=40, deadline=None)
@given(zeta=st.floats(-0.3, 0.5), v1=st.floats(-1, 1), v2=st.floats(-1, 1), c1=st.floats(-1, 1), c2=st.floats(-1, 1))
def test_quasilinear_matches_flux_jacobian(zeta, v1, v2, c1, c2):
    """G_j Sigma equals the Jacobian of the chart-moving gradient-form flux."""
    c = np.array([c1, c2])

    def flux(u, j):
        z, v = u[0], u[1:]
        B = 0.5 * v @ v + PHYS.g * z - v @ c
        F = np.zeros(3)
        F[0] = (PHYS.H0 + z) * v[j] - c[j] * z
        F[1 + j] = B
        return F

    u = np.array([zeta, v1, v2])
    A = quasilinear_matrices(zeta, np.array([v1, v2]) - c, PHYS)
    for j in range(2):
        jac = np.empty((3, 3))
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1e-6
            jac[:, k] = (flux(u + e, j) - flux(u - e, j)) / 2e-6
        assert np.allclose(A[j], jac, atol=1e-7)


# --------------------------------------------------------------------------
# right-hand side
# --------------------------------------------------------------------------


def test_lake_at_rest():
    _, ops, d = annulus(17, 32)
    for zeq in (0.0, 0.07):
        s = ExteriorState(np.full(ops.shape, zeq), np.zeros((2,) + ops.shape))
        si = characteristic_bc(s, d, ops, PHYS, np.zeros(ops.Ns)).sat
        so = outer_sat(s, d, ops, PHYS, "wall")
        dz, dq = rhs_exterior(s, d, ops, PHYS, si, so)
        assert np.max(np.abs(dz)) <= 1e-14 and np.max(np.abs(dq)) <= 1e-13
        s1 = step_exterior(s, d, ops, PHYS, 0.01, outer="wall")
        assert np.max(np.abs(s1.zeta - s.zeta)) <= 1e-12 and np.max(np.abs(s1.q)) <= 1e-12


@pytest.mark.parametrize("form", ["gradient", "advective"])
def test_identity_chart_gives_cartesian_swe(form):
    """With phi = id the chart operator converges to the Cartesian tendencies at 2nd order."""
    errs = []
    for Nr in (33, 65, 129):
        _, ops, d = annulus(Nr, 96, r_max=1.0)
        x, y, zeta, v = cartesian_fields(d)
        s = ExteriorState.from_velocity(zeta, *d.cartesian_to_frame(v), d)
        dz, dq = rhs_exterior(s, d, ops, PHYS, form=form)
        ez, ev = cartesian_rhs(x, y, zeta, v, PHYS)
        vn, vt = s.velocity(d)
        # frame velocity tendency equals q tendency when the chart is static
        dvc = d.frame_to_cartesian(dq[0] / d.a, (dq[1] - d.g_s * dq[0] / d.a) / d.b)
        inner = slice(1, -1)
        errs.append(max(np.max(np.abs(dz - ez)[inner]), np.max(np.abs(dvc - ev)[inner])))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert errs[-1] <= 1e-4
    assert np.all(orders >= 1.8)


def test_curl_preserved_by_gradient_form():
    _, ops, d = annulus(33, 64)
    x, y, zeta, v = cartesian_fields(d)
    s = ExteriorState.from_velocity(zeta, *d.cartesian_to_frame(v), d)
    assert np.max(np.abs(chart_curl(s.q, ops, d)[1:-1])) <= 5e-3
    for _ in range(5):
        s = step_exterior(s, d, ops, PHYS, 0.005, outer="wall")
    # curl of the evolved q changes by roundoff only
    s0 = ExteriorState.from_velocity(zeta, *d.cartesian_to_frame(v), d)
    change = chart_curl(s.q, ops, d) - chart_curl(s0.q, ops, d)
    assert np.max(np.abs(change)) <= 1e-12


def test_mass_conserved_with_walls():
    _, ops, d = annulus(33, 64)
    X = d.phi
    z0 = 0.02 * np.exp(-((X[..., 0] - 2.0) ** 2 + X[..., 1] ** 2) / 0.1)
    s = ExteriorState(z0, np.zeros((2,) + ops.shape))
    m0 = mass(s, ops, d)
    for _ in range(40):
        s = step_exterior(s, d, ops, PHYS, 0.01, outer="wall")
    assert abs(mass(s, ops, d) - m0) <= 1e-13


def test_state_checks():
    _, ops, d = annulus(9, 16)
    z = np.zeros(ops.shape)
    q = np.zeros((2,) + ops.shape)
    assert check_state(ExteriorState(z, q), d, PHYS) == pytest.approx(PHYS.g)
    with pytest.raises(DepthNonpositive):
        check_state(ExteriorState(z - 1.5, q), d, PHYS)
    q[0, 3, 5] = 4.0
    with pytest.raises(SubcriticalViolated):
        check_state(ExteriorState(z, q), d, PHYS)


# --------------------------------------------------------------------------
# characteristic boundary treatment
# --------------------------------------------------------------------------


def test_characteristic_consistent_data_unchanged():
    _, ops, d = annulus(9, 16)
    z = np.full(ops.shape, 0.03)
    q = np.zeros((2,) + ops.shape)
    q[1] = 0.2
    s = ExteriorState(z, q)
    bc = characteristic_bc(s, d, ops, PHYS, np.zeros(ops.Ns), zeta_target=z[0])
    assert np.allclose(bc.zeta, z[0], atol=1e-15)
    assert np.max(np.abs(bc.sat)) == 0.0 and np.max(np.abs(bc.zeta_gap)) == 0.0
    vn, vt = s.velocity(d)
    assert np.allclose(bc.v, d.frame_to_cartesian(vn, vt)[0], atol=1e-15)


def test_characteristic_counts_at_rest():
    _, ops, d = annulus(9, 16)
    s = ExteriorState(np.full(ops.shape, 0.1), np.zeros((2,) + ops.shape))
    bc = characteristic_bc(s, d, ops, PHYS, np.zeros(ops.Ns))
    c = np.sqrt(PHYS.g * 1.1)
    assert np.allclose(bc.lam_plus, c) and np.allclose(bc.lam_minus, c)
    assert np.all(bc.lam_zero == 0.0)


def test_supercritical_boundary_raises():
    _, ops, d = annulus(9, 16)
    q = np.zeros((2,) + ops.shape)
    q[0, 0] = 2.0 * np.sqrt(PHYS.g)
    with pytest.raises(SupercriticalBoundary):
        characteristic_bc(ExteriorState(np.zeros(ops.shape), q), d, ops, PHYS, np.zeros(ops.Ns))


def test_flux_target_imposed_by_corrected_trace():
    _, ops, d = annulus(9, 16)
    s = ExteriorState(np.full(ops.shape, 0.05), np.zeros((2,) + ops.shape))
    target = 0.01 * np.cos(d.curve.s)
    bc = characteristic_bc(s, d, ops, PHYS, target)
    N = d.Nphi[0]
    assert np.allclose(np.sum(N * bc.v, -1) * (PHYS.H0 + bc.zeta), target, atol=1e-14)
    # outgoing field untouched
    c = np.sqrt(PHYS.g * (PHYS.H0 + bc.zeta))
    n = N / np.linalg.norm(N, axis=-1)[:, None]
    out = c * bc.zeta - (PHYS.H0 + bc.zeta) * np.sum(n * bc.v, -1)
    assert np.allclose(out, bc.outgoing, atol=1e-14)


# --------------------------------------------------------------------------
# radial reduction
# --------------------------------------------------------------------------


def test_radial_wave_matches_1d_oracle():
    """Axisymmetric pulse between two walls against a fine 1D radial solver."""
    R0, rmax, T = 1.0, 2.0, 0.5
    zeta0 = lambda rho: 1e-3 * np.exp(-((rho - 2.0) / 0.4) ** 2)
    c_ref, z_ref, _, _ = radial_reference(R0, R0 + rmax, zeta0, T, UNIT)
    errs = []
    for Nr in (129, 257):
        _, ops, d = annulus(Nr, 16, rmax, R0=R0)
        rho = R0 + ops.r
        s = ExteriorState(np.repeat(zeta0(rho)[:, None], 16, axis=1), np.zeros((2,) + ops.shape))
        n = 200
        for _ in range(n):
            s = step_exterior(s, d, ops, UNIT, T / n, outer="wall")
        z = np.interp(rho, c_ref, z_ref)
        errs.append(np.sqrt(np.sum(ops.P * (s.zeta[:, 0] - z) ** 2) / np.sum(ops.P * z**2)))
        assert np.max(np.abs(s.zeta - s.zeta[:, :1])) <= 1e-15
    assert errs[-1] <= 1e-3
    assert np.log2(errs[0] / errs[1]) >= 1.8
