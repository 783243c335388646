"""Shallow water system on the fixed exterior annulus 0 <= r <= r_max.

The prognostic velocity is stored by its covariant chart components
q = (d theta_tilde)^T v, i.e. q = (a v_n, g_s v_n + b v_t) in the (n, x')
frame.  In these variables the gradient-form momentum equation reads

    d_t q = -D (|v|^2/2 + g zeta - v . d_t phi),

so a discrete gradient stays a discrete gradient: the chart curl
D_r q_s - D_s q_r is preserved to roundoff.  The continuity equation is
written with the contravariant flux F^ = (b F_n - g_s F_t, a F_t) of
F = h v:

    d_t zeta = -(D_r F^r + D_s F^s) / (a b) + g_t zeta_r / a + SAT.

r is discretized by SBP finite differences (2nd order, 4th-order option),
s spectrally.  Boundary conditions enter weakly through simultaneous
approximation terms on the normal flux.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DepthNonpositive, SubcriticalViolated, SupercriticalBoundary
from .geometry import ReferenceCurve, spectral_derivative
from .hanzawa import DiffeoField, dgamma_derivatives
from .params import Physics

# Shu-Osher stages: u_{k+1} = a u_0 + b (u_k + dt L(u_k))
SSP_STAGES = {
    "ssprk2": ((0.0, 1.0), (0.5, 0.5)),
    "ssprk3": ((0.0, 1.0), (0.75, 0.25), (1.0 / 3.0, 2.0 / 3.0)),
}

# --------------------------------------------------------------------------
# operators
# --------------------------------------------------------------------------


def sbp_first_derivative(n: int, h: float, order: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal-norm SBP first derivative (D, P) on n uniform nodes.

    P holds the quadrature weights (including h); P D + (P D)^T = diag(-1, 0, .., 0, 1).
    """
    D = np.zeros((n, n))
    if order == 2:
        if n < 3:
            raise ValueError("order-2 SBP needs at least 3 nodes")
        P = np.ones(n)
        P[0] = P[-1] = 0.5
        D[0, :2] = [-1.0, 1.0]
        D[-1, -2:] = [-1.0, 1.0]
        for i in range(1, n - 1):
            D[i, i - 1], D[i, i + 1] = -0.5, 0.5
    elif order == 4:
        if n < 9:
            raise ValueError("order-4 SBP needs at least 9 nodes")
        P = np.ones(n)
        P[:4] = [17 / 48, 59 / 48, 43 / 48, 49 / 48]
        P[-4:] = P[:4][::-1]
        B = np.array([
            [-24 / 17, 59 / 34, -4 / 17, -3 / 34, 0, 0],
            [-1 / 2, 0, 1 / 2, 0, 0, 0],
            [4 / 43, -59 / 86, 0, 59 / 86, -4 / 43, 0],
            [3 / 98, 0, -59 / 98, 0, 32 / 49, -4 / 49],
        ])
        D[:4, :6] = B
        D[-4:, -6:] = -B[::-1, ::-1]
        st = np.array([1 / 12, -2 / 3, 0, 2 / 3, -1 / 12])
        for i in range(4, n - 4):
            D[i, i - 2:i + 3] = st
    else:
        raise ValueError(f"unsupported SBP order {order}")
    return D / h, P * h


def exponential_filter(Ns: int, alpha: float = 36.0, p: int = 8, frac: float = 2.0 / 3.0) -> np.ndarray:
    """rfft multipliers: 1 below frac*kmax, exp(-alpha x^p) on the top modes."""
    k = np.arange(Ns // 2 + 1)
    kmax = Ns // 2
    kc = frac * kmax
    x = np.clip((k - kc) / (kmax - kc), 0.0, None)
    return np.exp(-alpha * x**p)


@dataclass(frozen=True)
class ExteriorOps:
    curve: ReferenceCurve
    r: np.ndarray
    D: np.ndarray
    P: np.ndarray
    order: int
    filt: np.ndarray
    d3: np.ndarray

    @property
    def Nr(self) -> int:
        return self.r.size

    @property
    def Ns(self) -> int:
        return self.curve.Ns

    @property
    def shape(self) -> tuple[int, int]:
        return self.Nr, self.Ns

    @property
    def dr(self) -> float:
        return float(self.r[1] - self.r[0])

    def Dr(self, f: np.ndarray) -> np.ndarray:
        return np.tensordot(self.D, f, axes=(1, 0))

    def Ds(self, f: np.ndarray) -> np.ndarray:
        return spectral_derivative(f, self.curve.L, 1, axis=-1)

    def Dr_wall(self, f: np.ndarray) -> np.ndarray:
        """3-point one-sided d_r at r = 0."""
        return self.d3[0] * f[0] + self.d3[1] * f[1] + self.d3[2] * f[2]

    def filter(self, f: np.ndarray) -> np.ndarray:
        return np.fft.irfft(np.fft.rfft(f, axis=-1) * self.filt, n=self.Ns, axis=-1)

    def integrate(self, f: np.ndarray, d: DiffeoField | None = None) -> float:
        """SBP-norm x rectangle-in-s quadrature of f J over the annulus."""
        J = (1.0 + self.r[:, None] * self.curve.kappa[None, :]) if d is None else d.Jt
        return float(np.sum(self.P[:, None] * J * f) * self.curve.ds)

    def boundary_integral(self, f: np.ndarray) -> float:
        return float(np.sum(f) * self.curve.ds)


def make_exterior_ops(curve: ReferenceCurve, r_max: float, Nr: int, order: int = 2,
                      filter_alpha: float = 36.0, filter_order: int = 8) -> ExteriorOps:
    if not r_max > 0:
        raise ValueError("outer radius must exceed the reference curve")
    r = np.linspace(0.0, r_max, Nr)
    h = r[1] - r[0]
    D, P = sbp_first_derivative(Nr, h, order)
    d3 = np.array([-1.5, 2.0, -0.5]) / h
    return ExteriorOps(curve, r, D, P, order, exponential_filter(curve.Ns, filter_alpha, filter_order), d3)


# --------------------------------------------------------------------------
# state and kinematics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExteriorState:
    """zeta and covariant velocity q = (q_r, q_s) on the exterior grid."""

    zeta: np.ndarray
    q: np.ndarray
    t: float = 0.0

    def h(self, H0: float) -> np.ndarray:
        return H0 + self.zeta

    def velocity(self, d: DiffeoField) -> tuple[np.ndarray, np.ndarray]:
        """Frame components (v_n, v_t)."""
        return frame_velocity(self.q, d)

    def cartesian_velocity(self, d: DiffeoField) -> np.ndarray:
        return d.frame_to_cartesian(*self.velocity(d))

    def w(self, d: DiffeoField) -> tuple[np.ndarray, np.ndarray]:
        vn, vt = self.velocity(d)
        return vn - d.g_t, vt

    @classmethod
    def from_velocity(cls, zeta, vn, vt, d: DiffeoField, t: float = 0.0) -> "ExteriorState":
        return cls(np.array(zeta, dtype=float), np.stack(covariant(vn, vt, d)), float(t))


def frame_velocity(q: np.ndarray, d: DiffeoField) -> tuple[np.ndarray, np.ndarray]:
    vn = q[0] / d.a
    return vn, (q[1] - d.g_s * vn) / d.b


def covariant(vn: np.ndarray, vt: np.ndarray, d: DiffeoField) -> tuple[np.ndarray, np.ndarray]:
    return d.a * vn, d.g_s * vn + d.b * vt


def contravariant(Fn: np.ndarray, Ft: np.ndarray, d: DiffeoField) -> tuple[np.ndarray, np.ndarray]:
    """J (d phi)^{-1} F in chart components: (b F_n - g_s F_t, a F_t)."""
    return d.b * Fn - d.g_s * Ft, d.a * Ft


def velocity_tendency(q: np.ndarray, dq: np.ndarray, d: DiffeoField) -> tuple[np.ndarray, np.ndarray]:
    """Chart time derivative of v in frame components from that of q.

    q = (d theta_tilde)^T v, so d_t v = (d theta_tilde)^{-T} (d_t q - (d d_t theta_tilde)^T v)
    with d_t theta_tilde = g_t n.
    """
    vn, vt = frame_velocity(q, d)
    g_tr, g_ts = dgamma_derivatives(d)
    c = np.stack([dq[0] - g_tr * vn, dq[1] - g_ts * vn - d.g_t * d.kappa * vt])
    return frame_velocity(c, d)


def chart_curl(q: np.ndarray, ops: ExteriorOps, d: DiffeoField) -> np.ndarray:
    """(nabla^phi)^perp . v = (D_r q_s - D_s q_r) / J."""
    return (ops.Dr(q[1]) - ops.Ds(q[0])) / d.Jt


def mass(state: ExteriorState, ops: ExteriorOps, d: DiffeoField) -> float:
    return ops.integrate(state.zeta, d)


# --------------------------------------------------------------------------
# symmetrizer
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Symmetrizer:
    Sigma: np.ndarray
    margin: np.ndarray
    G: tuple[np.ndarray, np.ndarray]


def symmetrizer(zeta, w, phys: Physics) -> Symmetrizer:
    """Sigma(u) = [[g, w^T], [w, h I]] per node; margin g h - |w|^2.

    w has Cartesian components on the last axis.
    """
    zeta = np.asarray(zeta, dtype=float)
    w = np.asarray(w, dtype=float)
    h = phys.H0 + zeta
    S = np.zeros(zeta.shape + (3, 3))
    S[..., 0, 0] = phys.g
    S[..., 0, 1:] = w
    S[..., 1:, 0] = w
    S[..., 1, 1] = h
    S[..., 2, 2] = h
    G1 = np.zeros((3, 3))
    G1[0, 1] = G1[1, 0] = 1.0
    G2 = np.zeros((3, 3))
    G2[0, 2] = G2[2, 0] = 1.0
    return Symmetrizer(S, phys.g * h - np.sum(w * w, axis=-1), (G1, G2))


def quasilinear_matrices(zeta: float, w, phys: Physics) -> tuple[np.ndarray, np.ndarray]:
    """A_j = G_j Sigma(u) of the linearized system d_t u' + sum_j A_j d_j u' = 0.

    Linearizing d_t q = -D(|v|^2/2 + g zeta - v . d_t phi) gives the
    perturbation potential g zeta' + w . v', hence these frozen coefficients.
    """
    S = symmetrizer(np.asarray(zeta, dtype=float), np.asarray(w, dtype=float), phys)
    G1, G2 = S.G
    return G1 @ S.Sigma, G2 @ S.Sigma


# --------------------------------------------------------------------------
# right-hand side
# --------------------------------------------------------------------------


def check_state(state: ExteriorState, d: DiffeoField, phys: Physics, c0: float = 0.0) -> float:
    """Raise on nonpositive depth; return the subcriticality margin min(g h - |w|^2)."""
    h = state.h(phys.H0)
    if np.min(h) <= 0:
        i = np.unravel_index(np.argmin(h), h.shape)
        raise DepthNonpositive(f"h = {h[i]:.3e} at node {i}")
    wn, wt = state.w(d)
    margin = float(np.min(phys.g * h - wn**2 - wt**2))
    if margin < c0:
        raise SubcriticalViolated(f"min(g h - |w|^2) = {margin:.3e} < {c0}")
    return margin


def normal_flux(state: ExteriorState, d: DiffeoField, phys: Physics) -> tuple[np.ndarray, np.ndarray]:
    """Contravariant components of h v."""
    vn, vt = state.velocity(d)
    h = state.h(phys.H0)
    return contravariant(h * vn, h * vt, d)


def divergence(state: ExteriorState, d: DiffeoField, ops: ExteriorOps, phys: Physics) -> np.ndarray:
    """nabla^phi . (h v) without boundary terms."""
    Fr, Fs = normal_flux(state, d, phys)
    return (ops.Dr(Fr) + ops.Ds(Fs)) / d.Jt


def outer_sat(state: ExteriorState, d: DiffeoField, ops: ExteriorOps, phys: Physics,
              kind: str = "radiation") -> np.ndarray:
    """Penalty on the continuity equation at r = r_max (wall or Flather)."""
    Fr, _ = normal_flux(state, d, phys)
    FN = Fr[-1]
    if kind == "wall":
        target = np.zeros_like(FN)
    elif kind == "radiation":
        h = state.h(phys.H0)[-1]
        # Riemann invariant of the outgoing wave; zero incoming from outside
        target = d.b[-1] * 2.0 * h * (np.sqrt(phys.g * h) - np.sqrt(phys.g * phys.H0))
    else:
        raise ValueError(f"unknown outer boundary {kind!r}")
    return -(target - FN) / (ops.P[-1] * d.Jt[-1])


def inner_sat(state: ExteriorState, d: DiffeoField, ops: ExteriorOps, phys: Physics,
              flux_target: np.ndarray) -> np.ndarray:
    """Penalty at r = 0 imposing N^phi . (h v) = flux_target weakly."""
    Fr, _ = normal_flux(state, d, phys)
    return (flux_target - Fr[0]) / (ops.P[0] * d.Jt[0])


@dataclass(frozen=True)
class BoundaryTreatment:
    """Characteristic decomposition and corrected trace at r = 0."""

    sat: np.ndarray
    incoming: np.ndarray
    outgoing: np.ndarray
    tangential: np.ndarray
    lam_plus: np.ndarray
    lam_minus: np.ndarray
    lam_zero: np.ndarray
    zeta: np.ndarray
    v: np.ndarray
    zeta_gap: np.ndarray


def characteristic_bc(state: ExteriorState, d: DiffeoField, ops: ExteriorOps, phys: Physics,
                      flux_target: np.ndarray, zeta_target: np.ndarray | None = None,
                      newton_iter: int = 30) -> BoundaryTreatment:
    """Characteristic treatment of the contact-line boundary.

    The trace is split into sqrt(g h) zeta + h n.v (entering the exterior
    from the boundary), sqrt(g h) zeta - h n.v (leaving the exterior toward
    the boundary) and h n^perp.v.  The corrected trace keeps the latter two
    and replaces the first so that N^phi.(h v) equals ``flux_target``; the
    scheme applies this weakly through ``sat``.  zeta = zeta_i is carried by
    the contact-line equation and only reported as ``zeta_gap``.
    """
    zeta = state.zeta[0]
    h = phys.H0 + zeta
    vc = state.cartesian_velocity(d)[0]
    N = d.Nphi[0]
    Nn = np.linalg.norm(N, axis=-1)
    n = N / Nn[:, None]
    w = vc - d.dphi_dt[0]
    c = np.sqrt(phys.g * h)
    wn = np.sum(n * w, axis=-1)
    lam_p = wn + c
    lam_m = c - wn
    if np.any(lam_m <= 0) or np.any(lam_p <= 0):
        raise SupercriticalBoundary(f"boundary characteristic count changed (min c - n.w = {np.min(lam_m):.3e})")
    vnp = np.sum(n * vc, axis=-1)
    vtp = np.sum(np.stack([-n[:, 1], n[:, 0]], axis=-1) * vc, axis=-1)
    inc = c * zeta + h * vnp
    out = c * zeta - h * vnp
    tan = h * vtp
    # keep the field travelling toward the boundary: sqrt(g H) Z - F* = out
    Fstar = np.asarray(flux_target, dtype=float) / Nn
    Z = zeta.copy()
    for _ in range(newton_iter):
        H = phys.H0 + Z
        cs = np.sqrt(phys.g * H)
        f = cs * Z - Fstar - out
        fp = cs + 0.5 * phys.g * Z / cs
        dZ = -f / fp
        Z += dZ
        if np.max(np.abs(dZ)) < 1e-15 * (1.0 + np.max(np.abs(Z))):
            break
    H = phys.H0 + Z
    vstar = (Fstar / H)[:, None] * n + (tan / H)[:, None] * np.stack([-n[:, 1], n[:, 0]], axis=-1)
    gap = np.zeros_like(zeta) if zeta_target is None else zeta - np.asarray(zeta_target)
    return BoundaryTreatment(
        sat=inner_sat(state, d, ops, phys, flux_target), incoming=inc, outgoing=out, tangential=tan,
        lam_plus=lam_p, lam_minus=lam_m, lam_zero=wn, zeta=Z, v=vstar, zeta_gap=gap,
    )


def bernoulli(state: ExteriorState, d: DiffeoField, phys: Physics) -> np.ndarray:
    """|v|^2/2 + g zeta - v . d_t phi."""
    vn, vt = state.velocity(d)
    return 0.5 * (vn * vn + vt * vt) + phys.g * state.zeta - vn * d.g_t


def rhs_exterior(state: ExteriorState, d: DiffeoField, ops: ExteriorOps, phys: Physics,
                 sat_inner: np.ndarray | None = None, sat_outer: np.ndarray | None = None,
                 form: str = "gradient") -> tuple[np.ndarray, np.ndarray]:
    """(d_t zeta, d_t q) on the fixed chart grid."""
    Fr, Fs = normal_flux(state, d, phys)
    dzeta = -(ops.Dr(Fr) + ops.Ds(Fs)) / d.Jt
    zr = ops.Dr(state.zeta)
    zr[0] = ops.Dr_wall(state.zeta)
    dzeta += d.g_t * zr / d.a
    if sat_inner is not None:
        dzeta[0] += sat_inner
    if sat_outer is not None:
        dzeta[-1] += sat_outer
    B = bernoulli(state, d, phys)
    dq = -np.stack([ops.Dr(B), ops.Ds(B)])
    if form == "advective":
        vn, vt = state.velocity(d)
        om = chart_curl(state.q, ops, d)
        wn, wt = vn - d.g_t, vt
        pr, ps = covariant(-wt, wn, d)
        dq[0] -= om * pr
        dq[1] -= om * ps
    elif form != "gradient":
        raise ValueError(f"unknown momentum form {form!r}")
    return dzeta, dq


def filter_state(state: ExteriorState, ops: ExteriorOps) -> ExteriorState:
    return ExteriorState(ops.filter(state.zeta), ops.filter(state.q), state.t)


def step_exterior(state: ExteriorState, d: DiffeoField, ops: ExteriorOps, phys: Physics, dt: float,
                  flux_target: np.ndarray | None = None, outer: str = "radiation",
                  form: str = "gradient", c0: float = 0.0, integrator: str = "ssprk3") -> ExteriorState:
    """One SSP step of the exterior system alone, diffeo and inner data frozen."""
    ft = np.zeros(ops.Ns) if flux_target is None else flux_target
    if integrator not in SSP_STAGES:
        raise ValueError(f"unknown integrator {integrator!r}")

    def L(u):
        check_state(u, d, phys, c0)
        si = characteristic_bc(u, d, ops, phys, ft).sat
        so = outer_sat(u, d, ops, phys, outer)
        return rhs_exterior(u, d, ops, phys, si, so, form)

    u = state
    for a, b in SSP_STAGES[integrator]:
        kz, kq = L(u)
        u = filter_state(ExteriorState(a * state.zeta + b * (u.zeta + dt * kz),
                                       a * state.q + b * (u.q + dt * kq), state.t + dt), ops)
    check_state(u, d, phys, c0)
    return u
