"""Per-step monitors: conserved quantities, stability margins and structure checks.

Exterior integrals use the SBP radial weights times the s-spacing times the
Jacobian; interior integrals use the finite-volume cell widths.  Derivatives
on the fixed reference domain are chart derivatives pushed through the
identity geometry: d_j f = n_j f_r + t_j f_s / (1 + kappa r).
"""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np

from .contactline import velocity_gap
from .exterior import chart_curl, contravariant, frame_velocity, velocity_tendency
from .geometry import perp, spectral_derivative
from .hanzawa import DiffeoField, _second_derivatives, cutoff
from .interior import interior_velocity
from .stepper import Model, SystemState

HEADER = ("t,mass,energy,enstrophy,irrot_max,subcrit_min,transv_min,gamma_min,gamma_max,"
          "char_energy,trace_int,E1,E2,rellich_res,flux_gap")


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    mass: float
    energy: float
    enstrophy: float
    irrot_max: float
    subcrit_min: float
    transv_min: float
    gamma_min: float
    gamma_max: float
    char_energy: float
    trace_int: float
    E1: float
    E2: float
    rellich_res: float
    flux_gap: float

    def row(self) -> str:
        return ",".join(f"{v:.17e}" for v in astuple(self))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _ext_int(model: Model, f: np.ndarray, d: DiffeoField | None) -> float:
    return model.ops.integrate(f, d)


def _int_int(model: Model, f: np.ndarray, d: DiffeoField | None) -> float:
    return float(np.sum(model.grid.quadrature_weights(d) * f))


def _ext_fixed_grad(model: Model, f: np.ndarray) -> np.ndarray:
    """Gradient on the fixed exterior domain, Cartesian components last."""
    ops, c = model.ops, model.curve
    fr = ops.Dr(f)
    fs = ops.Ds(f) / (1.0 + ops.r[:, None] * c.kappa[None, :])
    return fr[..., None] * c.normal[None] + fs[..., None] * c.tangent[None]


def _int_fixed_grad(model: Model, f: np.ndarray) -> np.ndarray:
    g, c = model.grid, model.curve
    fr = np.tensordot(g.Dr, f, axes=(1, 0))
    fs = spectral_derivative(f, c.L, 1, axis=-1) / (1.0 + g.r[:, None] * c.kappa[None, :])
    return fr[..., None] * c.normal[None] + fs[..., None] * c.tangent[None]


def _phi_grad_cart(d: DiffeoField, f_r: np.ndarray, f_s: np.ndarray) -> np.ndarray:
    return d.frame_to_cartesian(*d.grad(f_r, f_s))


def interior_energy_parts(model: Model, sys: SystemState) -> tuple[float, float]:
    """(kinetic, potential) energy under the obstacle, per unit density."""
    ev = sys.ev
    kin = 0.5 * ev.op.energy(ev.interior.phi)
    pot = 0.5 * model.phys.g * _int_int(model, ev.interior.zeta**2, ev.d_int)
    return kin, pot


def exterior_energy_parts(model: Model, sys: SystemState) -> tuple[float, float]:
    d = sys.ev.d
    vn, vt = sys.ext.velocity(d)
    h = model.phys.H0 + sys.zeta
    kin = 0.5 * _ext_int(model, h * (vn**2 + vt**2), d)
    pot = 0.5 * model.phys.g * _ext_int(model, sys.zeta**2, d)
    return kin, pot


# --------------------------------------------------------------------------
# monitors
# --------------------------------------------------------------------------


def total_energy(model: Model, sys: SystemState) -> float:
    """Fluid energy in the exterior and under the obstacle."""
    ek, ep = exterior_energy_parts(model, sys)
    ik, ip = interior_energy_parts(model, sys)
    return model.phys.rho * (ek + ep + ik + ip)


def total_mass(model: Model, sys: SystemState) -> float:
    """Integral of the surface displacement over both regions."""
    ev = sys.ev
    return _ext_int(model, sys.zeta, ev.d) + _int_int(model, ev.interior.zeta, ev.d_int)


def enstrophy_and_vorticity(model: Model, sys: SystemState) -> tuple[float, float, float]:
    """(enstrophy, max|Omega| exterior, max|Omega_i| interior)."""
    ev = sys.ev
    om = chart_curl(sys.q, model.ops, ev.d)
    h = model.phys.H0 + sys.zeta
    ens = _ext_int(model, om**2 / h, ev.d)
    # interior: covariant components are the chart derivatives of phi_i
    g, c = model.grid, model.curve
    phi = ev.interior.phi
    qr = np.tensordot(g.Dr, phi, axes=(1, 0))
    qs = spectral_derivative(phi, c.L, 1, axis=-1)
    om_i = (np.tensordot(g.Dr, qs, axes=(1, 0)) - spectral_derivative(qr, c.L, 1, axis=-1)) / ev.d_int.Jt
    ens += _int_int(model, om_i**2 / ev.interior.h, ev.d_int)
    return ens, float(np.max(np.abs(om))), float(np.max(np.abs(om_i)))


@dataclass(frozen=True)
class CharacteristicFields:
    alpha: np.ndarray
    beta: np.ndarray
    energy: float
    lam_plus: np.ndarray
    lam_minus: np.ndarray


def characteristic_energy(model: Model, sys: SystemState) -> CharacteristicFields:
    """alpha = chi_b (sqrt(g h) zeta + n^phi.(h v)), beta = chi_b (n^phi)^perp.(h v)."""
    d = sys.ev.d
    ph = model.phys
    h = ph.H0 + sys.zeta
    chi = cutoff(model.ops.r / model.curve.r0)[:, None]
    n = d.nphi
    hv = h[..., None] * sys.ext.cartesian_velocity(d)
    c = np.sqrt(ph.g * h)
    alpha = chi * (c * sys.zeta + np.sum(n * hv, axis=-1))
    beta = chi * np.sum(perp(n) * hv, axis=-1)
    E = 0.5 * _ext_int(model, (alpha**2 + beta**2) / h, d)
    w = sys.ext.cartesian_velocity(d) - d.dphi_dt
    nw = np.sum(n * w, axis=-1)
    return CharacteristicFields(alpha, beta, E, nw + c, c - nw)


def rellich_sides(f: np.ndarray, q: np.ndarray, grad) -> tuple[np.ndarray, np.ndarray]:
    """Both sides of the Rellich-type identity for vector fields f, q.

    ``grad`` maps a scalar field to its nabla^phi gradient (Cartesian
    components on the last axis).
    """

    def div(F):
        return grad(F[..., 0])[..., 0] + grad(F[..., 1])[..., 1]

    def divp(F):
        # (nabla)^perp . F = d_1 F_2 - d_2 F_1
        return grad(F[..., 1])[..., 0] - grad(F[..., 0])[..., 1]

    def directional(a, F):
        # (a . nabla) F, F vector
        g0, g1 = grad(F[..., 0]), grad(F[..., 1])
        return np.stack([np.sum(a * g0, axis=-1), np.sum(a * g1, axis=-1)], axis=-1)

    fp = perp(f)
    qp = perp(q)
    fq = np.sum(f * q, axis=-1)
    fpq = np.sum(fp * q, axis=-1)
    A = fq**2 - fpq**2
    B = 2.0 * fq * fpq
    lhs = div(A[..., None] * f + B[..., None] * fp)
    f2 = np.sum(f * f, axis=-1)
    inner = np.sum((directional(q, f) + directional(qp, fp)) * q, axis=-1)
    rhs = div(f) * A + div(fp) * B + 2.0 * f2 * (inner + fq * div(q) - fpq * divp(q))
    return lhs, rhs


def rellich_residual(model: Model, sys: SystemState) -> float:
    """max |lhs - rhs| on the interior grid with f = n^phi and q = h_i v_i."""
    ev = sys.ev
    d = ev.d_int
    g, c = model.grid, model.curve

    def grad(u):
        ur = np.tensordot(g.Dr, u, axes=(1, 0))
        us = spectral_derivative(u, c.L, 1, axis=-1)
        return _phi_grad_cart(d, ur, us)

    f = d.nphi
    q = ev.interior.h[..., None] * d.frame_to_cartesian(ev.interior.v_n, ev.interior.v_t)
    lhs, rhs = rellich_sides(f, q, grad)
    return float(np.max(np.abs(lhs - rhs)))


def flux_gap(model: Model, sys: SystemState) -> float:
    """Boundary integral of the exterior minus interior energy fluxes.

    With zeta = zeta_i, v = v_i and N^phi.(h v) = Lambda psi_i the integrand
    vanishes; the discrete mismatch is reported.
    """
    ev = sys.ev
    d = ev.d
    tr = ev.trace
    ph = model.phys
    h = ph.H0 + sys.zeta
    vn, vt = sys.ext.velocity(d)
    Fr, _ = contravariant(h * vn, h * vt, d)
    be = ph.g * tr.zeta + 0.5 * (tr.v_n**2 + tr.v_t**2)
    bi = ph.g * tr.zeta_i + 0.5 * (tr.v_n_i**2 + tr.v_t_i**2)
    e = 0.5 * h[0] * (tr.v_n**2 + tr.v_t**2) + 0.5 * ph.g * tr.zeta**2
    hi = ph.H0 + tr.zeta_i
    ei = 0.5 * hi * (tr.v_n_i**2 + tr.v_t_i**2) + 0.5 * ph.g * tr.zeta_i**2
    speed = tr.g_t * np.sum(tr.Nphi * tr.normal, axis=-1)
    integrand = be * Fr[0] - bi * tr.dn - (e - ei) * speed
    return ph.rho * float(np.sum(integrand) * model.curve.ds)


def trace_monitor(sys: SystemState) -> float:
    return sys.trace_int


# --------------------------------------------------------------------------
# E_m monitors
# --------------------------------------------------------------------------


def _dt_phi_ext(model: Model, sys: SystemState) -> tuple[np.ndarray, np.ndarray]:
    """d_t^phi zeta and d_t^phi v (Cartesian) from the evaluated tendencies."""
    ev, d = sys.ev, sys.ev.d
    zr = model.ops.Dr(sys.zeta)
    zr[0] = model.ops.Dr_wall(sys.zeta)
    dzeta = ev.dzeta - d.g_t * zr / d.a
    dvn, dvt = velocity_tendency(sys.q, ev.dq, d)
    vn, vt = sys.ext.velocity(d)
    # subtract g_t (nabla^phi v)_n in the fixed frame
    corr_n = d.g_t * model.ops.Dr(vn) / d.a
    corr_t = d.g_t * model.ops.Dr(vt) / d.a
    dv = d.frame_to_cartesian(dvn - corr_n, dvt - corr_t)
    return dzeta, dv


def _dt_phi_int(model: Model, sys: SystemState) -> np.ndarray | None:
    """d_t^phi v_i (Cartesian) from the last two interior solves, or None."""
    if sys.prev_phi is None or sys.prev_dt <= 0:
        return None
    ev = sys.ev
    d = ev.d_int
    dtphi = (ev.interior.phi - sys.prev_phi) / sys.prev_dt - d.g_t * ev.interior.v_n
    return d.frame_to_cartesian(*interior_velocity(model.grid, d, dtphi))


def _l2(model: Model, f: np.ndarray, where: str) -> float:
    sq = f**2 if f.ndim == 2 else np.sum(f**2, axis=-1)
    val = _ext_int(model, sq, None) if where == "e" else _int_int(model, sq, None)
    return float(np.sqrt(max(val, 0.0)))


def _u_fields(model: Model, sys: SystemState) -> np.ndarray:
    d = sys.ev.d
    v = sys.ext.cartesian_velocity(d)
    return np.concatenate([sys.zeta[..., None], v], axis=-1)


def _phi_grad_u(model: Model, d: DiffeoField, u: np.ndarray, where: str) -> np.ndarray:
    """nabla^phi of each component of u, shape (..., comp, 2)."""
    out = []
    for k in range(u.shape[-1]):
        f = u[..., k]
        if where == "e":
            fr = model.ops.Dr(f)
        else:
            fr = np.tensordot(model.grid.Dr, f, axes=(1, 0))
        fs = spectral_derivative(f, model.curve.L, 1, axis=-1)
        out.append(_phi_grad_cart(d, fr, fs))
    return np.stack(out, axis=-2)


def em_monitor(model: Model, sys: SystemState, m: int) -> float:
    """E_m for m = 1, 2 (good-unknown form, time derivatives from stored history)."""
    if m not in (1, 2):
        raise ValueError("E_m implemented for m = 1, 2")
    ev = sys.ev
    d, di = ev.d, ev.d_int
    u = _u_fields(model, sys)
    vi = di.frame_to_cartesian(ev.interior.v_n, ev.interior.v_t)
    dz, dv = _dt_phi_ext(model, sys)
    ucheck = np.concatenate([dz[..., None], dv], axis=-1)
    vicheck = _dt_phi_int(model, sys)
    if m == 1:
        # spatial good unknowns vanish identically; only alpha = (1, 0, 0) remains
        total = _l2(model, ucheck, "e") + _l2(model, u, "e") + _l2(model, vi, "i")
        if vicheck is not None:
            total += _l2(model, vicheck, "i")
        return total

    # m = 2
    grad_u = _phi_grad_u(model, d, u, "e")
    grad_vi = _phi_grad_u(model, di, vi, "i")
    total = 0.0
    # chart time derivative of u and its fixed-domain gradient
    gt = d.g_t
    nrm = model.curve.normal[None]
    ut = ucheck + gt[..., None] * np.einsum("...ci,...i->...c", grad_u, nrm)
    # alpha = (2, 0, 0)
    if sys.prev_dzeta is not None and sys.prev_dt > 0:
        vn_prev, vt_prev = sys.prev_dv
        ut_prev = np.concatenate([sys.prev_dzeta[..., None], d.frame_to_cartesian(vn_prev, vt_prev)], axis=-1)
        utt = (np.concatenate([ev.dzeta[..., None],
                               d.frame_to_cartesian(*velocity_tendency(sys.q, ev.dq, d))], axis=-1)
               - ut_prev) / sys.prev_dt
        gtt_ext = _extend_dgamma(d, (ev.dgamma - sys.prev_dgamma) / sys.prev_dt)
        total += _l2(model, utt - gtt_ext[..., None] * np.einsum("...ci,...i->...c", grad_u, nrm), "e")
    # alpha = (1, e_j): d_j of the chart time derivative minus (d_t d_j phi . nabla^phi) u
    dgt = _ext_fixed_grad(model, gt)
    kap = model.curve.kappa[None, :]
    b0 = 1.0 + model.ops.r[:, None] * kap
    tan = model.curve.tangent[None]
    for j in range(2):
        dj_ut = np.stack([_ext_fixed_grad(model, ut[..., c])[..., j] for c in range(3)], axis=-1)
        dtdj_phi = nrm * dgt[..., j, None] + (gt * kap * tan[..., j] / b0)[..., None] * tan
        total += _l2(model, dj_ut - np.einsum("...ci,...i->...c", grad_u, dtdj_phi), "e")
    # alpha = e_j + e_k (spatial)
    D2 = _second_derivatives(d)
    D2i = _second_derivatives(di)
    gu_fixed = np.stack([_ext_fixed_grad(model, u[..., c]) for c in range(3)], axis=-2)
    gvi_fixed = np.stack([_int_fixed_grad(model, vi[..., c]) for c in range(2)], axis=-2)
    for j in range(2):
        for k in range(2):
            djk_u = np.stack([_ext_fixed_grad(model, gu_fixed[..., c, j])[..., k] for c in range(3)], axis=-1)
            total += _l2(model, djk_u - np.einsum("...ci,...i->...c", grad_u, D2[..., :, j, k]), "e")
            djk_v = np.stack([_int_fixed_grad(model, gvi_fixed[..., c, j])[..., k] for c in range(2)], axis=-1)
            total += _l2(model, djk_v - np.einsum("...ci,...i->...c", grad_vi, D2i[..., :, j, k]), "i")
    # interior mixed terms from the BDF1 time derivative
    if vicheck is not None:
        vit = vicheck + di.g_t[..., None] * np.einsum("...ci,...i->...c", grad_vi, nrm)
        dgti = _int_fixed_grad(model, di.g_t)
        b0i = 1.0 + model.grid.r[:, None] * kap
        for j in range(2):
            dj = np.stack([_int_fixed_grad(model, vit[..., c])[..., j] for c in range(2)], axis=-1)
            dtdj = nrm * dgti[..., j, None] + (di.g_t * kap * tan[..., j] / b0i)[..., None] * tan
            total += _l2(model, dj - np.einsum("...ci,...i->...c", grad_vi, dtdj), "i")
    # lower-order norms ||u||_{1,e} + ||v_i||_{1,i}
    total += _l2(model, u, "e") + _l2(model, ut, "e")
    total += sum(_l2(model, gu_fixed[..., j], "e") for j in range(2))
    total += _l2(model, vi, "i") + sum(_l2(model, gvi_fixed[..., j], "i") for j in range(2))
    if vicheck is not None:
        total += _l2(model, vicheck, "i")
    return total


def _extend_dgamma(d: DiffeoField, f: np.ndarray) -> np.ndarray:
    from .hanzawa import extend_gamma

    return extend_gamma(f, d.curve.L, d.eps, d.r) * d.cut


# --------------------------------------------------------------------------
# record
# --------------------------------------------------------------------------


def compute_record(model: Model, sys: SystemState) -> DiagnosticsRecord:
    ev = sys.ev
    ens, irr, _ = enstrophy_and_vorticity(model, sys)
    return DiagnosticsRecord(
        t=sys.t,
        mass=total_mass(model, sys),
        energy=total_energy(model, sys),
        enstrophy=ens,
        irrot_max=irr,
        subcrit_min=ev.subcrit,
        transv_min=ev.transv,
        gamma_min=float(np.min(sys.gamma)),
        gamma_max=float(np.max(sys.gamma)),
        char_energy=characteristic_energy(model, sys).energy,
        trace_int=trace_monitor(sys),
        E1=em_monitor(model, sys, 1),
        E2=em_monitor(model, sys, 2),
        rellich_res=rellich_residual(model, sys),
        flux_gap=flux_gap(model, sys),
    )


def trace_velocity_gap(sys: SystemState) -> float:
    return velocity_gap(sys.ev.trace)
