"""Regularizing diffeomorphism built from the contact-line graph.

The contact line is r = gamma(t, s) in chart coordinates.  gamma is extended
off the curve with a Fourier multiplier chi(eps r <k>), cut off at |r| = r0,
and used to move chart points along the normal:

    R(r, s) = r + g(r, s),   g = gamma_ext(r, s) chi(r / r0),
    theta_tilde(r, s) = x(s) + R(r, s) n(s),   phi = theta_tilde o theta^-1.

Everything is evaluated per chart node.  With a = 1 + g_r and
b = 1 + kappa (r + g) the chart Jacobian is [a n, b x' + g_s n] and
det = a b; solvers work with these frame quantities directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import JacobianDegenerate, MissingHistory
from .geometry import ReferenceCurve, spectral_derivative, wavenumbers

PLATEAU = 0.25


# --------------------------------------------------------------------------
# cutoff
# --------------------------------------------------------------------------


def _step(t: np.ndarray, nderiv: int = 0) -> np.ndarray:
    """Smooth 0 -> 1 transition on [0, 1] from exp(-1/t); derivatives up to 2."""
    t = np.asarray(t, dtype=float)
    out = np.where(t >= 1.0, 1.0, 0.0) if nderiv == 0 else np.zeros_like(t)
    m = (t > 0.0) & (t < 1.0)
    if not np.any(m):
        return out
    u = t[m]
    a = np.exp(-1.0 / u)
    b = np.exp(-1.0 / (1.0 - u))
    s = a + b
    if nderiv == 0:
        out[m] = a / s
        return out
    q = 1.0 / u**2 + 1.0 / (1.0 - u) ** 2
    d1 = a * b * q / s**2
    if nderiv == 1:
        out[m] = d1
        return out
    p = 1.0 / u**2 - 1.0 / (1.0 - u) ** 2
    dq = -2.0 / u**3 + 2.0 / (1.0 - u) ** 3
    ds = a / u**2 - b / (1.0 - u) ** 2
    out[m] = a * b * (p * q + dq) / s**2 - 2.0 * a * b * q * ds / s**3
    return out


def cutoff(x, nderiv: int = 0) -> np.ndarray:
    """C-infinity bump: 1 on |x| <= 1/4, 0 on |x| >= 1 (exactly)."""
    x = np.asarray(x, dtype=float)
    w = 1.0 - PLATEAU
    t = (1.0 - np.abs(x)) / w
    if nderiv == 0:
        return _step(t)
    if nderiv == 1:
        return -np.sign(x) * _step(t, 1) / w
    return _step(t, 2) / w**2


def delta0_from_eta0(eta0: float) -> float:
    """delta0 with r0/(1 + delta0)^2 = eta0 r0."""
    if not 0 < eta0 < 1:
        raise ValueError("eta0 must lie in (0, 1)")
    return eta0**-0.5 - 1.0


def drR_bound(eta0: float) -> float:
    """Lower bound delta0/(2(1 + delta0)) required of d_r R."""
    d0 = delta0_from_eta0(eta0)
    return d0 / (2.0 * (1.0 + d0))


# --------------------------------------------------------------------------
# contact line
# --------------------------------------------------------------------------


def japanese(k: np.ndarray) -> np.ndarray:
    return np.sqrt(1.0 + k**2)


def sobolev_norm(f: np.ndarray, L: float, m: float) -> float:
    """Periodic H^m norm on T_L with weight <k>^{2m}, by Parseval."""
    n = f.shape[-1]
    fh = np.fft.rfft(f, axis=-1) / n
    w = np.full(fh.shape[-1], 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    k = wavenumbers(n, L)
    return float(np.sqrt(L * np.sum(w * japanese(k) ** (2 * m) * np.abs(fh) ** 2)))


@dataclass(frozen=True)
class ContactLine:
    """gamma(s) on T_L with stored time derivatives (d_t gamma, higher ones)."""

    gamma: np.ndarray
    L: float
    dgamma: np.ndarray | None = None
    higher: tuple = ()

    @property
    def Ns(self) -> int:
        return self.gamma.size

    def coeffs(self) -> np.ndarray:
        return np.fft.rfft(self.gamma) / self.Ns

    def time_derivative(self, j: int) -> np.ndarray:
        if j == 0:
            return self.gamma
        if j == 1 and self.dgamma is not None:
            return self.dgamma
        if j >= 2 and len(self.higher) >= j - 1:
            return self.higher[j - 2]
        raise MissingHistory(f"d_t^{j} gamma not stored")

    def norm(self, m: int) -> float:
        return gamma_norms(self, m)


def gamma_norms(cl: ContactLine, m: int) -> float:
    """|gamma|_m = sum_j |d_t^j gamma|_{H^{m-j}}."""
    return sum(sobolev_norm(cl.time_derivative(j), cl.L, m - j) for j in range(m + 1))


# --------------------------------------------------------------------------
# extension
# --------------------------------------------------------------------------


def _multiplier_apply(gh: np.ndarray, mult: np.ndarray, n: int) -> np.ndarray:
    return np.fft.irfft(mult * gh[None, :], n=n, axis=1)


def extend_gamma(gamma: np.ndarray, L: float, eps: float, r: np.ndarray, derivs: bool = False):
    """gamma_ext(r, s) = (chi(eps r <D>) gamma)(s) on the tensor grid.

    With ``derivs`` also returns r- and s-derivatives up to second order as
    a dict with keys '', 'r', 's', 'rr', 'rs', 'ss'.
    """
    gamma = np.asarray(gamma, dtype=float)
    r = np.asarray(r, dtype=float)
    n = gamma.size
    k = wavenumbers(n, L)
    jk = japanese(k)
    gh = np.fft.rfft(gamma)
    arg = eps * np.outer(r, jk)
    ext = _multiplier_apply(gh, cutoff(arg), n)
    exact = r == 0.0
    ext[exact] = gamma
    if not derivs:
        return ext
    ik = 1j * k
    if n % 2 == 0:
        ik = ik.copy()
        ik[-1] = 0.0
    m0 = cutoff(arg)
    m1 = eps * jk[None, :] * cutoff(arg, 1)
    m2 = (eps * jk[None, :]) ** 2 * cutoff(arg, 2)
    out = {
        "": ext,
        "r": _multiplier_apply(gh, m1, n),
        "rr": _multiplier_apply(gh, m2, n),
        "s": _multiplier_apply(gh, m0 * ik[None, :], n),
        "rs": _multiplier_apply(gh, m1 * ik[None, :], n),
        "ss": _multiplier_apply(gh, m0 * (ik**2)[None, :], n),
    }
    return out


# --------------------------------------------------------------------------
# diffeomorphism
# --------------------------------------------------------------------------


def _cofactor(A: np.ndarray) -> np.ndarray:
    """J A^{-T} for 2x2 blocks (no division)."""
    C = np.empty_like(A)
    C[..., 0, 0] = A[..., 1, 1]
    C[..., 0, 1] = -A[..., 1, 0]
    C[..., 1, 0] = -A[..., 0, 1]
    C[..., 1, 1] = A[..., 0, 0]
    return C


def det2(A: np.ndarray) -> np.ndarray:
    return A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]


@dataclass(frozen=True)
class DiffeoField:
    """phi sampled on a chart grid, with chart and Cartesian Jacobian data.

    Frame quantities (a, b, g_s) describe the chart Jacobian of
    theta_tilde; dphi, J, Nphi, Tphi are the Cartesian objects at y = theta.
    """

    curve: ReferenceCurve
    r: np.ndarray
    eps: float
    gamma: np.ndarray
    g: np.ndarray
    g_r: np.ndarray
    g_s: np.ndarray
    g_rr: np.ndarray
    g_rs: np.ndarray
    g_ss: np.ndarray
    cut: np.ndarray
    g_t: np.ndarray
    dgamma: np.ndarray
    phi: np.ndarray
    tphi: np.ndarray
    dphi: np.ndarray
    J: np.ndarray
    Nphi: np.ndarray
    Tphi: np.ndarray
    extras: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def shape(self):
        return self.g.shape

    @property
    def kappa(self) -> np.ndarray:
        return self.curve.kappa[None, :]

    @property
    def a(self) -> np.ndarray:
        """d_r R."""
        return 1.0 + self.g_r

    @property
    def b(self) -> np.ndarray:
        """1 + kappa R."""
        return 1.0 + self.kappa * (self.r[:, None] + self.g)

    @property
    def b0(self) -> np.ndarray:
        """1 + kappa r (det d theta)."""
        return 1.0 + self.kappa * self.r[:, None]

    @property
    def Jt(self) -> np.ndarray:
        """det d theta_tilde = a b."""
        return self.a * self.b

    @property
    def dphi_inv(self) -> np.ndarray:
        return np.swapaxes(_cofactor(self.dphi), -1, -2) / self.J[..., None, None]

    @property
    def dphi_dt(self) -> np.ndarray:
        return self.g_t[..., None] * self.curve.normal[None]

    @property
    def nphi(self) -> np.ndarray:
        return self.Nphi / np.linalg.norm(self.Nphi, axis=-1, keepdims=True)

    def with_dgamma(self, dgamma: np.ndarray) -> "DiffeoField":
        """Same diffeo with d_t gamma (hence d_t phi) replaced."""
        dgamma = np.asarray(dgamma, dtype=float)
        gt = extend_gamma(dgamma, self.curve.L, self.eps, self.r) * self.cut
        return replace(self, g_t=gt, dgamma=dgamma)

    def grad(self, f_r: np.ndarray, f_s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """nabla^phi f in the (n, x') frame from chart derivatives."""
        gn = f_r / self.a
        return gn, (f_s - self.g_s * gn) / self.b

    def frame_to_cartesian(self, fn: np.ndarray, ft: np.ndarray) -> np.ndarray:
        n = self.curve.normal[None]
        t = self.curve.tangent[None]
        return fn[..., None] * n + ft[..., None] * t

    def cartesian_to_frame(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = self.curve.normal[None]
        t = self.curve.tangent[None]
        return np.sum(v * n, axis=-1), np.sum(v * t, axis=-1)


def build_diffeo(
    curve: ReferenceCurve,
    r: np.ndarray,
    cl: ContactLine,
    eps: float,
    c_floor: float = 1e-3,
) -> DiffeoField:
    """Sample phi and its derivatives on the chart grid r x s."""
    r = np.asarray(r, dtype=float)
    gamma = np.asarray(cl.gamma, dtype=float)
    e = extend_gamma(gamma, curve.L, eps, r, derivs=True)
    r0 = curve.r0
    c0 = cutoff(r / r0)[:, None]
    c1 = (cutoff(r / r0, 1) / r0)[:, None]
    c2 = (cutoff(r / r0, 2) / r0**2)[:, None]
    g = e[""] * c0
    g_r = e["r"] * c0 + e[""] * c1
    g_rr = e["rr"] * c0 + 2.0 * e["r"] * c1 + e[""] * c2
    g_s = e["s"] * c0
    g_rs = e["rs"] * c0 + e["s"] * c1
    g_ss = e["ss"] * c0
    dgamma = np.zeros_like(gamma) if cl.dgamma is None else np.asarray(cl.dgamma, dtype=float)
    g_t = extend_gamma(dgamma, curve.L, eps, r) * c0

    n = curve.normal[None]
    t = curve.tangent[None]
    kap = curve.kappa[None, :]
    b0 = 1.0 + kap * r[:, None]
    R = r[:, None] + g
    phi = curve.x[None] + R[..., None] * n
    tphi = g[..., None] * n
    # d(tphi)/dr = g_r n ; d(tphi)/ds = g_s n + g kappa x'
    dtr = g_r[..., None] * n
    dts = g_s[..., None] * n + (g * kap)[..., None] * t
    dtilde = dtr[..., :, None] * n[..., None, :] + (dts / b0[..., None])[..., :, None] * t[..., None, :]
    dphi = dtilde + np.eye(2)
    J = det2(dphi)
    if np.min(J) <= c_floor:
        raise JacobianDegenerate(f"min J = {np.min(J):.3e} <= {c_floor}")
    cof = _cofactor(dphi)
    Nphi = np.einsum("...ij,...j->...i", cof, np.broadcast_to(n, cof.shape[:-1]))
    Tphi = np.einsum("...ij,...j->...i", cof, np.broadcast_to(t, cof.shape[:-1])) / b0[..., None]
    return DiffeoField(
        curve=curve, r=r, eps=float(eps), gamma=gamma,
        g=g, g_r=g_r, g_s=g_s, g_rr=g_rr, g_rs=g_rs, g_ss=g_ss, cut=c0,
        g_t=g_t, dgamma=dgamma, phi=phi, tphi=tphi, dphi=dphi, J=J, Nphi=Nphi, Tphi=Tphi,
    )


def calibrate_epsilon(
    curve: ReferenceCurve,
    r_sets,
    cl: ContactLine,
    eta0: float,
    C: float = 1.0,
    M0: float | None = None,
    m0: float = 1.0,
    max_halvings: int = 60,
) -> tuple[float, list[tuple[float, float]]]:
    """Smoothing scale eps with min d_r R >= delta0/(2(1+delta0)) on all r_sets.

    Starts from delta0/(4(1+delta0) C M0), capped at 1/r0, and halves until
    the bound holds.  Returns (eps, log of (eps, min d_r R)).
    """
    d0 = delta0_from_eta0(eta0)
    bound = d0 / (2.0 * (1.0 + d0))
    if M0 is None:
        M0 = sobolev_norm(spectral_derivative(cl.gamma, cl.L), cl.L, m0)
    cap = 1.0 / curve.r0
    eps = cap if M0 <= 0 else min(d0 / (4.0 * (1.0 + d0) * C * M0), cap)
    log = []
    for _ in range(max_halvings):
        worst = min(float(np.min(1.0 + _g_r(curve, np.asarray(r), cl.gamma, eps))) for r in r_sets)
        log.append((eps, worst))
        if worst >= bound:
            return eps, log
        eps *= 0.5
    raise JacobianDegenerate(f"no eps found with d_r R >= {bound:.3f}; gamma too large")


def _g_r(curve, r, gamma, eps):
    e = extend_gamma(gamma, curve.L, eps, r, derivs=True)
    c0 = cutoff(r / curve.r0)[:, None]
    c1 = (cutoff(r / curve.r0, 1) / curve.r0)[:, None]
    return e["r"] * c0 + e[""] * c1


# --------------------------------------------------------------------------
# bounds report
# --------------------------------------------------------------------------


def _second_derivatives(d: DiffeoField) -> np.ndarray:
    """Cartesian second derivatives d_k d_j tphi_i, shape (..., i, j, k).

    Assumes constant curvature (circle), where n' = kappa x', x'' = -kappa n.
    """
    n = d.curve.normal[None]
    t = d.curve.tangent[None]
    kap = d.kappa
    b0 = d.b0
    g, gr, gs, grr, grs, gss = d.g, d.g_r, d.g_s, d.g_rr, d.g_rs, d.g_ss
    outer = lambda u, v: u[..., :, None] * v[..., None, :]
    # first derivative matrix M_ij = gr n_i n_j + (gs n_i + g k t_i) t_j / b0
    Mr = (grr[..., None, None] * outer(n, n)
          + outer(grs[..., None] * n + (gr * kap)[..., None] * t, t) / b0[..., None, None]
          - outer(gs[..., None] * n + (g * kap)[..., None] * t, t) * (kap / b0**2)[..., None, None])
    Ms = (grs[..., None, None] * outer(n, n)
          + (gr * kap)[..., None, None] * (outer(t, n) + outer(n, t))
          + (outer((gss - g * kap**2)[..., None] * n + (2 * gs * kap)[..., None] * t, t)
             - outer(gs[..., None] * n + (g * kap)[..., None] * t, n) * kap[..., None, None]) / b0[..., None, None])
    return Mr[..., None] * n[..., None, None, :] + (Ms / b0[..., None, None])[..., None] * t[..., None, None, :]


def _lp(f: np.ndarray, w: np.ndarray, p: float) -> float:
    mag = np.sqrt(np.sum(f.reshape(f.shape[:2] + (-1,)) ** 2, axis=-1))
    return float(np.sum(w * mag**p) ** (1.0 / p))


def check_diffeo_bounds(d: DiffeoField, cl: ContactLine, m: int = 2) -> dict:
    """min J, min d_r R and ||d^alpha tphi||_{L2 cap L4} / |gamma|_|alpha|."""
    r = d.r
    wr = np.gradient(r) if r.size > 1 else np.ones(1)
    w = wr[:, None] * d.b0 * d.curve.ds
    first = d.dphi - np.eye(2)
    orders = {1: first}
    if m >= 2:
        orders[2] = _second_derivatives(d)
    report = {"min_J": float(np.min(d.J)), "min_drR": float(np.min(d.a)), "norms": {}, "ratios": {}}
    for k in sorted(orders):
        if k > m:
            continue
        val = _lp(orders[k], w, 2) + _lp(orders[k], w, 4)
        report["norms"][k] = val
        try:
            gn = gamma_norms(cl, k)
        except MissingHistory:
            gn = sobolev_norm(cl.gamma, cl.L, k)
        report["ratios"][k] = val / gn if gn > 0 else 0.0
    return report


def dgamma_derivatives(d: DiffeoField) -> tuple[np.ndarray, np.ndarray]:
    """(d_r g_t, d_s g_t) of the extended time derivative."""
    e = extend_gamma(d.dgamma, d.curve.L, d.eps, d.r, derivs=True)
    r0 = d.curve.r0
    c1 = (cutoff(d.r / r0, 1) / r0)[:, None]
    return e["r"] * d.cut + e[""] * c1, e["s"] * d.cut
