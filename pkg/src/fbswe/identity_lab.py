"""Machine-precision checks of the vector and change-of-variable identities.

Fields are real band-limited trigonometric polynomials on the periodic plane
[0, 2pi)^2 with coefficients uniform in [-1, 1] / (1 + |k|^3).  The map phi is
the identity plus a small periodic perturbation, so that nabla^phi f =
(d phi)^{-T} nabla f can be evaluated with spectral derivatives.  Variations
in the linearization checks are taken with a complex step, which is exact to
rounding for these analytic families.

Matrix convention: A[..., i, j] = d_j A_i, so that ``jac(v)`` is the
differential d v and ``jac(v) @ jac(phi)^{-1}`` is d^phi v.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diagnostics import rellich_sides
from .geometry import make_circle_curve, perp, spectral_derivative
from .hanzawa import ContactLine, build_diffeo, calibrate_epsilon

COMPLEX_STEP = 1e-30


@dataclass(frozen=True)
class RandomFieldSpec:
    seed: int = 0
    K: int = 4
    amplitude: float = 1.0
    N: int = 64
    chart: str = "plane"


@dataclass(frozen=True)
class IdentityResult:
    name: str
    residual: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual <= self.threshold)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{self.name:<28s} {self.residual:10.3e} {self.threshold:10.1e}  {flag}"


# --------------------------------------------------------------------------
# periodic plane calculus
# --------------------------------------------------------------------------


class Plane:
    """Spectral or central-difference calculus on an N x N periodic grid."""

    def __init__(self, N: int, fd_order: int | None = None):
        self.N = N
        self.h = 2 * np.pi / N
        x = np.arange(N) * self.h
        self.x = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1)
        k = np.fft.fftfreq(N, d=1.0 / N)
        if N % 2 == 0:
            k[N // 2] = 0.0
        self.k = k
        self.fd_order = fd_order

    def d(self, f: np.ndarray, axis: int) -> np.ndarray:
        """Derivative along grid axis 0 or 1.

        Complex input is differentiated part by part so that a complex-step
        perturbation is not polluted by FFT rounding of the real part.
        """
        if np.iscomplexobj(f):
            return self.d(f.real, axis) + 1j * self.d(f.imag, axis)
        if self.fd_order is None:
            shape = [1, 1]
            shape[axis] = self.N
            kk = self.k.reshape(shape)
            return np.fft.ifft(1j * kk * np.fft.fft(f, axis=axis), axis=axis).real
        if self.fd_order == 2:
            return (np.roll(f, -1, axis) - np.roll(f, 1, axis)) / (2 * self.h)
        if self.fd_order == 4:
            return (8 * (np.roll(f, -1, axis) - np.roll(f, 1, axis))
                    - (np.roll(f, -2, axis) - np.roll(f, 2, axis))) / (12 * self.h)
        raise ValueError("fd_order must be None, 2 or 4")

    def grad(self, f: np.ndarray) -> np.ndarray:
        return np.stack([self.d(f, 0), self.d(f, 1)], axis=-1)

    def jac(self, v: np.ndarray) -> np.ndarray:
        return np.stack([self.grad(v[..., 0]), self.grad(v[..., 1])], axis=-2)

    def random_scalar(self, rng: np.random.Generator, K: int, amplitude: float = 1.0) -> np.ndarray:
        f = np.zeros(self.x.shape[:-1])
        for k1 in range(-K, K + 1):
            for k2 in range(0, K + 1):
                if k2 == 0 and k1 < 0:
                    continue
                a, b = rng.uniform(-1.0, 1.0, 2)
                w = 1.0 / (1.0 + np.hypot(k1, k2) ** 3)
                ph = k1 * self.x[..., 0] + k2 * self.x[..., 1]
                f += amplitude * w * (a * np.cos(ph) + (b * np.sin(ph) if (k1, k2) != (0, 0) else 0.0))
        return f

    def random_vector(self, rng, K, amplitude=1.0) -> np.ndarray:
        return np.stack([self.random_scalar(rng, K, amplitude), self.random_scalar(rng, K, amplitude)], axis=-1)


def adjugate(A: np.ndarray) -> np.ndarray:
    """A* = det(A) A^{-1} for 2x2 blocks."""
    out = np.empty_like(A)
    out[..., 0, 0] = A[..., 1, 1]
    out[..., 0, 1] = -A[..., 0, 1]
    out[..., 1, 0] = -A[..., 1, 0]
    out[..., 1, 1] = A[..., 0, 0]
    return out


def _det(A):
    return A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]


def _inv(A):
    return adjugate(A) / _det(A)[..., None, None]


def _mv(A, v):
    return np.einsum("...ij,...j->...i", A, v)


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def _perp(a):
    return np.stack([-a[..., 1], a[..., 0]], axis=-1)


class PhiCalculus:
    """nabla^phi, d^phi and divergences for phi = x + u on a Plane.

    Only the periodic displacement u is differentiated.
    """

    def __init__(self, P: Plane, u: np.ndarray):
        self.P = P
        self.u = u
        self.A = np.eye(2) + P.jac(u)
        self.Ainv = _inv(self.A)
        self.J = _det(self.A)

    def grad(self, f):
        return np.einsum("...kj,...k->...j", self.Ainv, self.P.grad(f))

    def jac(self, v):
        return np.einsum("...ik,...kj->...ij", self.P.jac(v), self.Ainv)

    def div(self, v):
        D = self.jac(v)
        return D[..., 0, 0] + D[..., 1, 1]

    def curl(self, v):
        # (nabla^phi)^perp . v = d_1 v_2 - d_2 v_1
        D = self.jac(v)
        return D[..., 1, 0] - D[..., 0, 1]

    def directional(self, a, v):
        # (a . nabla^phi) v
        return _mv(self.jac(v), a)


# --------------------------------------------------------------------------
# identity checks
# --------------------------------------------------------------------------


def _plane_setup(spec: RandomFieldSpec):
    rng = np.random.default_rng(spec.seed)
    P = Plane(spec.N)
    return rng, P, PhiCalculus(P, 0.1 * P.random_vector(rng, spec.K))


def _rel(a, b) -> float:
    scale = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) / scale


def check_vector_identities(spec: RandomFieldSpec) -> dict[str, float]:
    """Max residual of F1, F2, both F3 lines and the F4 lines."""
    rng, P, C = _plane_setup(spec)
    a = spec.amplitude
    F, G, V = (P.random_vector(rng, spec.K, a) for _ in range(3))
    f, g, q = (P.random_vector(rng, spec.K, a) for _ in range(3))
    psi = P.random_vector(rng, spec.K, a)
    out = {}

    # F1 with plain derivatives
    DV = P.jac(V)
    curlV = DV[..., 1, 0] - DV[..., 0, 1]
    lhs = _dot(F, _mv(DV, G))
    rhs = _dot(G, _mv(DV, F)) + _dot(F, _perp(G)) * curlV
    out["F1"] = _rel(lhs, rhs)

    # F2 with nabla^phi
    lhs = _dot(f, C.directional(g, V))
    rhs = _dot(g, C.directional(f, V)) + _dot(f, _perp(g)) * C.curl(V)
    out["F2"] = _rel(lhs, rhs)

    # F3
    lhs = C.grad(_dot(f, g))
    rhs = np.einsum("...ki,...k->...i", C.jac(f), g) + np.einsum("...ki,...k->...i", C.jac(g), f)
    out["F3.1"] = _rel(lhs, rhs)
    lhs = np.einsum("...ki,...k->...i", C.jac(f), g)
    rhs = C.directional(g, f) - C.curl(f)[..., None] * _perp(g)
    out["F3.2"] = _rel(lhs, rhs)

    # F4
    Dpsi = P.jac(psi)
    Dphi_psi = C.jac(psi)
    lhs = np.einsum("...ik,...kj->...ij", _inv(adjugate(C.A)), adjugate(Dpsi))
    mid = np.einsum("...ik,...kj->...ij", C.A, adjugate(Dpsi)) / C.J[..., None, None]
    rhs = adjugate(Dphi_psi)
    out["F4.1"] = max(_rel(lhs, mid), _rel(mid, rhs))

    def plain_div(v):
        return P.d(v[..., 0], 0) + P.d(v[..., 1], 1)

    lhs = plain_div(_mv(adjugate(Dpsi), q))
    rhs = C.J * C.div(_mv(adjugate(Dphi_psi), q))
    out["F4.2"] = _rel(lhs, rhs)

    t1 = C.div(_mv(adjugate(Dphi_psi), q))
    t2 = C.div(_mv(adjugate(C.jac(q)), psi))
    t3 = C.div(C.div(q)[..., None] * psi - C.directional(psi, q))
    out["F4.3"] = max(_rel(t1, t2), _rel(t2, t3))
    return out


def _complex_family(P: Plane, phi, phidot, f, fdot, h=COMPLEX_STEP):
    return PhiCalculus(P, phi + 1j * h * phidot), f + 1j * h * fdot


def check_linearization_rules(spec: RandomFieldSpec) -> dict[str, float]:
    """Linearization rules and good-unknown commutation against complex-step variations.

    Time dependence: phi(t) = phi0 + t phi1, f(t) = f0 + t f1, evaluated at t = 0,
    so d_t^phi f = f1 - (phi1 . nabla^phi) f0.
    """
    rng, P, C = _plane_setup(spec)
    a = spec.amplitude
    phi0 = C.u
    phi1 = 0.1 * P.random_vector(rng, spec.K)
    phidot0 = 0.1 * P.random_vector(rng, spec.K)
    phidot1 = 0.1 * P.random_vector(rng, spec.K)
    f0, f1, fdot0, fdot1 = (P.random_scalar(rng, spec.K, a) for _ in range(4))
    F0, Fdot0 = P.random_vector(rng, spec.K, a), P.random_vector(rng, spec.K, a)
    h = COMPLEX_STEP

    def dt_phi(Cx, phi_t, f0_, f_t):
        return f_t - _dot(phi_t, Cx.grad(f0_))

    # exact variations by complex step
    Cc = PhiCalculus(P, phi0 + 1j * h * phidot0)
    grad_dot = (Cc.grad(f0 + 1j * h * fdot0)).imag / h
    div_dot = (Cc.div(F0 + 1j * h * Fdot0)).imag / h
    dt_dot = dt_phi(Cc, phi1 + 1j * h * phidot1, f0 + 1j * h * fdot0, f1 + 1j * h * fdot1).imag / h

    Dphidot = C.jac(phidot0)
    out = {}
    # linearization-1
    r_grad = C.grad(fdot0) - np.einsum("...ki,...k->...i", Dphidot, C.grad(f0))
    r_div = C.div(Fdot0) - np.einsum("...ki,...ik->...", Dphidot, C.jac(F0))
    dtf = dt_phi(C, phi1, f0, f1)
    dt_phidot = phidot1 - C.directional(phi1, phidot0)
    r_dt = dt_phi(C, phi1, fdot0, fdot1) - _dot(dt_phidot, C.grad(f0))
    out["lin1.div"] = _rel(div_dot, r_div)
    out["lin1.grad"] = _rel(grad_dot, r_grad)
    out["lin1.dt"] = _rel(dt_dot, r_dt)

    # good unknowns and linearization-2
    fchk = fdot0 - _dot(phidot0, C.grad(f0))
    Fchk = Fdot0 - C.directional(phidot0, F0)
    # d_t of the good unknown at t = 0: differentiate fchk(t) by complex step in t
    Ct = PhiCalculus(P, phi0 + 1j * h * phi1)
    fchk_t = (fdot0 + 1j * h * fdot1) - _dot(phidot0 + 1j * h * phidot1, Ct.grad(f0 + 1j * h * f1))
    dt_fchk = fchk_t.imag / h
    out["lin2.div"] = _rel(div_dot, C.div(Fchk) + _dot(phidot0, C.grad(C.div(F0))))
    out["lin2.grad"] = _rel(grad_dot, C.grad(fchk) + C.directional(phidot0, C.grad(f0)))
    # dt^phi of the good unknown: chart time derivative minus (phi1 . nabla^phi) fchk
    dtphi_fchk = dt_fchk - _dot(phi1, C.grad(fchk))
    out["lin2.dt"] = _rel(dt_dot, dtphi_fchk + _dot(phidot0, C.grad(dtf)))

    # commutation (nabla^phi f)check = nabla^phi fcheck
    gchk = grad_dot - C.directional(phidot0, C.grad(f0))
    out["goodunknown.grad"] = _rel(gchk, C.grad(fchk))
    dchk = div_dot - _dot(phidot0, C.grad(C.div(F0)))
    out["goodunknown.div"] = _rel(dchk, C.div(Fchk))
    tchk = dt_dot - _dot(phidot0, C.grad(dtf))
    out["goodunknown.dt"] = _rel(tchk, dtphi_fchk)
    return out


def check_rellich(spec: RandomFieldSpec, fd_order: int | None = None) -> float:
    """Pointwise residual of the Rellich-type identity on the plane."""
    rng = np.random.default_rng(spec.seed)
    P = Plane(spec.N, fd_order)
    C = PhiCalculus(P, 0.1 * Plane(spec.N).random_vector(rng, spec.K))
    f = P.random_vector(rng, spec.K, spec.amplitude)
    q = P.random_vector(rng, spec.K, spec.amplitude)
    lhs, rhs = rellich_sides(f, q, C.grad)
    return float(np.max(np.abs(lhs - rhs)))


def rellich_fd_order(spec: RandomFieldSpec, Ns=(32, 64, 128), fd_order: int = 2) -> tuple[list, float]:
    """Residuals with central differences and the observed order from the finest pair."""
    res = [check_rellich(RandomFieldSpec(spec.seed, spec.K, spec.amplitude, N), fd_order) for N in Ns]
    return res, float(np.log2(res[-2] / res[-1]))


# --------------------------------------------------------------------------
# chart checks on the simulator's diffeomorphism
# --------------------------------------------------------------------------


def _random_gamma(rng, Ns: int, K: int, amp: float, L: float) -> np.ndarray:
    s = np.arange(Ns) * L / Ns
    g = np.zeros(Ns)
    for k in range(1, K + 1):
        a, b = rng.uniform(-1.0, 1.0, 2) / (1.0 + k**3)
        g += a * np.cos(2 * np.pi * k * s / L) + b * np.sin(2 * np.pi * k * s / L)
    return amp * g / max(np.max(np.abs(g)), 1e-300)


def check_nphi_formula(gamma: np.ndarray, R0: float = 1.0, eps: float | None = None) -> float:
    """Grid N^phi at r = 0 against (1 + kappa gamma) N - (d_s gamma) N^perp."""
    Ns = gamma.size
    curve = make_circle_curve(R0, Ns)
    cl = ContactLine(gamma, curve.L)
    r = np.array([0.0, 0.1 * curve.r0])
    if eps is None:
        eps, _ = calibrate_epsilon(curve, [r], cl, 0.5)
    d = build_diffeo(curve, r, cl, eps)
    gs = spectral_derivative(gamma, curve.L, 1)
    N = curve.normal
    closed = (1.0 + curve.kappa * gamma)[:, None] * N - gs[:, None] * perp(N)
    return float(np.max(np.abs(d.Nphi[0] - closed)))


def check_divergence_theorem(seed: int = 0, Nr: int = 128, Ns: int = 256, order: int = 2,
                             support: float = 0.6) -> dict[str, float]:
    """int J nabla^phi.f over the exterior chart against -int N^phi.f on the curve.

    ``conservative`` differentiates the contravariant flux; ``pointwise`` uses
    the frame gradient.  Both use the exterior SBP quadrature.
    """
    from .exterior import contravariant, make_exterior_ops

    rng = np.random.default_rng(seed)
    curve = make_circle_curve(1.0, Ns)
    ops = make_exterior_ops(curve, 2.0, Nr, order)
    gamma = _random_gamma(rng, Ns, 4, 0.1 * curve.r0, curve.L)
    cl = ContactLine(gamma, curve.L)
    eps, _ = calibrate_epsilon(curve, [ops.r], cl, 0.5)
    d = build_diffeo(curve, ops.r, cl, eps)
    X = d.phi
    c1 = rng.uniform(-1, 1, 4)
    bump = np.exp(-(ops.r / support) ** 2)[:, None] * (ops.r < 1.9)[:, None]
    bump = bump * (1.0 - np.clip((ops.r[:, None] - 1.2) / 0.7, 0.0, 1.0) ** 2) ** 4
    fx = bump * (c1[0] + np.sin(X[..., 0] + c1[1]) * np.cos(X[..., 1]))
    fy = bump * (c1[2] + np.cos(2 * X[..., 0]) * np.sin(X[..., 1] + c1[3]))
    fn, ft = d.cartesian_to_frame(np.stack([fx, fy], axis=-1))
    # pointwise: nabla^phi . f from frame gradients of the Cartesian components
    gx = d.grad(ops.Dr(fx), ops.Ds(fx))
    gy = d.grad(ops.Dr(fy), ops.Ds(fy))
    gxc = d.frame_to_cartesian(*gx)
    gyc = d.frame_to_cartesian(*gy)
    div_pt = gxc[..., 0] + gyc[..., 1]
    lhs_pt = ops.integrate(div_pt, d)
    # conservative: Jt nabla^phi . f = d_r Fr + d_s Fs
    Fr, Fs = contravariant(fn, ft, d)
    lhs_c = float(np.sum(ops.P[:, None] * (ops.Dr(Fr) + ops.Ds(Fs))) * curve.ds)
    f0 = np.stack([fx[0], fy[0]], axis=-1)
    rhs = -float(np.sum(np.sum(d.Nphi[0] * f0, axis=-1)) * curve.ds)
    scale = max(abs(rhs), 1e-300)
    return {"conservative": abs(lhs_c - rhs) / scale, "pointwise": abs(lhs_pt - rhs) / scale}


# --------------------------------------------------------------------------
# suite
# --------------------------------------------------------------------------

THRESHOLD = 1e-10


def run_suite(seeds=range(20), K: int = 4, N: int = 64) -> list[IdentityResult]:
    """Max residual over seeds for every identity; one result per identity."""
    worst: dict[str, float] = {}
    thresholds: dict[str, float] = {}

    def put(name, val, thr):
        worst[name] = max(worst.get(name, 0.0), float(val))
        thresholds[name] = thr

    for seed in seeds:
        spec = RandomFieldSpec(seed=int(seed), K=K, N=N)
        for k, v in check_vector_identities(spec).items():
            put(k, v, THRESHOLD)
        for k, v in check_linearization_rules(spec).items():
            put(k, v, THRESHOLD)
        put("rellich", check_rellich(spec), 1e-9)
        rng = np.random.default_rng(int(seed))
        gamma = _random_gamma(rng, 128, K, 0.05, 2 * np.pi)
        put("Nphi2", check_nphi_formula(gamma), THRESHOLD)
    return [IdentityResult(k, worst[k], thresholds[k]) for k in worst]


def format_table(results: list[IdentityResult]) -> str:
    head = f"{'identity':<28s} {'residual':>10s} {'threshold':>10s}  status"
    return "\n".join([head] + [r.line() for r in results])
