"""Elliptic problem under the obstacle and its Dirichlet-to-Neumann map.

The wetted footprint is the disk rho <= R0, described by the same (r, s)
chart as the exterior with r = rho - R0 in [-R0, 0].  Radial nodes are
clustered toward the waterline and shifted by half a cell so that there is
no node at the centre; the first cell extends to rho = 0, where the radial
flux carries zero weight (b = 0).

The operator is assembled from the discrete energy

    E(phi) = 1/2 sum_faces ds dF [A_rr X^2 + 2 A_rs X <Y>]
           + 1/2 sum_nodes ds w A_ss Y^2,

with X the face difference quotient, Y the spectral s-derivative and <.>
the two-point face average.  K = grad E is symmetric by construction and
the DN map is the Schur complement on the ring, Lambda psi = (K phi)_ring / ds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded
from scipy.sparse.linalg import LinearOperator, cg

from .errors import DegenerateCoefficients, MissingHistory, SolveFailed
from .geometry import ReferenceCurve, fd_matrix, fornberg_weights, spectral_derivative, wavenumbers
from .hanzawa import ContactLine, DiffeoField, build_diffeo
from .params import Physics


# --------------------------------------------------------------------------
# grid and obstacle
# --------------------------------------------------------------------------


def stretched_radii(R0: float, Nr: int, beta: float) -> np.ndarray:
    """Shifted radial nodes in (0, R0], last node on the ring.

    rho = R0 (1 - sinh(beta (1 - xi)) / sinh(beta)) with
    xi_j = (j + 1/2)/(Nr - 1/2); beta = 0 gives uniform spacing.
    """
    xi = (np.arange(Nr) + 0.5) / (Nr - 0.5)
    if beta == 0:
        return R0 * xi
    return R0 * (1.0 - np.sinh(beta * (1.0 - xi)) / np.sinh(beta))


@dataclass(frozen=True)
class InteriorGrid:
    curve: ReferenceCurve
    rho: np.ndarray
    rho_f: np.ndarray
    width: np.ndarray
    dF: np.ndarray
    Dr: np.ndarray
    beta: float

    @property
    def R0(self) -> float:
        return self.curve.radius

    @property
    def r(self) -> np.ndarray:
        return self.rho - self.R0

    @property
    def r_f(self) -> np.ndarray:
        return self.rho_f - self.R0

    @property
    def Nr(self) -> int:
        return self.rho.size

    @property
    def Ns(self) -> int:
        return self.curve.Ns

    @property
    def shape(self) -> tuple[int, int]:
        return self.Nr, self.Ns

    def ring_derivative(self) -> tuple[np.ndarray, np.ndarray]:
        """(indices, weights) of the 3-point one-sided d_r at the ring."""
        idx = np.arange(self.Nr - 3, self.Nr)
        return idx, fornberg_weights(self.r[-1], self.r[idx], 1)[1]

    def quadrature_weights(self, d: DiffeoField | None = None) -> np.ndarray:
        """Cell-width x ds x Jacobian weights for integrals over the disk."""
        J = (1.0 + self.r[:, None] / self.R0) if d is None else d.Jt
        return self.width[:, None] * self.curve.ds * J


def make_interior_grid(curve: ReferenceCurve, Nr: int, beta: float = 3.0) -> InteriorGrid:
    if curve.radius is None:
        raise ValueError("the interior chart requires a circular reference curve")
    if Nr < 4:
        raise ValueError("need at least 4 radial nodes under the obstacle")
    rho = stretched_radii(curve.radius, Nr, beta)
    rho_f = 0.5 * (rho[1:] + rho[:-1])
    edges = np.concatenate([[0.0], rho_f, [rho[-1]]])
    return InteriorGrid(
        curve=curve, rho=rho, rho_f=rho_f, width=np.diff(edges), dF=np.diff(rho),
        Dr=fd_matrix(rho, 1, 5), beta=float(beta),
    )


@dataclass(frozen=True)
class ObstacleSpec:
    """Bottom of the body z = Z_w(x); H_w = H0 + Z_w."""

    Z_w: Callable[[np.ndarray], np.ndarray]
    grad_Z_w: Callable[[np.ndarray], np.ndarray] | None = None
    label: str = "custom"
    params: dict = field(default_factory=dict)

    def H_w(self, x: np.ndarray, H0: float) -> np.ndarray:
        return H0 + self.Z_w(x)

    def check(self, x: np.ndarray, H0: float, c0: float) -> None:
        hw = self.H_w(x, H0)
        if np.min(hw) < c0:
            raise DegenerateCoefficients(f"H_w min {np.min(hw):.3e} below c0 = {c0}")

    @classmethod
    def radial_polynomial(cls, coeffs) -> "ObstacleSpec":
        """Z_w = sum_k c_k rho^k."""
        c = np.asarray(coeffs, dtype=float)

        def Z(x):
            return np.polynomial.polynomial.polyval(np.linalg.norm(x, axis=-1), c)

        dc = np.polynomial.polynomial.polyder(c)

        def dZ(x):
            rho = np.linalg.norm(x, axis=-1)
            safe = np.where(rho > 0, rho, 1.0)
            return (np.polynomial.polynomial.polyval(rho, dc) / safe)[..., None] * x

        return cls(Z, dZ, "radial_polynomial", {"coeffs": c.tolist()})

    @classmethod
    def paraboloid(cls, depth: float, R0: float, waterline: float = 0.0) -> "ObstacleSpec":
        """Z_w = waterline - depth (1 - rho^2/R0^2); equals ``waterline`` on the ring."""
        obs = cls.radial_polynomial([waterline - depth, 0.0, depth / R0**2])
        return cls(obs.Z_w, obs.grad_Z_w, "paraboloid",
                   {"depth": depth, "R0": R0, "waterline": waterline})

    @classmethod
    def gaussian_cap(cls, depth: float, width: float, offset: float = 0.0) -> "ObstacleSpec":
        """Z_w = offset - depth exp(-rho^2/width^2)."""

        def Z(x):
            return offset - depth * np.exp(-np.sum(x * x, axis=-1) / width**2)

        def dZ(x):
            e = np.exp(-np.sum(x * x, axis=-1) / width**2)
            return (2.0 * depth / width**2 * e)[..., None] * x

        return cls(Z, dZ, "gaussian_cap", {"depth": depth, "width": width, "offset": offset})


# --------------------------------------------------------------------------
# operator
# --------------------------------------------------------------------------


def _kvec(grid: InteriorGrid) -> np.ndarray:
    k = wavenumbers(grid.Ns, grid.curve.L).copy()
    k[-1] = 0.0  # Nyquist mode is not differentiated
    return k


class _ModePreconditioner:
    """Exact inverse of the s-averaged operator, mode by mode in s.

    Each Fourier mode gives a symmetric tridiagonal radial matrix on the
    unknown (non-ring) nodes, factorized once by banded Cholesky.
    """

    def __init__(self, grid: InteriorGrid, arr_f: np.ndarray, ass_n: np.ndarray):
        n = grid.Nr - 1
        ds = grid.curve.ds
        crr = ds * np.mean(arr_f, axis=1) / grid.dF
        css = ds * grid.width * np.mean(ass_n, axis=1)
        k2 = _kvec(grid) ** 2
        diag0 = np.zeros(grid.Nr)
        diag0[:-1] += crr
        diag0[1:] += crr
        self.factors = []
        for kk in k2:
            ab = np.zeros((2, n))
            ab[1] = diag0[:n] + kk * css[:n]
            ab[0, 1:] = -crr[: n - 1]
            self.factors.append(cholesky_banded(ab))
        self.n = n
        self.Ns = grid.Ns

    def __call__(self, rhs: np.ndarray) -> np.ndarray:
        R = np.fft.rfft(rhs.reshape(self.n, self.Ns), axis=1)
        X = np.empty_like(R)
        for j, cf in enumerate(self.factors):
            col = np.stack([R[:, j].real, R[:, j].imag], axis=1)
            sol = cho_solve_banded((cf, False), col)
            X[:, j] = sol[:, 0] + 1j * sol[:, 1]
        return np.fft.irfft(X, n=self.Ns, axis=1).ravel()


@dataclass
class EllipticOperator:
    """Discrete -div(A grad .) on the disk with the ring as Dirichlet boundary."""

    grid: InteriorGrid
    d: DiffeoField
    d_face: DiffeoField
    hw: np.ndarray
    hw_face: np.ndarray
    arr_f: np.ndarray
    ars_f: np.ndarray
    ass_n: np.ndarray
    precond: _ModePreconditioner
    dphi_ref: float
    pc_gamma: np.ndarray
    rtol: float = 1e-12
    iterations: int = 0

    @property
    def shape(self):
        return self.grid.shape

    def _Ds(self, f):
        return spectral_derivative(f, self.grid.curve.L, 1, axis=1)

    def apply(self, phi: np.ndarray) -> np.ndarray:
        """K phi on the full grid (ring rows included)."""
        g = self.grid
        ds = g.curve.ds
        X = np.diff(phi, axis=0) / g.dF[:, None]
        Y = self._Ds(phi)
        Yf = 0.5 * (Y[1:] + Y[:-1])
        fr = g.dF[:, None] * (self.arr_f * X + self.ars_f * Yf)
        out = np.zeros_like(phi)
        t = fr / g.dF[:, None]
        out[:-1] -= t
        out[1:] += t
        cross = g.dF[:, None] * self.ars_f * X
        fs = g.width[:, None] * self.ass_n * Y
        fs[:-1] += 0.5 * cross
        fs[1:] += 0.5 * cross
        out -= self._Ds(fs)
        return ds * out

    def energy(self, phi: np.ndarray) -> float:
        """Discrete Dirichlet energy 2E = <K phi, phi>."""
        return float(np.sum(self.apply(phi) * phi))

    def solve(self, psi: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        """phi with phi|ring = psi and (K phi) = 0 at every other node."""
        g = self.grid
        n = g.Nr - 1
        psi = np.asarray(psi, dtype=float)
        full = np.zeros(g.shape)
        full[-1] = psi
        rhs = -self.apply(full)[:-1].ravel()

        def mv(x):
            full = np.zeros(g.shape)
            full[:-1] = x.reshape(n, g.Ns)
            return self.apply(full)[:-1].ravel()

        A = LinearOperator((n * g.Ns, n * g.Ns), matvec=mv)
        M = LinearOperator((n * g.Ns, n * g.Ns), matvec=self.precond)
        if x0 is None:
            guess = np.broadcast_to(np.mean(psi), (n, g.Ns)).ravel().copy()
        else:
            guess = np.asarray(x0, dtype=float)[:-1].ravel().copy()
        scale = np.linalg.norm(rhs)
        if scale == 0.0:
            sol = np.zeros(n * g.Ns)
        else:
            count = [0]

            def cb(_):
                count[0] += 1

            sol, info = cg(A, rhs, x0=guess, rtol=self.rtol, atol=0.0, maxiter=2000, M=M, callback=cb)
            self.iterations = count[0]
            if info != 0:
                raise SolveFailed(f"interior CG did not converge (info={info})")
        full[:-1] = sol.reshape(n, g.Ns)
        return full

    def dn(self, phi: np.ndarray) -> np.ndarray:
        """Conormal flux on the ring per unit reference arc length."""
        return self.apply(phi)[-1] / self.grid.curve.ds


def _coefficients(d: DiffeoField, hw: np.ndarray):
    a, b, gs = d.a, d.b, d.g_s
    if np.min(a) <= 0 or np.min(b) <= 0 or np.min(hw) <= 0:
        raise DegenerateCoefficients("A_i not positive definite (a, b or h_w <= 0)")
    return hw * (b * b + gs * gs) / (a * b), -hw * gs / b, hw * a / b


def assemble_elliptic(
    grid: InteriorGrid,
    cl: ContactLine,
    eps: float,
    obs: ObstacleSpec,
    phys: Physics,
    previous: EllipticOperator | None = None,
    refactor_tol: float = 1e-3,
    rtol: float = 1e-12,
) -> EllipticOperator:
    """Interior operator for the diffeo of ``cl``.

    The preconditioner of ``previous`` is reused while the relative change
    of the Jacobian field stays below ``refactor_tol``.
    """
    d = build_diffeo(grid.curve, grid.r, cl, eps)
    df = build_diffeo(grid.curve, grid.r_f, cl, eps)
    hw = obs.H_w(d.phi, phys.H0)
    hwf = obs.H_w(df.phi, phys.H0)
    if np.min(hw) <= 0 or np.min(hwf) <= 0:
        raise DegenerateCoefficients(f"H_w <= 0 under the obstacle (min {min(hw.min(), hwf.min()):.3e})")
    arr_f, ars_f, _ = _coefficients(df, hwf)
    _, _, ass_n = _coefficients(d, hw)
    nrm = float(np.linalg.norm(d.dphi))
    if previous is not None and abs(nrm - previous.dphi_ref) <= refactor_tol * previous.dphi_ref:
        pc, ref, pg = previous.precond, previous.dphi_ref, previous.pc_gamma
    else:
        pc, ref, pg = _ModePreconditioner(grid, arr_f, ass_n), nrm, np.array(cl.gamma, dtype=float)
    return EllipticOperator(grid, d, df, hw, hwf, arr_f, ars_f, ass_n, pc, ref, pg, rtol)


# --------------------------------------------------------------------------
# solution and derived fields
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class InteriorState:
    """Interior potential and derived fields; velocities in the (n, x') frame."""

    psi: np.ndarray
    phi: np.ndarray
    v_n: np.ndarray
    v_t: np.ndarray
    zeta: np.ndarray
    h: np.ndarray
    dn: np.ndarray
    p: np.ndarray | None = None

    def w(self, d: DiffeoField) -> tuple[np.ndarray, np.ndarray]:
        return self.v_n - d.g_t, self.v_t


def interior_velocity(grid: InteriorGrid, d: DiffeoField, phi: np.ndarray):
    """nabla^phi phi_i in frame components."""
    f_r = grid.Dr @ phi
    f_s = spectral_derivative(phi, grid.curve.L, 1, axis=1)
    return d.grad(f_r, f_s)


def solve_interior(op: EllipticOperator, psi: np.ndarray, obs: ObstacleSpec, phys: Physics,
                   x0: np.ndarray | None = None) -> InteriorState:
    phi = op.solve(psi, x0)
    vn, vt = interior_velocity(op.grid, op.d, phi)
    zeta = obs.Z_w(op.d.phi)
    return InteriorState(np.asarray(psi, dtype=float).copy(), phi, vn, vt, zeta, phys.H0 + zeta, op.dn(phi))


def dn_map(op: EllipticOperator, psi: np.ndarray) -> np.ndarray:
    """Lambda_phi psi on the ring."""
    return op.dn(op.solve(psi))


def interior_residual(op: EllipticOperator, phi: np.ndarray) -> float:
    """max |K phi| off the ring, relative to the ring flux scale."""
    Kp = op.apply(phi)
    scale = max(float(np.max(np.abs(Kp[-1]))), 1e-300)
    return float(np.max(np.abs(Kp[:-1]))) / scale


def recover_pressure(prev: InteriorState | None, cur: InteriorState, dt: float,
                     d: DiffeoField, grid: InteriorGrid, phys: Physics) -> np.ndarray:
    """P_atm - rho (d_t^phi phi_i + |v_i|^2/2 + g zeta_i), BDF1 in time."""
    if prev is None or dt <= 0:
        raise MissingHistory("pressure recovery needs two consecutive interior solves")
    dphi_t = (cur.phi - prev.phi) / dt
    dtphi = dphi_t - d.g_t * cur.v_n
    return phys.P_atm - phys.rho * (dtphi + 0.5 * (cur.v_n**2 + cur.v_t**2) + phys.g * cur.zeta)
