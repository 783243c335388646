"""Reference curve, normal-tangential chart and differentiation on the chart.

The chart is theta(r, s) = x(s) + r n(s) where x is an arc-length
parametrization of the reference curve and n = -x'^perp is the outward
normal.  Grids are tensor products of r-nodes and equispaced s-nodes; s is
periodic and differentiated spectrally, r by finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def perp(a: np.ndarray) -> np.ndarray:
    """Counterclockwise quarter turn (a, b) -> (-b, a) on the last axis."""
    out = np.empty_like(a)
    out[..., 0] = -a[..., 1]
    out[..., 1] = a[..., 0]
    return out


def wavenumbers(n: int, L: float) -> np.ndarray:
    """Angular wavenumbers 2*pi*k/L of a length-n real FFT."""
    return 2.0 * np.pi / L * np.fft.rfftfreq(n, 1.0 / n)


def spectral_derivative(f: np.ndarray, L: float, order: int = 1, axis: int = -1) -> np.ndarray:
    """Fourier derivative of a real periodic array along ``axis``.

    The Nyquist mode is dropped for odd orders so that the first-derivative
    matrix is real and skew-symmetric.
    """
    n = f.shape[axis]
    k = wavenumbers(n, L)
    mult = (1j * k) ** order
    if order % 2 == 1 and n % 2 == 0:
        mult[-1] = 0.0
    shape = [1] * f.ndim
    shape[axis] = mult.size
    fh = np.fft.rfft(f, axis=axis) * mult.reshape(shape)
    return np.fft.irfft(fh, n=n, axis=axis)


def fornberg_weights(x0: float, x: np.ndarray, m: int) -> np.ndarray:
    """Finite difference weights for derivatives 0..m at x0 on nodes x.

    Returns an array of shape (m + 1, len(x)); row k holds the weights of
    the k-th derivative (Fornberg's recursion).
    """
    n = len(x)
    c = np.zeros((m + 1, n))
    c1 = 1.0
    c4 = x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def fd_matrix(x: np.ndarray, deriv: int = 1, width: int = 5) -> np.ndarray:
    """Dense FD differentiation matrix on (possibly non-uniform) nodes.

    Each row uses ``width`` consecutive nodes, centred where possible and
    one-sided near the ends, so the order is width - deriv everywhere.
    """
    n = len(x)
    D = np.zeros((n, n))
    half = width // 2
    for i in range(n):
        lo = min(max(i - half, 0), n - width)
        idx = np.arange(lo, lo + width)
        D[i, idx] = fornberg_weights(x[i], x[idx], deriv)[deriv]
    return D


def one_sided_weights(x: np.ndarray, at_end: bool) -> tuple[np.ndarray, np.ndarray]:
    """3-point, 2nd-order one-sided first-derivative weights at an end node.

    Returns (indices, weights).  ``at_end`` selects the last node, otherwise
    the first.
    """
    idx = np.arange(len(x) - 3, len(x)) if at_end else np.arange(3)
    x0 = x[-1] if at_end else x[0]
    return idx, fornberg_weights(x0, x[idx], 1)[1]


# --------------------------------------------------------------------------
# reference curve
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ReferenceCurve:
    """Samples of a closed arc-length parametrized curve.

    ``radius`` is set for circles and enables closed-form evaluation.
    """

    L: float
    s: np.ndarray
    x: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    kappa: np.ndarray
    r0: float
    radius: float | None = None

    @property
    def Ns(self) -> int:
        return self.s.size

    @property
    def ds(self) -> float:
        return self.L / self.Ns

    def signed_area(self) -> float:
        """Shoelace area; positive for counterclockwise orientation."""
        x, y = self.x[:, 0], self.x[:, 1]
        xp, yp = self.tangent[:, 0], self.tangent[:, 1]
        return 0.5 * float(np.sum(x * yp - y * xp) * self.ds)

    def evaluate(self, s) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """x(s), x'(s), n(s), kappa(s) at arbitrary arc parameters."""
        s = np.asarray(s, dtype=float)
        if self.radius is not None:
            R = self.radius
            c, sn = np.cos(s / R), np.sin(s / R)
            x = R * np.stack([c, sn], axis=-1)
            t = np.stack([-sn, c], axis=-1)
            return x, t, -perp(t), np.full(s.shape, 1.0 / R)
        return self._trig_eval(s)

    def _trig_eval(self, s):
        n = self.Ns
        k = np.fft.fftfreq(n, 1.0 / n) * 2.0 * np.pi / self.L
        xh = np.fft.fft(self.x, axis=0) / n
        if n % 2 == 0:
            xh[n // 2] = 0.0
        e = np.exp(1j * np.multiply.outer(s, k))
        x = np.real(e @ xh)
        xp = np.real((e * (1j * k)) @ xh)
        xpp = np.real((e * (1j * k) ** 2) @ xh)
        speed = np.linalg.norm(xp, axis=-1)
        t = xp / speed[..., None]
        kap = np.sum(xpp * perp(t), axis=-1) / speed**2
        return x, t, -perp(t), kap


def make_circle_curve(R0: float, Ns: int, r0: float | None = None) -> ReferenceCurve:
    """Counterclockwise circle of radius R0 sampled at Ns points."""
    if not R0 > 0:
        raise ValueError(f"radius must be positive, got {R0}")
    if Ns < 8 or Ns % 2:
        raise ValueError(f"Ns must be even and >= 8, got {Ns}")
    L = 2.0 * np.pi * R0
    s = np.arange(Ns) * (L / Ns)
    c, sn = np.cos(s / R0), np.sin(s / R0)
    x = R0 * np.stack([c, sn], axis=-1)
    t = np.stack([-sn, c], axis=-1)
    n = -perp(t)
    r0 = 0.5 * R0 if r0 is None else float(r0)
    if not 0 < r0 < R0:
        raise ValueError("tube half-width must satisfy 0 < r0 < R0")
    return ReferenceCurve(L, s, x, t, n, np.full(Ns, 1.0 / R0), r0, radius=float(R0))


def make_curve_from_samples(x: np.ndarray, L: float, r0: float) -> ReferenceCurve:
    """Curve from samples that are equispaced in arc length (total length L)."""
    x = np.asarray(x, dtype=float)
    Ns = x.shape[0]
    s = np.arange(Ns) * (L / Ns)
    xp = spectral_derivative(x, L, 1, axis=0)
    xpp = spectral_derivative(x, L, 2, axis=0)
    t = xp / np.linalg.norm(xp, axis=-1, keepdims=True)
    kappa = np.sum(xpp * perp(t), axis=-1)
    if r0 * np.max(np.abs(kappa)) >= 1:
        raise ValueError("tube half-width too large: r0*max|kappa| >= 1")
    return ReferenceCurve(float(L), s, x, t, -perp(t), kappa, float(r0))


# --------------------------------------------------------------------------
# chart
# --------------------------------------------------------------------------


def theta_map(curve: ReferenceCurve, r, s) -> np.ndarray:
    """Point x(s) + r n(s); raises if 1 + r*kappa <= 0 (chart singular)."""
    r = np.asarray(r, dtype=float)
    x, _, n, kap = curve.evaluate(s)
    if np.any(1.0 + r * kap <= 0):
        raise ValueError("r at or beyond the chart singularity (1 + r*kappa <= 0)")
    return x + r[..., None] * n


def theta_jacobian(curve: ReferenceCurve, r, s) -> np.ndarray:
    """det d(theta)/d(r, s) = 1 + r*kappa(s)."""
    _, _, _, kap = curve.evaluate(s)
    return 1.0 + np.asarray(r, dtype=float) * kap


def theta_inverse(curve: ReferenceCurve, x, tol: float = 1e-14, maxiter: int = 50, newton: bool = False):
    """Chart coordinates (r, s) of points x (closed form for circles)."""
    x = np.asarray(x, dtype=float)
    if curve.radius is not None and not newton:
        rho = np.linalg.norm(x, axis=-1)
        s = np.mod(curve.radius * np.arctan2(x[..., 1], x[..., 0]), curve.L)
        return rho - curve.radius, s
    flat = x.reshape(-1, 2)
    d2 = np.sum((flat[:, None, :] - curve.x[None, :, :]) ** 2, axis=-1)
    s = curve.s[np.argmin(d2, axis=1)].copy()
    r = np.zeros_like(s)
    for _ in range(maxiter):
        xs, t, n, kap = curve.evaluate(s)
        res = xs + r[:, None] * n - flat
        # columns of d(theta)/d(r, s): n and (1 + r kappa) t, orthogonal
        dr = -np.sum(res * n, axis=1)
        dsv = -np.sum(res * t, axis=1) / (1.0 + r * kap)
        r += dr
        s += dsv
        if np.max(np.abs(dr)) + np.max(np.abs(dsv)) < tol:
            break
    return r.reshape(x.shape[:-1]), np.mod(s, curve.L).reshape(x.shape[:-1])


@dataclass(frozen=True)
class NTGrid:
    """Tensor grid of r-nodes times the curve's s-samples with chart metric."""

    curve: ReferenceCurve
    r: np.ndarray
    theta: np.ndarray
    jac: np.ndarray
    det: np.ndarray
    Dr: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.r.size, self.curve.Ns

    @property
    def R(self) -> np.ndarray:
        """r broadcast to the grid shape."""
        return np.broadcast_to(self.r[:, None], self.shape)

    def dr(self, f: np.ndarray) -> np.ndarray:
        return np.tensordot(self.Dr, f, axes=(1, 0))

    def ds(self, f: np.ndarray, order: int = 1) -> np.ndarray:
        return spectral_derivative(f, self.curve.L, order, axis=1)


def make_grid(curve: ReferenceCurve, r: np.ndarray, width: int = 5) -> NTGrid:
    """Chart grid on the given r-nodes; r-derivatives use ``width``-point FD."""
    r = np.asarray(r, dtype=float)
    n, t, kap = curve.normal, curve.tangent, curve.kappa
    det = 1.0 + np.outer(r, kap)
    if np.any(det <= 0):
        raise ValueError("grid crosses the chart singularity")
    theta = curve.x[None] + r[:, None, None] * n[None]
    jac = np.empty(det.shape + (2, 2))
    jac[..., :, 0] = n[None]
    jac[..., :, 1] = det[..., None] * t[None]
    return NTGrid(curve, r, theta, jac, det, fd_matrix(r, 1, min(width, r.size)))


def nt_derivatives(grid: NTGrid, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normal and tangential derivatives: d_r and d_s of f on the chart."""
    return grid.dr(f), grid.ds(f)


def gradient_from_nt(grid: NTGrid, dnor: np.ndarray, dtan: np.ndarray) -> np.ndarray:
    """Cartesian gradient N dnor + T dtan / |T|^2 with T = (1 + r kappa) x'."""
    n = grid.curve.normal[None]
    t = grid.curve.tangent[None]
    return n * dnor[..., None] + t * (dtan / grid.det)[..., None]
