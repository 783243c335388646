"""Contact-line coupling: traces on the reference curve, d_t gamma and d_t psi_i.

All quantities live on the s-grid of the reference curve (r = 0).  Normal
derivatives of zeta are one-sided 3-point stencils taken from each side:
the exterior stencil on the uniform exterior grid, the interior one on the
stretched interior grid.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import TransversalityLost, TubeExceeded
from .exterior import ExteriorOps, ExteriorState
from .hanzawa import DiffeoField
from .interior import InteriorGrid, InteriorState
from .params import Physics


@dataclass(frozen=True)
class CouplingTrace:
    """Boundary values on the reference curve; velocities in the (n, x') frame.

    ``div`` is the discrete nabla^phi.(h v) seen by the continuity equation
    at the boundary node, boundary penalty included.
    """

    zeta: np.ndarray
    v_n: np.ndarray
    v_t: np.ndarray
    zeta_i: np.ndarray
    v_n_i: np.ndarray
    v_t_i: np.ndarray
    dzeta_r: np.ndarray
    dzeta_i_r: np.ndarray
    Nphi: np.ndarray
    J: np.ndarray
    g_t: np.ndarray
    dn: np.ndarray
    div: np.ndarray
    gamma: np.ndarray
    normal: np.ndarray

    def with_g_t(self, g_t: np.ndarray) -> "CouplingTrace":
        return replace(self, g_t=np.asarray(g_t, dtype=float))


def interior_ring_derivative(grid: InteriorGrid, f: np.ndarray) -> np.ndarray:
    idx, w = grid.ring_derivative()
    return np.tensordot(w, f[idx], axes=(0, 0))


def make_trace(ext: ExteriorState, d: DiffeoField, ops: ExteriorOps, phys: Physics,
               interior: InteriorState, grid: InteriorGrid, div: np.ndarray) -> CouplingTrace:
    vn, vt = ext.velocity(d)
    return CouplingTrace(
        zeta=ext.zeta[0].copy(), v_n=vn[0], v_t=vt[0],
        zeta_i=interior.zeta[-1].copy(), v_n_i=interior.v_n[-1], v_t_i=interior.v_t[-1],
        dzeta_r=ops.Dr_wall(ext.zeta), dzeta_i_r=interior_ring_derivative(grid, interior.zeta),
        Nphi=d.Nphi[0], J=d.J[0], g_t=d.g_t[0], dn=interior.dn, div=np.asarray(div, dtype=float),
        gamma=d.gamma, normal=d.curve.normal,
    )


def transversality(trace: CouplingTrace) -> float:
    """min_s |N . grad(zeta - zeta_i)| on the reference curve."""
    return float(np.min(np.abs(trace.dzeta_r - trace.dzeta_i_r)))


def gamma_rhs(trace: CouplingTrace, c0: float = 0.0) -> np.ndarray:
    """d_t gamma = nabla^phi.(h v) / N.grad(zeta - zeta_i) at r = 0."""
    jump = trace.dzeta_r - trace.dzeta_i_r
    m = float(np.min(np.abs(jump)))
    if m < c0 or m == 0.0:
        raise TransversalityLost(f"min |N.grad(zeta - zeta_i)| = {m:.3e} < {c0}")
    return trace.div / jump


def gamma_rhs_conormal(trace: CouplingTrace) -> np.ndarray:
    """d_t gamma through the conormal.

    N^phi . d_t phi = J div / N.grad(zeta - zeta_i) and d_t phi = (d_t gamma) N
    on the curve, so d_t gamma = J div / (N.grad(zeta - zeta_i) N^phi . N),
    with grid values of J and N^phi.
    """
    speed = trace.J * trace.div / (trace.dzeta_r - trace.dzeta_i_r)
    return speed / np.sum(trace.Nphi * trace.normal, axis=-1)


def psi_rhs(trace: CouplingTrace, phys: Physics) -> np.ndarray:
    """d_t psi_i = d_t phi . v - |v|^2/2 - g zeta on the reference curve."""
    return trace.g_t * trace.v_n - 0.5 * (trace.v_n**2 + trace.v_t**2) - phys.g * trace.zeta


def velocity_gap(trace: CouplingTrace) -> float:
    """max_s |v - v_i| on the reference curve."""
    return float(np.max(np.hypot(trace.v_n - trace.v_n_i, trace.v_t - trace.v_t_i)))


def tube_check(gamma: np.ndarray, r0: float, eta0: float) -> float:
    """max|gamma| / r0; raises TubeExceeded above eta0."""
    ratio = float(np.max(np.abs(gamma))) / r0
    if ratio > eta0 * (1.0 + 1e-12):
        raise TubeExceeded(f"max|gamma|/r0 = {ratio:.4f} > eta0 = {eta0}")
    return ratio
