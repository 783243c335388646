"""Coupled time stepping of (zeta, q, psi_i, gamma) and run lifecycle.

Each right-hand-side evaluation rebuilds the diffeomorphism from gamma,
solves the interior problem for the DN flux, applies the boundary penalty,
evaluates d_t gamma from the contact-line equation and finally the exterior
and psi_i tendencies with d_t phi built from that d_t gamma.  The four
unknowns are advanced together by a strong-stability-preserving Runge-Kutta
method (SSP-RK3 by default, SSP-RK2 selectable) with the s-filter applied
after each stage.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .contactline import CouplingTrace, gamma_rhs, make_trace, psi_rhs, transversality, tube_check
from .errors import SolverError, TransversalityLost
from .exterior import (
    SSP_STAGES, BoundaryTreatment, ExteriorOps, ExteriorState, characteristic_bc, check_state, divergence,
    make_exterior_ops, outer_sat, rhs_exterior, velocity_tendency,
)
from .geometry import ReferenceCurve, make_circle_curve
from .hanzawa import ContactLine, DiffeoField, build_diffeo, calibrate_epsilon
from .interior import (
    EllipticOperator, InteriorGrid, InteriorState, ObstacleSpec, assemble_elliptic, make_interior_grid,
    solve_interior,
)
from .params import Numerics, Physics

MAGIC = b"FOSWE1"


@dataclass(frozen=True)
class Model:
    """Everything that stays fixed during a run."""

    curve: ReferenceCurve
    ops: ExteriorOps
    grid: InteriorGrid
    obs: ObstacleSpec
    phys: Physics
    num: Numerics
    eps: float

    @property
    def Ns(self) -> int:
        return self.curve.Ns


def make_model(R0: float, R_ext: float, Nr_ext: int, Nr_int: int, Ns: int, obs: ObstacleSpec,
               phys: Physics = Physics(), num: Numerics = Numerics(), r0: float | None = None,
               gamma0: np.ndarray | None = None) -> tuple[Model, list]:
    """Build grids and operators; eps is calibrated on gamma0 unless fixed in ``num``.

    Returns (model, calibration log).
    """
    curve = make_circle_curve(R0, Ns, r0)
    ops = make_exterior_ops(curve, R_ext - R0, Nr_ext, num.fd_order, num.filter_alpha, num.filter_order)
    grid = make_interior_grid(curve, Nr_int, num.interior_stretch)
    g0 = np.zeros(Ns) if gamma0 is None else np.asarray(gamma0, dtype=float)
    if num.eps is not None:
        eps, log = float(num.eps), []
    else:
        eps, log = calibrate_epsilon(curve, [ops.r, grid.r, grid.r_f], ContactLine(g0, curve.L), num.eta0)
    return Model(curve, ops, grid, obs, phys, num, eps), log


@dataclass(frozen=True)
class Evaluation:
    """One right-hand-side evaluation with the fields it produced."""

    d: DiffeoField
    d_int: DiffeoField
    op: EllipticOperator
    interior: InteriorState
    trace: CouplingTrace
    bc: BoundaryTreatment
    dzeta: np.ndarray
    dq: np.ndarray
    dpsi: np.ndarray
    dgamma: np.ndarray
    subcrit: float
    transv: float
    x0: np.ndarray | None


@dataclass(frozen=True)
class SystemState:
    zeta: np.ndarray
    q: np.ndarray
    psi: np.ndarray
    gamma: np.ndarray
    t: float = 0.0
    step: int = 0
    ev: Evaluation | None = field(default=None, repr=False, compare=False)
    prev_dzeta: np.ndarray | None = field(default=None, repr=False, compare=False)
    prev_dv: np.ndarray | None = field(default=None, repr=False, compare=False)
    prev_dgamma: np.ndarray | None = field(default=None, repr=False, compare=False)
    prev_phi: np.ndarray | None = field(default=None, repr=False, compare=False)
    prev_dt: float = 0.0
    trace_int: float = 0.0
    config_text: str = ""

    @property
    def ext(self) -> ExteriorState:
        return ExteriorState(self.zeta, self.q, self.t)

    @property
    def interior(self) -> InteriorState | None:
        return None if self.ev is None else self.ev.interior

    @property
    def diffeo(self) -> DiffeoField | None:
        return None if self.ev is None else self.ev.d

    def contact_line(self, L: float) -> ContactLine:
        dg = None if self.ev is None else self.ev.dgamma
        return ContactLine(self.gamma, L, dg)

    def fields(self) -> tuple[np.ndarray, ...]:
        return self.zeta, self.q, self.psi, self.gamma


def evaluate(model: Model, zeta, q, psi, gamma, x0=None, previous: EllipticOperator | None = None) -> Evaluation:
    m, ph, num = model, model.phys, model.num
    cl = ContactLine(gamma, m.curve.L)
    d = build_diffeo(m.curve, m.ops.r, cl, m.eps)
    op = assemble_elliptic(m.grid, cl, m.eps, m.obs, ph, previous, num.refactor_tol, num.cg_rtol)
    interior = solve_interior(op, psi, m.obs, ph, x0)
    state = ExteriorState(zeta, q)
    subcrit = check_state(state, d, ph, num.c0)
    bc = characteristic_bc(state, d, m.ops, ph, interior.dn, interior.zeta[-1])
    div0 = divergence(state, d, m.ops, ph)[0] - bc.sat
    trace = make_trace(state, d, m.ops, ph, interior, m.grid, div0)
    transv = transversality(trace)
    if transv < num.c0:
        raise TransversalityLost(f"transversality margin {transv:.3e} < c0 = {num.c0}")
    dgamma = np.zeros_like(gamma) if num.freeze_gamma else gamma_rhs(trace, num.c0)
    d = d.with_dgamma(dgamma)
    d_int = op.d.with_dgamma(dgamma)
    # recheck with the moving chart velocity
    subcrit = check_state(state, d, ph, num.c0)
    trace = trace.with_g_t(d.g_t[0])
    so = outer_sat(state, d, m.ops, ph, num.outer_bc)
    dzeta, dq = rhs_exterior(state, d, m.ops, ph, bc.sat, so, num.form)
    dpsi = psi_rhs(trace, ph)
    return Evaluation(d, d_int, op, interior, trace, bc, dzeta, dq, dpsi, dgamma, subcrit, transv, x0)


def _filter(model: Model, zeta, q, psi, gamma):
    f = model.ops.filter
    return f(zeta), f(q), f(psi), f(gamma)


def initialize(model: Model, zeta, q, psi, gamma, t: float = 0.0, config_text: str = "") -> SystemState:
    zeta, q, psi, gamma = (np.array(a, dtype=float) for a in (zeta, q, psi, gamma))
    tube_check(gamma, model.curve.r0, model.num.eta0)
    ev = evaluate(model, zeta, q, psi, gamma)
    return SystemState(zeta, q, psi, gamma, t, 0, ev, config_text=config_text)


def cfl_dt(model: Model, sys: SystemState) -> float:
    """CFL number times min over nodes of local cell size / (|w| + sqrt(g h))."""
    ev = sys.ev if sys.ev is not None else evaluate(model, *sys.fields())
    d = ev.d
    wn, wt = sys.ext.w(d)
    h = np.maximum(model.phys.H0 + sys.zeta, 0.0)
    speed = np.hypot(wn, wt) + np.sqrt(model.phys.g * h)
    size = np.minimum(d.a * model.ops.dr, d.b * model.curve.ds)
    return float(model.num.cfl * np.min(size / speed))


def advance(model: Model, sys: SystemState, dt: float) -> SystemState:
    """One SSP step of the coupled system; fatal errors carry ``state``."""
    try:
        return _advance(model, sys, dt)
    except SolverError as exc:
        exc.state = sys
        raise


def _advance(model: Model, sys: SystemState, dt: float) -> SystemState:
    try:
        stages = SSP_STAGES[model.num.integrator]
    except KeyError:
        raise ValueError(f"unknown integrator {model.num.integrator!r}") from None
    u0 = sys.fields()
    e0 = sys.ev if sys.ev is not None else evaluate(model, *u0)
    u, ev = u0, e0
    for a, b in stages:
        tend = (ev.dzeta, ev.dq, ev.dpsi, ev.dgamma)
        u = tuple(a * x0 + b * (x + dt * f) for x0, x, f in zip(u0, u, tend))
        u = _filter(model, *u)
        tube_check(u[3], model.curve.r0, model.num.eta0)
        ev = evaluate(model, *u, ev.interior.phi, ev.op)
    z2, q2, p2, g2 = u
    # trapezoidal accumulation of the boundary trace of d_t^phi zeta
    tr0 = _trace_density(model, e0, sys.ext)
    tr2 = _trace_density(model, ev, ExteriorState(z2, q2))
    return SystemState(
        z2, q2, p2, g2, sys.t + dt, sys.step + 1, ev,
        e0.dzeta, np.stack(velocity_tendency(sys.q, e0.dq, e0.d)), e0.dgamma, e0.interior.phi, dt,
        sys.trace_int + 0.5 * dt * (tr0 + tr2), sys.config_text,
    )


def _trace_density(model: Model, ev: Evaluation, ext: ExteriorState) -> float:
    """|d_t zeta - d_t phi . nabla^phi zeta|^2 integrated over the curve."""
    zr = model.ops.Dr_wall(ext.zeta)
    chk = ev.dzeta[0] - ev.d.g_t[0] * zr / ev.d.a[0]
    return float(np.sum(chk**2) * model.curve.ds)


def run(model: Model, sys: SystemState, T: float, callback=None, max_steps: int | None = None) -> SystemState:
    """Advance to time T with CFL-limited steps; ``callback(sys)`` after each step."""
    steps = 0
    while sys.t < T - 1e-14 * max(1.0, T):
        dt = min(cfl_dt(model, sys), T - sys.t)
        sys = advance(model, sys, dt)
        steps += 1
        if callback is not None:
            callback(sys)
        if max_steps is not None and steps >= max_steps:
            break
    return sys


def run_fixed(model: Model, sys: SystemState, dt: float, nsteps: int, callback=None) -> SystemState:
    for _ in range(nsteps):
        sys = advance(model, sys, dt)
        if callback is not None:
            callback(sys)
    return sys


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(path, model: Model, sys: SystemState) -> None:
    """Header (magic, dims, t, step, metadata) then float64 LE blocks, r-major."""
    blocks = [
        ("zeta", sys.zeta), ("q_r", sys.q[0]), ("q_s", sys.q[1]),
        ("psi", sys.psi), ("gamma", sys.gamma),
    ]
    ev = sys.ev
    if ev is not None:
        x0 = ev.x0 if ev.x0 is not None else np.full(ev.interior.phi.shape, np.nan)
        blocks += [("phi_guess", x0), ("pc_gamma", ev.op.pc_gamma)]
    if sys.prev_dzeta is not None:
        blocks += [("prev_dzeta", sys.prev_dzeta), ("prev_dv_n", sys.prev_dv[0]),
                   ("prev_dv_t", sys.prev_dv[1]), ("prev_dgamma", sys.prev_dgamma), ("prev_phi", sys.prev_phi)]
    meta = {
        "fields": [[name, list(np.shape(a))] for name, a in blocks],
        "trace_int": sys.trace_int,
        "prev_dt": sys.prev_dt,
        "config": sys.config_text,
        "eps": model.eps,
    }
    mtext = json.dumps(meta).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IIIqd", model.ops.Nr, model.grid.Nr, model.Ns, sys.step, sys.t))
    buf.write(struct.pack("<I", len(mtext)))
    buf.write(mtext)
    for _, a in blocks:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_checkpoint(path) -> tuple[dict, dict]:
    """(header, arrays) from a checkpoint file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:6] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    off = 6
    Nr, Nri, Ns, step, t = struct.unpack_from("<IIIqd", raw, off)
    off += struct.calcsize("<IIIqd")
    (mlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    meta = json.loads(raw[off:off + mlen].decode())
    off += mlen
    arrays = {}
    for name, shape in meta["fields"]:
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).astype(float)
        off += 8 * n
    header = {"Nr_ext": Nr, "Nr_int": Nri, "Ns": Ns, "step": step, "t": t, **meta}
    return header, arrays


def restore_state(model: Model, header: dict, arrays: dict) -> SystemState:
    """Rebuild a SystemState that continues bit-identically."""
    q = np.stack([arrays["q_r"], arrays["q_s"]])
    prev = None
    if "pc_gamma" in arrays:
        prev = assemble_elliptic(model.grid, ContactLine(arrays["pc_gamma"], model.curve.L), model.eps,
                                 model.obs, model.phys, None, model.num.refactor_tol, model.num.cg_rtol)
    x0 = arrays.get("phi_guess")
    if x0 is not None and np.all(np.isnan(x0)):
        x0 = None
    ev = evaluate(model, arrays["zeta"], q, arrays["psi"], arrays["gamma"], x0, prev)
    pdz = arrays.get("prev_dzeta")
    pdv = None if pdz is None else np.stack([arrays["prev_dv_n"], arrays["prev_dv_t"]])
    return SystemState(arrays["zeta"], q, arrays["psi"], arrays["gamma"], header["t"], header["step"], ev,
                       pdz, pdv, arrays.get("prev_dgamma"), arrays.get("prev_phi"), header.get("prev_dt", 0.0),
                       header.get("trace_int", 0.0), header.get("config", ""))
