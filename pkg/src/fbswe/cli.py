"""Command-line driver: configuration, validation, runs, restarts and the identity table.

Configuration files are flat ``section.key = value`` text.  Initial data are
arithmetic expressions in x1, x2 (physical position), r (normal chart
coordinate) and s (arc length along the reference curve).

Exit codes: 0 ok, 2 config, 3 CFL or depth, 4 subcritical, 5 transversality,
6 tube, 7 solver.
"""

from __future__ import annotations

import argparse
import ast
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diagnostics import HEADER, compute_record
from .errors import ConfigInvalid, SolverError
from .exterior import ExteriorState
from .hanzawa import ContactLine, build_diffeo
from .interior import ObstacleSpec
from .params import Numerics, Physics
from .stepper import (
    Model, SystemState, advance, cfl_dt, evaluate, initialize, make_model, read_checkpoint,
    restore_state, save_checkpoint,
)

OUTPUT_ENV = "FBSWE_OUTPUT_DIR"

DEFAULTS: dict[str, object] = {
    "physics.g": 9.81,
    "physics.H0": 1.0,
    "physics.rho": 1000.0,
    "physics.P_atm": 0.0,
    "geometry.R0": 1.0,
    "geometry.r0": 0.5,
    "geometry.R_ext": 3.0,
    "geometry.Nr_int": 24,
    "geometry.Nr_ext": 32,
    "geometry.Ns": 64,
    "obstacle.profile": "paraboloid",
    "obstacle.depth": 0.3,
    "obstacle.waterline": 0.0,
    "obstacle.width": 1.0,
    "obstacle.coeffs": [],
    "initial.zeta": "0.02*exp(-((x1-2)**2 + x2**2)/0.0625)",
    "initial.v1": "0",
    "initial.v2": "0",
    "initial.psi": "0",
    "initial.gamma_cos": [],
    "initial.gamma_sin": [],
    "numerics.cfl": 0.4,
    "numerics.T_end": 1.0,
    "numerics.dt": 0.0,
    "numerics.max_steps": 0,
    "numerics.filter_alpha": 36.0,
    "numerics.filter_order": 8,
    "numerics.eta0": 0.25,
    "numerics.c0": 0.05,
    "numerics.eps": None,
    "numerics.fd_order": 2,
    "numerics.form": "gradient",
    "numerics.outer_bc": "radiation",
    "numerics.freeze_gamma": False,
    "numerics.integrator": "ssprk3",
    "output.dir": "fbswe_out",
    "output.cadence": 1,
    "output.snapshots": False,
}

_CHOICES = {
    "obstacle.profile": ("paraboloid", "radial_polynomial", "gaussian_cap"),
    "numerics.form": ("gradient", "advective"),
    "numerics.outer_bc": ("radiation", "wall"),
    "numerics.integrator": ("ssprk3", "ssprk2"),
    "numerics.fd_order": (2, 4),
}

_FLOAT_KEYS = {k for k, v in DEFAULTS.items() if isinstance(v, float)} | {"numerics.eps"}
_INT_KEYS = {k for k, v in DEFAULTS.items() if isinstance(v, int) and not isinstance(v, bool)}
_BOOL_KEYS = {k for k, v in DEFAULTS.items() if isinstance(v, bool)}
_LIST_KEYS = {k for k, v in DEFAULTS.items() if isinstance(v, list)}
_EXPR_KEYS = {"initial.zeta", "initial.v1", "initial.v2", "initial.psi"}


# --------------------------------------------------------------------------
# expressions
# --------------------------------------------------------------------------

_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log, "sqrt": np.sqrt,
    "tanh": np.tanh, "sinh": np.sinh, "cosh": np.cosh, "abs": np.abs, "atan2": np.arctan2,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_VARS = ("x1", "x2", "r", "s")
_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)


def _check_node(node: ast.AST, src: str) -> None:
    if isinstance(node, ast.Expression):
        _check_node(node.body, src)
    elif isinstance(node, ast.BinOp) and isinstance(node.op, _BINOPS):
        _check_node(node.left, src)
        _check_node(node.right, src)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        _check_node(node.operand, src)
    elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        pass
    elif isinstance(node, ast.Name) and (node.id in _VARS or node.id in _CONSTS):
        pass
    elif isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS \
            and not node.keywords:
        for a in node.args:
            _check_node(a, src)
    else:
        raise ValueError(f"unsupported construct {type(node).__name__} in expression {src!r}")


@dataclass(frozen=True)
class Expression:
    """A whitelisted arithmetic expression over x1, x2, r, s."""

    src: str

    def __post_init__(self):
        try:
            tree = ast.parse(self.src, mode="eval")
        except SyntaxError as exc:
            raise ValueError(f"cannot parse expression {self.src!r}: {exc.msg}") from None
        _check_node(tree, self.src)
        object.__setattr__(self, "_code", compile(tree, "<expr>", "eval"))

    def __call__(self, x1, x2, r, s) -> np.ndarray:
        env = {"x1": x1, "x2": x2, "r": r, "s": s, **_CONSTS, **_FUNCS}
        with np.errstate(all="ignore"):
            val = eval(self._code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(val, dtype=float), np.broadcast(x1, x2, r, s).shape).copy()


# --------------------------------------------------------------------------
# parsing and serialization
# --------------------------------------------------------------------------


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _EXPR_KEYS:
        Expression(raw)
        return raw
    if key in _LIST_KEYS:
        return [float(x) for x in raw.replace("[", "").replace("]", "").split(",") if x.strip()]
    if key in _BOOL_KEYS:
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if key == "numerics.eps" and raw.lower() in ("", "none", "auto"):
        return None
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _INT_KEYS:
        v = float(raw)
        if v != int(v):
            raise ValueError(f"{key}: expected an integer, got {raw!r}")
        return int(v)
    return raw


def parse_config(text: str) -> dict:
    """Parse config text on top of DEFAULTS; raises ConfigInvalid on bad lines."""
    cfg = dict(DEFAULTS)
    errors = []
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, raw = (p.strip() for p in body.split("=", 1))
        if key not in DEFAULTS:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        try:
            cfg[key] = _parse_value(key, raw)
        except ValueError as exc:
            errors.append(f"line {lineno}: {exc}")
    if errors:
        raise ConfigInvalid(errors)
    return cfg


def _format_value(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def serialize_config(cfg: dict) -> str:
    return "".join(f"{k} = {_format_value(cfg[k])}\n" for k in DEFAULTS)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()


# --------------------------------------------------------------------------
# building a run
# --------------------------------------------------------------------------


def physics_from(cfg: dict) -> Physics:
    return Physics(cfg["physics.g"], cfg["physics.H0"], cfg["physics.rho"], cfg["physics.P_atm"])


def numerics_from(cfg: dict) -> Numerics:
    return Numerics(
        cfl=cfg["numerics.cfl"], fd_order=cfg["numerics.fd_order"], filter_alpha=cfg["numerics.filter_alpha"],
        filter_order=cfg["numerics.filter_order"], eta0=cfg["numerics.eta0"], c0=cfg["numerics.c0"],
        eps=cfg["numerics.eps"], form=cfg["numerics.form"], outer_bc=cfg["numerics.outer_bc"],
        freeze_gamma=cfg["numerics.freeze_gamma"], integrator=cfg["numerics.integrator"],
    )


def obstacle_from(cfg: dict) -> ObstacleSpec:
    kind = cfg["obstacle.profile"]
    if kind == "paraboloid":
        return ObstacleSpec.paraboloid(cfg["obstacle.depth"], cfg["geometry.R0"], cfg["obstacle.waterline"])
    if kind == "radial_polynomial":
        return ObstacleSpec.radial_polynomial(cfg["obstacle.coeffs"] or [0.0])
    return ObstacleSpec.gaussian_cap(cfg["obstacle.depth"], cfg["obstacle.width"], cfg["obstacle.waterline"])


def initial_gamma(cfg: dict, Ns: int, L: float) -> np.ndarray:
    s = np.arange(Ns) * L / Ns
    g = np.zeros(Ns)
    for k, c in enumerate(cfg["initial.gamma_cos"]):
        g += c * np.cos(2 * np.pi * k * s / L)
    for k, c in enumerate(cfg["initial.gamma_sin"]):
        g += c * np.sin(2 * np.pi * k * s / L)
    return g


def build_model(cfg: dict, eps: float | None = None) -> Model:
    num = numerics_from(cfg)
    if eps is not None:
        num = Numerics(**{**num.__dict__, "eps": eps})
    Ns = cfg["geometry.Ns"]
    g0 = initial_gamma(cfg, Ns, 2 * np.pi * cfg["geometry.R0"])
    model, _ = make_model(cfg["geometry.R0"], cfg["geometry.R_ext"], cfg["geometry.Nr_ext"],
                          cfg["geometry.Nr_int"], Ns, obstacle_from(cfg), physics_from(cfg), num,
                          cfg["geometry.r0"], g0)
    return model


def initial_fields(cfg: dict, model: Model):
    """(zeta, q, psi, gamma) from the configured expressions."""
    curve = model.curve
    gamma = initial_gamma(cfg, model.Ns, curve.L)
    d = build_diffeo(curve, model.ops.r, ContactLine(gamma, curve.L), model.eps)
    X = d.phi
    r = np.broadcast_to(model.ops.r[:, None], X.shape[:-1])
    s = np.broadcast_to(curve.s[None, :], X.shape[:-1])
    zeta = Expression(cfg["initial.zeta"])(X[..., 0], X[..., 1], r, s)
    v = np.stack([Expression(cfg["initial.v1"])(X[..., 0], X[..., 1], r, s),
                  Expression(cfg["initial.v2"])(X[..., 0], X[..., 1], r, s)], axis=-1)
    vn, vt = d.cartesian_to_frame(v)
    q = ExteriorState.from_velocity(zeta, vn, vt, d).q
    xb = X[0]
    psi = Expression(cfg["initial.psi"])(xb[:, 0], xb[:, 1], np.zeros(model.Ns), curve.s)
    return zeta, q, psi, gamma


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    node: tuple | None = None

    def __str__(self) -> str:
        where = "" if self.node is None else f" at {self.node}"
        return f"[{self.kind}] {self.message}{where}"


def _scalar_checks(cfg: dict) -> list[Violation]:
    out = []

    def need(cond, kind, msg):
        if not cond:
            out.append(Violation(kind, msg))

    need(cfg["physics.g"] > 0, "physics", "g must be positive")
    need(cfg["physics.H0"] > 0, "physics", "H0 must be positive")
    need(cfg["physics.rho"] >= 0, "physics", "rho must be nonnegative")
    R0, r0 = cfg["geometry.R0"], cfg["geometry.r0"]
    need(R0 > 0, "geometry", "R0 must be positive")
    need(r0 > 0 and r0 * (1.0 / R0 if R0 > 0 else np.inf) < 1.0, "geometry",
         f"tube half-width must satisfy 0 < r0 max|kappa| < 1 (r0 = {r0}, R0 = {R0})")
    need(cfg["geometry.R_ext"] > R0 + 0.0, "geometry", "R_ext must exceed R0")
    Ns = cfg["geometry.Ns"]
    need(Ns >= 8 and Ns % 2 == 0, "geometry", "Ns must be even and >= 8")
    need(cfg["geometry.Nr_ext"] >= 8, "geometry", "Nr_ext must be >= 8")
    need(cfg["geometry.Nr_int"] >= 4, "geometry", "Nr_int must be >= 4")
    need(0 < cfg["numerics.cfl"] <= 1.0, "numerics", "cfl must lie in (0, 1]")
    need(cfg["numerics.T_end"] >= 0, "numerics", "T_end must be nonnegative")
    need(cfg["numerics.dt"] >= 0, "numerics", "dt must be nonnegative (0 selects CFL steps)")
    need(0 < cfg["numerics.eta0"] < 1, "numerics", "eta0 must lie in (0, 1)")
    need(cfg["numerics.c0"] > 0, "numerics", "c0 must be positive")
    need(cfg["output.cadence"] >= 1, "output", "cadence must be >= 1")
    for key, allowed in _CHOICES.items():
        need(cfg[key] in allowed, "config", f"{key} must be one of {allowed}")
    for key in _EXPR_KEYS:
        try:
            Expression(cfg[key])
        except ValueError as exc:
            out.append(Violation("config", str(exc)))
    return out


def validate_config(cfg: dict) -> list[Violation]:
    """All violations of the load-time conditions; empty when the config is usable."""
    out = _scalar_checks(cfg)
    if out:
        return out

    # tube containment, before the chart is built from gamma
    Ns, L = cfg["geometry.Ns"], 2 * np.pi * cfg["geometry.R0"]
    gamma = initial_gamma(cfg, Ns, L)
    lim = cfg["numerics.eta0"] * cfg["geometry.r0"]
    j = int(np.argmax(np.abs(gamma)))
    if abs(gamma[j]) > lim:
        return [Violation("tube", f"|gamma0| = {abs(gamma[j]):.4g} exceeds eta0 r0 = {lim:.4g}",
                          (f"s={j * L / Ns:.4g}",))]

    try:
        model = build_model(cfg)
    except (ValueError, SolverError) as exc:
        return [Violation("geometry", f"cannot build grids: {exc}")]
    ph, c0 = model.phys, model.num.c0
    curve = model.curve

    # obstacle depth on the interior chart
    cl = ContactLine(gamma, curve.L)
    di = build_diffeo(curve, model.grid.r, cl, model.eps)
    hw = model.obs.H_w(di.phi, ph.H0)
    if np.min(hw) < c0:
        i, k = np.unravel_index(np.argmin(hw), hw.shape)
        x = di.phi[i, k]
        out.append(Violation("obstacle", f"H_w = {hw[i, k]:.4g} below c0 = {c0}",
                             (f"x1={x[0]:.4g}", f"x2={x[1]:.4g}")))
        return out

    try:
        zeta, q, psi, gamma = initial_fields(cfg, model)
    except (ValueError, FloatingPointError) as exc:
        return [Violation("initial", str(exc))]
    for name, a in (("zeta", zeta), ("velocity", q), ("psi", psi)):
        if not np.all(np.isfinite(a)):
            out.append(Violation("initial", f"{name} has non-finite values"))
    if out:
        return out

    d = build_diffeo(curve, model.ops.r, cl, model.eps)
    h = ph.H0 + zeta
    if np.min(h) <= 0:
        i, k = np.unravel_index(np.argmin(h), h.shape)
        x = d.phi[i, k]
        out.append(Violation("depth", f"h = {h[i, k]:.4g} is not positive", (f"x1={x[0]:.4g}", f"x2={x[1]:.4g}")))
        return out

    # subcriticality with the chart velocity implied by the contact-line equation when available
    dgamma = None
    try:
        ev = evaluate(model, zeta, q, psi, gamma)
        d = ev.d
        dgamma = ev.dgamma
    except SolverError:
        pass
    wn, wt = ExteriorState(zeta, q).w(d)
    margin = ph.g * h - (wn**2 + wt**2)
    if np.min(margin) < 2 * c0:
        i, k = np.unravel_index(np.argmin(margin), margin.shape)
        x = d.phi[i, k]
        out.append(Violation("subcritical", f"g h - |w|^2 = {margin[i, k]:.4g} below 2 c0 = {2 * c0}",
                             (f"x1={x[0]:.4g}", f"x2={x[1]:.4g}")))

    # transversality on the reference curve
    from .contactline import interior_ring_derivative

    zi = model.obs.Z_w(di.phi)
    jump = np.abs(model.ops.Dr_wall(zeta) - interior_ring_derivative(model.grid, zi))
    if np.min(jump) < 2 * c0:
        k = int(np.argmin(jump))
        x = d.phi[0, k]
        out.append(Violation("transversality", f"|N.grad(zeta - zeta_i)| = {jump[k]:.4g} below 2 c0 = {2 * c0}",
                             (f"x1={x[0]:.4g}", f"x2={x[1]:.4g}")))
    if dgamma is None and not out:
        out.append(Violation("solver", "initial evaluation failed"))
    return out


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------


def output_dir(cfg: dict) -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or cfg["output.dir"])


def _versions() -> dict:
    import scipy

    from . import __version__

    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "fbswe": __version__}


class RunWriter:
    """CSV rows, snapshots, checkpoint and manifest under one directory."""

    def __init__(self, out: Path, cfg: dict, append: bool = False):
        self.out = out
        self.cfg = cfg
        out.mkdir(parents=True, exist_ok=True)
        self.csv_path = out / "diagnostics.csv"
        fresh = not (append and self.csv_path.exists())
        self.fh = open(self.csv_path, "w" if fresh else "a")
        if fresh:
            self.fh.write(HEADER + "\n")
        self.cadence = cfg["output.cadence"]
        if cfg["output.snapshots"]:
            (out / "snapshots").mkdir(exist_ok=True)

    def record(self, model: Model, sys: SystemState) -> None:
        if sys.step % self.cadence:
            return
        self.fh.write(compute_record(model, sys).row() + "\n")
        self.fh.flush()
        if self.cfg["output.snapshots"]:
            save_checkpoint(self.out / "snapshots" / f"snap_{sys.step:07d}.bin", model, sys)

    def close(self, model: Model, sys: SystemState, status: str, code: int, wall: float,
                dump: bool = False) -> None:
        self.fh.close()
        name = "dump.bin" if dump else "checkpoint.bin"
        save_checkpoint(self.out / name, model, sys)
        manifest = {
            "status": status, "exit_code": code, "config_hash": config_hash(self.cfg),
            "versions": _versions(), "wall_time_s": wall, "steps": sys.step, "t": sys.t,
            "state_file": name,
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def execute(model: Model, sys: SystemState, cfg: dict, writer: RunWriter, log=print,
            record_initial: bool = True) -> int:
    """Advance to T_end (or max_steps), writing outputs; returns the exit code."""
    T = cfg["numerics.T_end"]
    dt_fixed = cfg["numerics.dt"]
    max_steps = cfg["numerics.max_steps"]
    t0 = time.perf_counter()
    if record_initial:
        writer.record(model, sys)
    try:
        while sys.t < T - 1e-14 * max(1.0, T) and (max_steps <= 0 or sys.step < max_steps):
            dt = dt_fixed if dt_fixed > 0 else cfl_dt(model, sys)
            sys = advance(model, sys, min(dt, T - sys.t))
            writer.record(model, sys)
    except SolverError as exc:
        bad = getattr(exc, "state", sys)
        log(f"fatal: {type(exc).__name__}: {exc}")
        writer.close(model, bad, type(exc).__name__, exc.exit_code, time.perf_counter() - t0, dump=True)
        return exc.exit_code
    writer.close(model, sys, "ok", 0, time.perf_counter() - t0)
    log(f"done: {sys.step} steps, t = {sys.t:.6g}")
    return 0


def cmd_run(path: str, log=print) -> int:
    text = Path(path).read_text()
    cfg = parse_config(text)
    violations = validate_config(cfg)
    if violations:
        raise ConfigInvalid([str(v) for v in violations])
    model = build_model(cfg)
    zeta, q, psi, gamma = initial_fields(cfg, model)
    sys0 = initialize(model, zeta, q, psi, gamma, config_text=serialize_config(cfg))
    out = output_dir(cfg)
    writer = RunWriter(out, cfg)
    (out / "config.txt").write_text(serialize_config(cfg))
    return execute(model, sys0, cfg, writer, log)


def cmd_resume(path: str, T_end: float | None = None, log=print) -> int:
    header, arrays = read_checkpoint(path)
    cfg = parse_config(header["config"])
    if T_end is not None:
        cfg["numerics.T_end"] = float(T_end)
    model = build_model(cfg, eps=header["eps"])
    sys0 = restore_state(model, header, arrays)
    writer = RunWriter(output_dir(cfg), cfg, append=True)
    return execute(model, sys0, cfg, writer, log, record_initial=False)


def cmd_validate(path: str, log=print) -> int:
    cfg = parse_config(Path(path).read_text())
    violations = validate_config(cfg)
    for v in violations:
        log(str(v))
    if violations:
        raise ConfigInvalid([str(v) for v in violations])
    log("ok")
    return 0


def cmd_identities(seed: int = 0, nseeds: int = 20, log=print) -> int:
    from .identity_lab import format_table, run_suite

    results = run_suite(range(seed, seed + nseeds))
    log(format_table(results))
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fbswe", description="Shallow water flow around a fixed partially immersed body.")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a configuration")
    r.add_argument("config")
    v = sub.add_parser("validate", help="check a configuration without running it")
    v.add_argument("config")
    i = sub.add_parser("identities", help="print the identity residual table")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--nseeds", type=int, default=20)
    s = sub.add_parser("resume", help="continue from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--T", type=float, default=None, help="new end time")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.cmd == "run":
            return cmd_run(args.config)
        if args.cmd == "validate":
            return cmd_validate(args.config)
        if args.cmd == "identities":
            return cmd_identities(args.seed, args.nseeds)
        return cmd_resume(args.checkpoint, args.T)
    except ConfigInvalid as exc:
        for v in exc.violations:
            print(f"config: {v}", file=sys.stderr)
        return exc.exit_code
    except SolverError as exc:
        print(f"fatal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
