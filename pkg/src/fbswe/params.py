"""Physical and numerical parameter bundles shared by the solver modules."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Physics:
    g: float = 9.81
    H0: float = 1.0
    rho: float = 1000.0
    P_atm: float = 0.0


@dataclass(frozen=True)
class Numerics:
    cfl: float = 0.4
    fd_order: int = 2
    filter_alpha: float = 36.0
    filter_order: int = 8
    eta0: float = 0.25
    c0: float = 0.05
    eps: float | None = None
    form: str = "gradient"
    outer_bc: str = "radiation"
    freeze_gamma: bool = False
    integrator: str = "ssprk3"
    interior_stretch: float = 3.0
    cg_rtol: float = 1e-12
    refactor_tol: float = 1e-3
