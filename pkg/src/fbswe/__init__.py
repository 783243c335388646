"""Shallow water flow around a fixed partially immersed body with a moving contact line."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import SolverError
from .params import Numerics, Physics

__all__ = ["Numerics", "Physics", "SolverError", "__version__"]
