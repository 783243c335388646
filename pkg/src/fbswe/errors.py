"""Fatal conditions raised by the solver, each keyed to a CLI exit code."""

from __future__ import annotations


class SolverError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 7


class ConfigInvalid(SolverError):
    exit_code = 2

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DepthNonpositive(SolverError):
    exit_code = 3


class CFLViolation(SolverError):
    exit_code = 3


class SubcriticalViolated(SolverError):
    exit_code = 4


class SupercriticalBoundary(SolverError):
    exit_code = 4


class TransversalityLost(SolverError):
    exit_code = 5


class TubeExceeded(SolverError):
    exit_code = 6


class SolveFailed(SolverError):
    exit_code = 7


class JacobianDegenerate(SolverError):
    exit_code = 7


class DegenerateCoefficients(SolverError):
    exit_code = 7


class MissingHistory(SolverError):
    exit_code = 7
