# backend/lib/avgctl_core/errors.py
"""
Exception hierarchy for the averaged-control core.

Every error that describes bad input also derives from ValueError, so callers
that only care about "the input was wrong" can keep catching ValueError.
"""
from typing import Optional


class AvgControlError(Exception):
    """Base class for all errors raised by avgctl_core."""


class DimensionMismatchError(AvgControlError, ValueError):
    """Fields, mixtures, problems or controls disagree on n or m."""


class NonFiniteError(AvgControlError, ValueError):
    """A field, cost or Jacobian produced NaN/inf where a finite value was required."""


class DivergenceError(AvgControlError):
    """A trajectory left the blow-up guard."""

    def __init__(self, time: float, norm: float, guard: float):
        self.time = float(time)
        self.norm = float(norm)
        self.guard = float(guard)
        super().__init__(
            f"trajectory diverged at t={self.time:.6g}: |x|={self.norm:.3g} exceeds guard {self.guard:.3g}"
        )


class EnumerationTooLargeError(AvgControlError, ValueError):
    """brute_force_value was asked to enumerate too many controls."""


class MissingLipschitzError(AvgControlError, ValueError):
    """A bound needs Lipschitz metadata that was not declared."""


class SolverFailure(AvgControlError):
    """Every restart of a solve diverged."""


class ConfigError(AvgControlError, ValueError):
    """Experiment config could not be parsed or validated."""

    def __init__(self, message: str, path: str = "<config>", lineno: Optional[int] = None):
        self.message = message
        self.path = path
        self.lineno = lineno
        where = f"{path}:{lineno}" if lineno is not None else path
        super().__init__(f"{where}: {message}")
