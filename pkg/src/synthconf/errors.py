"""Exception types shared across the package."""

from __future__ import annotations


class SynthConfError(Exception):
    """Base class for domain errors (mapped to exit code 2 by the CLI)."""


class PanelError(SynthConfError, ValueError):
    """Malformed panel, pattern, or CSV content."""


class WeightConstraintError(SynthConfError, ValueError):
    """A weight vector violates the simplex-box constraint set.

    Attributes
    ----------
    constraint : str
        Which constraint failed (``"sum_w"``, ``"nonneg_v"``, ``"cap_w"``, ...).
    excess : float
        Size of the violation, in the units of the constraint.
    """

    def __init__(self, constraint: str, excess: float, message: str | None = None):
        self.constraint = constraint
        self.excess = float(excess)
        super().__init__(message or f"{constraint} violated by {self.excess:.3g}")


class InfeasibleCapError(SynthConfError, ValueError):
    """The l-infinity cap is too tight for weights summing to one."""


class ConvergenceError(SynthConfError, RuntimeError):
    """Iterative solver stopped before reaching its stationarity tolerance."""

    def __init__(self, message: str, last_iterate=None, grad_norm: float = float("nan")):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.grad_norm = grad_norm


class SpecError(SynthConfError, ValueError):
    """Invalid simulation or experiment specification."""
