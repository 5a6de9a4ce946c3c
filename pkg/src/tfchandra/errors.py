"""Exception hierarchy shared by all modules.

The CLI maps ``InvalidArgument`` to exit code 2 and every ``NumericalFailure``
subclass to exit code 3.
"""

from __future__ import annotations


class TFChandraError(Exception):
    """Base class for all package errors."""


class InvalidArgument(TFChandraError, ValueError):
    """Inputs violate a documented precondition."""


class NumericalFailure(TFChandraError, RuntimeError):
    """A solver could not deliver a result with the requested accuracy."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class SolverFailure(NumericalFailure):
    """Shooting/bracketing or descent failed (e.g. bracket lost, step-size failure)."""


class RefinementNeeded(NumericalFailure):
    """The discretisation is too coarse for the requested tolerance."""


class PrecisionError(NumericalFailure):
    """A computed difference is not resolved by the eigensolver accuracy."""


class FitRejected(NumericalFailure):
    """Tail data is non-monotone or changes sign; the cutoffs must be raised."""


class ModelFailure(NumericalFailure):
    """The mean-field model cannot place the requested number of electrons."""
