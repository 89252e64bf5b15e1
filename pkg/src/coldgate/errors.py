"""Exception types shared across the package.

Numerical failures raise subclasses of ColdgateError so callers (and the CLI)
can separate "your input is wrong" from "the computation broke".
"""


class ColdgateError(Exception):
    """Base class for all package errors."""


class DomainError(ColdgateError):
    """Invalid argument or configuration value (caught before computing)."""


class GridMismatchError(DomainError):
    """Two objects that must share a grid do not."""


class StabilityError(ColdgateError):
    """Time step too large for the sampled potential scale."""

    def __init__(self, msg, dt=None, e_max=None):
        super().__init__(msg)
        self.dt = dt
        self.e_max = e_max


class BoundaryContaminationError(ColdgateError):
    """Wavefunction amplitude at the grid edge exceeded tolerance."""


class ConvergenceError(ColdgateError):
    """Eigensolver or optimizer failed to converge; carries diagnostics."""

    def __init__(self, msg, iterations=None, residual=None):
        super().__init__(msg)
        self.iterations = iterations
        self.residual = residual


class ValidityError(ColdgateError):
    """A physical validity condition (e.g. large-detuning ratio) failed."""


class TruncationError(ColdgateError):
    """A truncated sum (thermal average, basis cap) was not converged."""


class BracketError(ColdgateError):
    """Root bracketing for a tuning scan failed to find a sign change.

    ``samples`` holds the (knob value, observable) pairs probed before
    giving up, so the caller can see what the scan actually looked like.
    """

    def __init__(self, msg, samples=None):
        super().__init__(msg)
        self.samples = list(samples) if samples is not None else []
