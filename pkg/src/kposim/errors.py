"""Exception and warning types shared across the package."""


class SimulationError(Exception):
    """Base class for all kposim errors."""


class ConfigError(SimulationError):
    """Invalid or inconsistent run configuration."""


class NumericalError(SimulationError):
    """A solver failed or produced results outside its validity tolerances."""


class DegenerateSteadyStateError(NumericalError):
    """The Liouvillian zero eigenvalue is not unique within tolerance.

    Carries both candidate eigenvalues so the caller can see how close the
    degeneracy is.
    """

    def __init__(self, lam0, lam1, tol):
        self.lam0 = lam0
        self.lam1 = lam1
        self.tol = tol
        super().__init__(
            f"ambiguous steady state: eigenvalues {lam0} and {lam1} are both "
            f"within {tol} of zero"
        )


class NoSwitchError(SimulationError):
    """No phase switch larger than the detection threshold was found."""


class FitError(SimulationError):
    """Nonlinear fit failed to converge; carries the initial guess and residual."""

    def __init__(self, message, guess=None, residual=None):
        self.guess = guess
        self.residual = residual
        super().__init__(message)


class CalibrationError(SimulationError):
    """Calibration curve violates its invariants (e.g. non-monotone)."""


class ExtrapolationError(SimulationError):
    """Requested value lies outside the calibrated range."""


class ProtocolDegradedError(SimulationError):
    """Too many shots of the measurement protocol failed.

    ``failures`` maps failure kind to count.
    """

    def __init__(self, message, failures=None):
        self.failures = dict(failures or {})
        super().__init__(message)


class TruncationWarning(UserWarning):
    """Fock-space truncation error exceeds the convergence threshold."""


class CoverageWarning(UserWarning):
    """A phase-space grid does not enclose the state's support."""


class ModelViolationWarning(UserWarning):
    """An assumption behind a derived quantity failed beyond tolerance."""
