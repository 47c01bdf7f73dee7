"""Exception hierarchy shared by every pdflow module."""


class PdflowError(Exception):
    """Base class for all errors raised by pdflow."""


class ContractError(PdflowError, ValueError):
    """A precondition of an operation was violated (shapes, parameter ranges)."""


class DomainError(PdflowError, ValueError):
    """A time or parameter lies outside the domain of a schedule."""


class NumericError(PdflowError, ArithmeticError):
    """Non-finite values or a numerical routine that failed to converge."""


class CertificateError(PdflowError, ValueError):
    """A supplied KKT certificate does not satisfy the optimality system."""


class FactoryError(PdflowError, ValueError):
    """A test-problem factory could not produce a well-posed instance."""


class InsufficientDataError(PdflowError, ValueError):
    """Too few usable samples for a rate fit.

    ``clamped`` is set when the shortage comes from values that decayed below
    the measurable floor, which callers treat as a pass for upper-bound checks.
    """

    def __init__(self, message, *, usable=0, clamped=False):
        super().__init__(message)
        self.usable = usable
        self.clamped = clamped


class ConfigError(PdflowError, ValueError):
    """A run configuration could not be parsed or validated."""
