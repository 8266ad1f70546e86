"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Physical or protocol parameters outside their valid domain."""


class InvalidPovmError(ValueError):
    """Estimate variances that do not describe a physical measurement."""


class TruncationError(RuntimeError):
    """A Fock truncation is too small for the requested object.

    ``needed_dim`` is filled in when the required size is known.
    """

    def __init__(self, message, needed_dim=None, **diagnostics):
        super().__init__(message)
        self.needed_dim = needed_dim
        self.diagnostics = diagnostics


class NumericalError(ArithmeticError):
    """An iteration broke down (underflow, non-finite values)."""


class ContractError(RuntimeError):
    """Artifacts produced under incompatible parameters were mixed."""


class RegimeWarning(UserWarning):
    """Parameters outside the regime in which the adiabatic model holds."""
