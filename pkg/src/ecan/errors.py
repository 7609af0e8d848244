"""Exception hierarchy shared by every module."""


class ContractError(ValueError):
    """An input violates a documented precondition (shape, range, missing key)."""


class InsufficientDataError(ContractError):
    """Too few samples for the requested estimator."""


class DegenerateInputError(ContractError):
    """Inputs are well-formed but leave nothing to compute."""


class FeatureParseError(ValueError):
    """A feature file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""
