"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ShapeError(ValueError):
    """Matrix or vector arguments have non-conformable shapes."""


class ParameterError(ValueError):
    """A loss or schedule parameter violates its validity range."""


class ContractViolationError(RuntimeError):
    """An undefined component of a loss bundle was reached at evaluation."""


class ConfigError(ValueError):
    """An experiment configuration is malformed or inconsistent."""


class ParseError(ValueError):
    """A data file is malformed; the message carries the offending line."""
