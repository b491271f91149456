"""Exception types raised by the library."""


class ConfigurationError(ValueError):
    """Invalid system configuration (dimensions, variances, energy budget)."""


class DomainError(ValueError):
    """Argument outside the domain where a formula is defined."""


class PilotRankError(ValueError):
    """Fewer training symbols than transmit antennas."""


class FramingError(ValueError):
    """Bit sequence cannot be framed into whole QPSK symbols."""


class NumericalError(ArithmeticError):
    """A matrix that must be positive definite was not."""
