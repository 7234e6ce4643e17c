"""Exception types raised across the package."""


class SizeError(ValueError):
    """Array length or shape does not satisfy an operation's contract."""


class SingularityError(ArithmeticError):
    """A division or solve hit a (numerically) singular point."""


class DegeneracyError(ArithmeticError):
    """A matrix lost column rank where full rank is required."""


class SymmetryError(ValueError):
    """Input is not Hermitian / skew-symmetric as required."""


class StabilityError(ValueError):
    """A continuous system is not Hurwitz (some Re(a) >= 0)."""


class ConfigError(ValueError):
    """Invalid run configuration or checkpoint/config mismatch."""
